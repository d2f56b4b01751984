#include "foley/io/manifest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "foley/error.hpp"

namespace foley::io {

namespace {

std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return p;
  std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).string();
}

}  // namespace

std::optional<ClipName> parse_clip_name(std::string_view filename) {
  const auto slash = filename.find_last_of("/\\");
  if (slash != std::string_view::npos) filename.remove_prefix(slash + 1);
  // Drop a trailing extension only when it is not itself part of a number.
  const auto dot = filename.find_last_of('.');
  if (dot != std::string_view::npos) {
    const auto ext = filename.substr(dot + 1);
    if (!ext.empty() && !parse_number(ext) && ext.find('_') == std::string_view::npos)
      filename = filename.substr(0, dot);
  }
  const auto last = filename.find_last_of('_');
  if (last == std::string_view::npos || last == 0) return std::nullopt;
  const auto prev = filename.find_last_of('_', last - 1);
  if (prev == std::string_view::npos || prev == 0) return std::nullopt;
  const auto start = parse_number(filename.substr(prev + 1, last - prev - 1));
  const auto end = parse_number(filename.substr(last + 1));
  if (!start || !end) return std::nullopt;
  return ClipName{std::string(filename.substr(0, prev)), *start, *end};
}

std::vector<ManifestEntry> parse_manifest_text(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty()) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ValidationError("entry must be a JSON object", line_no);

    ManifestEntry e;
    try {
      e.audio_path = j.value("audio", std::string());
      e.feature_path = j.value("features", std::string());
      e.envelope_path = j.value("envelope", std::string());
      e.label = j.value("label", -1);
      std::optional<ClipName> name;
      if (j.contains("name")) name = parse_clip_name(j["name"].get<std::string>());
      if (!name && !e.audio_path.empty()) name = parse_clip_name(e.audio_path);
      if (j.contains("id"))
        e.id = j["id"].get<std::string>();
      else if (name)
        e.id = name->id;
      else
        throw ValidationError("entry has no id and no ID_start_end name", line_no);
      if (j.contains("start") && j.contains("end")) {
        e.start = j["start"].get<double>();
        e.end = j["end"].get<double>();
      } else if (name) {
        e.start = name->start;
        e.end = name->end;
      } else {
        throw ValidationError("entry has no start/end", line_no);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(std::string("bad field type: ") + ex.what(), line_no);
    }
    if (!(e.start >= 0.0)) throw ValidationError("start must be non-negative", line_no);
    if (!(e.start < e.end)) throw ValidationError("start must be before end", line_no);
    e.audio_path = resolve(e.audio_path, base_dir);
    e.feature_path = resolve(e.feature_path, base_dir);
    e.envelope_path = resolve(e.envelope_path, base_dir);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest_text(ss.str(), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id}, {"start", e.start}, {"end", e.end}};
    if (!e.audio_path.empty()) j["audio"] = e.audio_path;
    if (!e.feature_path.empty()) j["features"] = e.feature_path;
    if (!e.envelope_path.empty()) j["envelope"] = e.envelope_path;
    if (e.label >= 0) j["label"] = e.label;
    out << j.dump() << '\n';
  }
}

}  // namespace foley::io
