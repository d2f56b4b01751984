#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace foley::io {

struct ManifestEntry {
  std::string id;
  double start = 0.0;
  double end = 0.0;
  std::string audio_path;
  std::string feature_path;
  // Extra per-clip fields used by the toy dataset.
  std::string envelope_path;
  int label = -1;
};

struct ClipName {
  std::string id;
  double start = 0.0;
  double end = 0.0;
};

// "ID_start_end[.ext]": the last two underscore-separated fields are numbers,
// everything before them is the id (which may contain underscores).
std::optional<ClipName> parse_clip_name(std::string_view filename);

// JSON-lines, one object per clip. id/start/end come from explicit keys or
// from the "name" / audio filename pattern. Relative paths resolve against the
// manifest's directory.
std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest_text(std::string_view text, const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace foley::io
