#include "foley/io/envelope_json.hpp"

#include <fstream>

#include "foley/error.hpp"

namespace foley::io {

json envelope_to_json(const dsp::Envelope& e) {
  return json{{"hop", e.hop}, {"source_sample_rate", e.source_sample_rate}, {"values", e.values}};
}

dsp::Envelope envelope_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("envelope must be a JSON object");
  if (!j.contains("values") || !j["values"].is_array()) throw ValidationError("envelope needs a \"values\" array");
  dsp::Envelope e;
  e.hop = j.value("hop", std::size_t{1});
  e.source_sample_rate = j.value("source_sample_rate", std::size_t{1});
  const auto& values = j["values"];
  e.values.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].is_number()) throw ValidationError("envelope value " + std::to_string(i) + " is not a number");
    e.values.push_back(values[i].get<double>());
  }
  if (e.values.empty()) throw ValidationError("envelope is empty");
  if (auto bad = dsp::first_out_of_range(e.values))
    throw ValidationError("envelope value at index " + std::to_string(*bad) + " is outside [0, 1]");
  if (e.hop == 0 || e.source_sample_rate == 0) throw ValidationError("hop and source_sample_rate must be positive");
  return e;
}

json quantized_to_json(const dsp::QuantizedEnvelope& q, const dsp::Envelope& expanded) {
  json j = envelope_to_json(expanded);
  j["num_classes"] = q.num_classes;
  j["classes"] = q.classes;
  return j;
}

bool is_quantized_json(const json& j) { return j.is_object() && j.contains("classes"); }

dsp::QuantizedEnvelope quantized_from_json(const json& j) {
  if (!is_quantized_json(j)) throw ValidationError("quantized envelope needs a \"classes\" array");
  dsp::QuantizedEnvelope q;
  q.num_classes = j.value("num_classes", std::size_t{64});
  q.hop = j.value("hop", std::size_t{1});
  q.source_sample_rate = j.value("source_sample_rate", std::size_t{1});
  q.classes = j["classes"].get<std::vector<int>>();
  for (std::size_t i = 0; i < q.classes.size(); ++i)
    if (q.classes[i] < 0 || static_cast<std::size_t>(q.classes[i]) >= q.num_classes)
      throw ValidationError("class at index " + std::to_string(i) + " out of range");
  return q;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

dsp::Envelope read_envelope(const std::filesystem::path& path) { return envelope_from_json(read_json(path)); }

void write_envelope(const std::filesystem::path& path, const dsp::Envelope& e) {
  write_json(path, envelope_to_json(e));
}

json rms_config_to_json(const dsp::RmsConfig& c) {
  return {{"window", c.window}, {"hop", c.hop}, {"smoothing_kernel", c.smoothing_kernel},
          {"num_classes", c.num_classes}, {"mu", c.mu}};
}

dsp::RmsConfig rms_config_from_json(const json& j, dsp::RmsConfig base) {
  base.window = j.value("window", base.window);
  base.hop = j.value("hop", base.hop);
  base.smoothing_kernel = j.value("smoothing_kernel", base.smoothing_kernel);
  base.num_classes = j.value("num_classes", base.num_classes);
  base.mu = j.value("mu", base.mu);
  base.validate();
  return base;
}

}  // namespace foley::io
