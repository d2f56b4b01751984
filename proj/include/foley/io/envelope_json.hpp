#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "foley/dsp/envelope.hpp"

namespace foley::io {

using nlohmann::json;

json envelope_to_json(const dsp::Envelope& e);
// Validates values into [0,1]; throws ValidationError naming the first bad index.
dsp::Envelope envelope_from_json(const json& j);

// Quantized files also carry the expanded values so any envelope reader can consume them.
json quantized_to_json(const dsp::QuantizedEnvelope& q, const dsp::Envelope& expanded);
dsp::QuantizedEnvelope quantized_from_json(const json& j);
bool is_quantized_json(const json& j);

json rms_config_to_json(const dsp::RmsConfig& c);
// Missing keys keep the defaults of `base`.
dsp::RmsConfig rms_config_from_json(const json& j, dsp::RmsConfig base = {});

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

dsp::Envelope read_envelope(const std::filesystem::path& path);
void write_envelope(const std::filesystem::path& path, const dsp::Envelope& e);

}  // namespace foley::io
