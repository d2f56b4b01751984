#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "foley/dsp/envelope.hpp"

namespace foley::io {

enum class WavEncoding { pcm16, float32 };

// Accepts PCM-16 and IEEE float-32, mono or stereo. PCM-16 decodes as n / 32768.
dsp::Waveform decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const dsp::Waveform& w, WavEncoding encoding = WavEncoding::pcm16);

dsp::Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const dsp::Waveform& w, WavEncoding encoding = WavEncoding::pcm16);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace foley::io
