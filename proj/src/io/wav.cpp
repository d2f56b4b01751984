#include "foley/io/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "foley/error.hpp"

namespace foley::io {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

  std::string tag(const char* what) {
    need(4, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return s;
  }

  void seek(std::size_t p) { pos_ = p; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

dsp::Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.tag("RIFF header") != "RIFF") throw FormatError("missing RIFF tag", 0);
  const std::uint32_t riff_size = r.u32("RIFF size");
  if (r.tag("WAVE tag") != "WAVE") throw FormatError("missing WAVE tag", 8);
  // Chunks may not extend past the declared RIFF body.
  const std::size_t riff_end = std::min<std::size_t>(bytes.size(), 8 + static_cast<std::size_t>(riff_size));

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_offset = 0, data_size = 0;
  bool have_data = false;

  while (r.pos() + 8 <= riff_end && !have_data) {
    const std::size_t chunk_start = r.pos();
    const std::string id = r.tag("chunk id");
    const std::uint32_t size = r.u32("chunk size");
    const std::size_t body = r.pos();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too small", chunk_start);
      if (body + size > riff_end) throw FormatError("fmt chunk exceeds file", chunk_start);
      format = r.u16("format tag");
      channels = r.u16("channel count");
      rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      bits = r.u16("bits per sample");
      if (format == kFormatExtensible) {
        if (size < 40) throw FormatError("extensible fmt chunk too small", chunk_start);
        r.u16("cbSize");
        r.u16("valid bits");
        r.u32("channel mask");
        format = r.u16("sub-format");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", chunk_start);
      if (body + size > riff_end)
        throw FormatError("data chunk declares " + std::to_string(size) + " bytes but only " +
                              std::to_string(riff_end - body) + " remain",
                          chunk_start);
      data_offset = body;
      data_size = size;
      have_data = true;
    }
    r.seek(body + size + (size & 1));
  }
  if (!have_fmt) throw FormatError("no fmt chunk", r.pos());
  if (!have_data) throw FormatError("no data chunk", r.pos());

  if (format != kFormatPcm && format != kFormatFloat)
    throw Unsupported("unsupported WAV format tag " + std::to_string(format));
  if ((format == kFormatPcm && bits != 16) || (format == kFormatFloat && bits != 32))
    throw Unsupported("unsupported bit depth " + std::to_string(bits));
  if (channels < 1 || channels > 2) throw Unsupported("unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw FormatError("zero sample rate", 24);

  const std::size_t sample_bytes = bits / 8;
  const std::size_t frame_bytes = sample_bytes * channels;
  const std::size_t frames = data_size / frame_bytes;

  dsp::Waveform w;
  w.sample_rate = rate;
  w.channels.assign(channels, std::vector<double>(frames));
  const std::uint8_t* p = bytes.data() + data_offset;
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* s = p + i * frame_bytes + c * sample_bytes;
      if (format == kFormatPcm) {
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(s[0] | (s[1] << 8)));
        w.channels[c][i] = static_cast<double>(v) / 32768.0;
      } else {
        const std::uint32_t u = static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
                                (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
        w.channels[c][i] = static_cast<double>(std::bit_cast<float>(u));
      }
    }
  }
  return w;
}

std::vector<std::uint8_t> encode_wav(const dsp::Waveform& w, WavEncoding encoding) {
  w.validate();
  const std::uint16_t channels = static_cast<std::uint16_t>(w.num_channels());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.num_frames() * block);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate * block));
  put_u16(out, block);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (std::size_t i = 0; i < w.num_frames(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = w.channels[c][i];
      if (encoding == WavEncoding::pcm16) {
        const double scaled = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
        const auto s = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        put_u16(out, static_cast<std::uint16_t>(s));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  if (data_size & 1) out.push_back(0);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

dsp::Waveform read_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path)); }

void write_wav(const std::filesystem::path& path, const dsp::Waveform& w, WavEncoding encoding) {
  write_file_bytes(path, encode_wav(w, encoding));
}

}  // namespace foley::io
