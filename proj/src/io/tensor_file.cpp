#include "foley/io/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <string>

#include "foley/error.hpp"
#include "foley/io/wav.hpp"

namespace foley::io {

namespace {

constexpr char kMagic[5] = {'F', 'T', 'N', 'S', '1'};
constexpr std::size_t kHeaderFixed = 5 + 1 + 4;
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | p[i]);
  return v;
}

}  // namespace

std::size_t TensorData::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<std::uint8_t> encode_tensor(const TensorData& t, DType dtype) {
  if (t.numel() != t.values.size())
    throw InvalidInput("tensor has " + std::to_string(t.values.size()) + " values but dims need " +
                       std::to_string(t.numel()));
  std::vector<std::uint8_t> out(kMagic, kMagic + 5);
  out.push_back(static_cast<std::uint8_t>(dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  const std::size_t width = dtype == DType::f32 ? 4 : 8;
  out.reserve(out.size() + width * t.values.size());
  for (double v : t.values) {
    if (dtype == DType::f32)
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorData decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderFixed) throw FormatError("tensor header truncated", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 5) != 0) throw FormatError("bad tensor magic", 0);
  const std::uint8_t code = bytes[5];
  if (code != static_cast<std::uint8_t>(DType::f32) && code != static_cast<std::uint8_t>(DType::f64))
    throw Unsupported("unsupported tensor dtype code " + std::to_string(code));
  const std::size_t width = code == 1 ? 4 : 8;
  const std::uint32_t ndim = get_le<std::uint32_t>(bytes.data() + 6);
  if (ndim > kMaxRank) throw FormatError("tensor rank " + std::to_string(ndim) + " exceeds limit", 6);
  std::size_t pos = kHeaderFixed;
  if (bytes.size() < pos + 8 * static_cast<std::size_t>(ndim)) throw FormatError("tensor dims truncated", bytes.size());

  TensorData t;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = get_le<std::uint64_t>(bytes.data() + pos);
    if (d != 0 && count > std::numeric_limits<std::size_t>::max() / width / d)
      throw FormatError("tensor dims overflow", pos);
    count *= static_cast<std::size_t>(d);
    t.dims.push_back(d);
    pos += 8;
  }
  const std::size_t expected = count * width;
  const std::size_t actual = bytes.size() - pos;
  if (actual != expected)
    throw FormatError("tensor payload expected " + std::to_string(expected) + " bytes, got " + std::to_string(actual),
                      pos);
  t.values.resize(count);
  const std::uint8_t* p = bytes.data() + pos;
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 4)
      t.values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
    else
      t.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const TensorData& t, DType dtype) {
  write_file_bytes(path, encode_tensor(t, dtype));
}

TensorData read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

}  // namespace foley::io
