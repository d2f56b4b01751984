#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace foley::io {

// On-disk layout: "FTNS1", u8 dtype, u32 ndim, ndim x u64 dims, row-major payload.
// All little-endian.
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct TensorData {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::size_t numel() const;
};

std::vector<std::uint8_t> encode_tensor(const TensorData& t, DType dtype = DType::f32);
TensorData decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const TensorData& t, DType dtype = DType::f32);
TensorData read_tensor(const std::filesystem::path& path);

}  // namespace foley::io
