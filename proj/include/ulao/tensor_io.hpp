#pragma once

// Binary tensor container shared by datasets, encoder weights and checkpoints.
//
// Layout (little-endian):
//   bytes 0..3   magic "ULAO"
//   u32          version (= 1)
//   u32          rank
//   u32[rank]    dims
//   f32[...]     payload, row-major

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ulao/common.hpp"

namespace ulao {

inline constexpr std::uint32_t kTensorVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const;
  bool operator==(const Tensor&) const = default;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Eigen bridges. Vectors are stored as rank-1 tensors, matrices as rank-2 (row-major on disk).
Tensor to_tensor(const Mat& m);
Tensor to_tensor(const Vec& v);
Mat tensor_to_mat(const Tensor& t);
Vec tensor_to_vec(const Tensor& t);

}  // namespace ulao
