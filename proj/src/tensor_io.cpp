#include "ulao/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ulao {
namespace {

constexpr char kMagic[4] = {'U', 'L', 'A', 'O'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + 4 > b.size()) throw DataError("tensor: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.numel() != t.data.size()) throw DataError("tensor: payload size does not match dims");
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * t.dims.size() + 4 * t.data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kTensorVersion);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("tensor: bad magic");
  }
  std::size_t pos = 4;
  const auto version = get_u32(bytes, pos);
  if (version != kTensorVersion) throw DataError("tensor: unsupported version " + std::to_string(version));
  const auto rank = get_u32(bytes, pos);
  Tensor t;
  t.dims.resize(rank);
  for (auto& d : t.dims) d = get_u32(bytes, pos);
  const std::size_t n = t.numel();
  if (bytes.size() - pos != 4 * n) throw DataError("tensor: payload length mismatch");
  t.data.resize(n);
  for (auto& f : t.data) f = std::bit_cast<float>(get_u32(bytes, pos));
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("short write to " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor to_tensor(const Mat& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  return t;
}

Tensor to_tensor(const Vec& v) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.data.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v(i)));
  return t;
}

Mat tensor_to_mat(const Tensor& t) {
  if (t.dims.size() != 2) throw DataError("tensor: expected rank 2, got rank " + std::to_string(t.dims.size()));
  Mat m(t.dims[0], t.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[k++];
  return m;
}

Vec tensor_to_vec(const Tensor& t) {
  if (t.dims.size() != 1) throw DataError("tensor: expected rank 1, got rank " + std::to_string(t.dims.size()));
  Vec v(t.dims[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.data[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace ulao
