#include <doctest.h>

#include <cstring>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "ulao/tensor_io.hpp"

using namespace ulao;

namespace {

Tensor random_tensor(std::mt19937& rng, std::vector<std::uint32_t> dims) {
  Tensor t;
  t.dims = std::move(dims);
  std::uniform_real_distribution<float> u(-1e3f, 1e3f);
  t.data.resize(t.numel());
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("encode/decode is bit exact for every rank and special value") {
  std::mt19937 rng(7);
  for (auto dims : std::vector<std::vector<std::uint32_t>>{{}, {5}, {3, 4}, {2, 3, 4}, {0, 6}}) {
    Tensor t = random_tensor(rng, dims);
    if (!t.data.empty()) {
      t.data[0] = std::numeric_limits<float>::denorm_min();
      t.data.back() = -0.0f;
    }
    const auto bytes = encode_tensor(t);
    CHECK(bytes.size() == 12 + 4 * dims.size() + 4 * t.numel());
    CHECK(std::memcmp(bytes.data(), "ULAO", 4) == 0);
    const Tensor back = decode_tensor(bytes);
    REQUIRE(back.dims == t.dims);
    REQUIRE(back.data.size() == t.data.size());
    CHECK(std::memcmp(back.data.data(), t.data.data(), 4 * t.data.size()) == 0);
  }
}

TEST_CASE("header layout is little-endian") {
  Tensor t{{2}, {1.0f, -2.0f}};
  const auto b = encode_tensor(t);
  CHECK(b[4] == 1);  // version
  CHECK(b[8] == 1);  // rank
  CHECK(b[12] == 2);
  // 1.0f = 0x3f800000
  CHECK(b[16] == 0x00);
  CHECK(b[19] == 0x3f);
}

TEST_CASE("file round trip and error paths") {
  const auto dir = testing::scratch("tensor_io");
  std::mt19937 rng(1);
  const Tensor t = random_tensor(rng, {4, 3});
  write_tensor(dir / "a.ulao", t);
  CHECK(read_tensor(dir / "a.ulao") == t);

  CHECK_THROWS_AS(read_tensor(dir / "missing.ulao"), DataError);

  auto bytes = encode_tensor(t);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_tensor(bad), doctest::Contains("magic"), DataError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_WITH_AS(decode_tensor(bad), doctest::Contains("version"), DataError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_tensor(bad), DataError);
  CHECK_THROWS_AS(decode_tensor(std::vector<std::uint8_t>{'U', 'L'}), DataError);
}

TEST_CASE("Eigen bridges keep row-major order") {
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Tensor t = to_tensor(m);
  CHECK(t.dims == std::vector<std::uint32_t>{2, 3});
  CHECK(t.data == std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(tensor_to_mat(t) == m);
  Vec v(3);
  v << 0.5, -1, 2;
  CHECK(tensor_to_vec(to_tensor(v)) == v);
  CHECK_THROWS_AS(tensor_to_vec(t), DataError);
}
