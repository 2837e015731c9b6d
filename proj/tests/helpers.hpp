#pragma once

// Small models and datasets shared by the unit tests and the acceptance runner.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "ulao/synthetic.hpp"
#include "ulao/training.hpp"

namespace ulao::testing {

inline SyntheticConfig tiny_synthetic(std::uint64_t seed = 0) {
  SyntheticConfig sc;
  sc.n_attr = 5;
  sc.n_obj = 4;
  sc.d_latent = 8;
  sc.tokens = 4;
  sc.unseen_count = 4;
  sc.samples_per_pair = 3;
  sc.distractor_rate = 0.5;
  sc.seed = seed;
  return sc;
}

inline ModelDims tiny_dims(const Dataset& ds, int d = 8) {
  ModelDims md;
  md.enc.d_in = ds.shape.cols;
  md.enc.d_v = d;
  md.enc.d = d;
  md.enc.d_e = d;
  md.enc.tokens = ds.shape.rows;
  md.mixer_hidden = 8;
  return md;
}

inline FrozenEncoderSpec spec_for(const ModelDims& md, std::uint64_t seed = 3) {
  FrozenEncoderSpec spec;
  spec.seed = seed;
  spec.dims = md.enc;
  return spec;
}

// Fresh model with the zero-initialized last mixer layer randomized, so that
// every parameter group carries a non-trivial gradient.
inline ModelState tiny_model(const Dataset& ds, Hyperparams hp, std::uint64_t seed = 0) {
  hp.seed = seed;
  const ModelDims md = tiny_dims(ds);
  ModelState s = init_model(ds.vocab, md, spec_for(md), hp);
  std::mt19937_64 rng(seed + 101);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (Eigen::Index i = 0; i < s.params.mixer.w4.size(); ++i) s.params.mixer.w4.data()[i] = nd(rng);
  return s;
}

// Planted dataset of the ablation criteria. The counts are fixed by the
// criteria; latent width, object scale and binding are generator choices.
inline SyntheticConfig planted_synthetic(std::uint64_t seed) {
  SyntheticConfig sc;
  sc.n_attr = 8;
  sc.n_obj = 8;
  sc.seen_density = 0.5;
  sc.unseen_count = 40;
  sc.contextuality = 0.6;
  sc.distractor_rate = 0.5;
  sc.samples_per_pair = 50;
  sc.d_latent = 32;
  sc.tokens = 4;
  sc.noise_sigma = 0.3;
  sc.binding = 0.0;
  sc.object_scale = 2.0;
  sc.seed = seed;
  return sc;
}

inline Hyperparams planted_hparams(Variant v, std::uint64_t seed) {
  Hyperparams hp;
  hp.apply_variant(v);
  hp.seed = seed;
  hp.tau = 0.05;
  hp.lr = 1e-2;
  hp.epochs = 10;
  hp.batch_size = 32;
  hp.k = 3;
  hp.r_k = 0.8;
  hp.r_c = 0.3;
  hp.up_default = 1.0;
  return hp;
}

inline ModelState planted_model(const Dataset& ds, const Hyperparams& hp, std::uint64_t seed) {
  ModelDims md;
  md.enc.d_in = ds.shape.cols;
  md.enc.d_v = 32;
  md.enc.d = 32;
  md.enc.d_e = 32;
  md.enc.tokens = ds.shape.rows;
  md.mixer_hidden = 32;
  return init_model(ds.vocab, md, spec_for(md, seed), hp);
}

inline Batch first_batch(const Dataset& ds, std::size_t n, std::size_t stride = 3) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) b.push_back(&ds.train[(i * stride) % ds.train.size()]);
  return b;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Byte-level comparison of two directory trees.
inline bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++n;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
  }
  std::size_t m = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file();
  return n == m;
}

inline std::filesystem::path scratch(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(ULAO_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ulao::testing
