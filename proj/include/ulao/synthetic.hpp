#pragma once

#include <cstdint>

#include "ulao/data.hpp"

namespace ulao {

// Planted compositional world: object prototypes, object-conditioned attribute
// directions, a multiplicative binding term, and optional confuser tokens that
// render a second object with a different attribute.
struct SyntheticConfig {
  int n_attr = 6;
  int n_obj = 6;
  int d_latent = 16;
  int tokens = 4;
  // Fraction of the pairs left after reserving the unseen set that become seen.
  double seen_density = 0.5;
  int unseen_count = 9;
  int samples_per_pair = 20;
  double noise_sigma = 0.3;
  double distractor_rate = 0.0;
  double distractor_strength = 1.0;
  double contextuality = 0.5;
  double binding = 1.0;
  double object_scale = 1.0;  // prototype norm relative to attribute directions
  double train_fraction = 0.6;    // of each seen pair's samples
  double val_fraction = 0.2;      // of each seen pair's samples
  double unseen_val_fraction = 0.4;
  std::uint64_t seed = 0;

  void check() const;  // ConfigError on out-of-range values
};

struct SyntheticWorld {
  Mat object_proto;          // n_obj x d_latent
  Mat attr_base;             // n_attr x d_latent
  std::vector<Mat> attr_dir; // per attribute: n_obj x d_latent, row o = rendering of a on o
  double binding = 1.0;

  Vec render(Composition c) const;
};

SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg);

// Pure function of cfg. Throws DataError when the requested split is infeasible.
Dataset generate_synthetic(const SyntheticConfig& cfg);

}  // namespace ulao
