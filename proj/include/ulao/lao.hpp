#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "ulao/common.hpp"
#include "ulao/data.hpp"
#include "ulao/uao.hpp"

namespace ulao {

// Four fully connected layers, tanh between them, linear output:
// f_m(v_a, v_o) = W4 tanh(W3 tanh(W2 tanh(W1 [v_a; v_o] + b1) + b2) + b3) + b4
struct MixerParams {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
  Mat w3;
  Vec b3;
  Mat w4;
  Vec b4;
};

struct MixerCache {
  Vec x0;
  Vec h1;
  Vec h2;
  Vec h3;
};

Vec mixer_forward(const MixerParams& p, const Vec& v_a, const Vec& v_o, MixerCache* cache = nullptr);
// Accumulates parameter gradients into grad and input gradients into g_va / g_vo.
void mixer_backward(const MixerParams& p, const MixerCache& cache, const Vec& g_out, MixerParams& grad, Vec& g_va,
                    Vec& g_vo);

// v'_c = v_c + r_m f_m(v_a, v_o)
Vec mix_composition(const Vec& v_c, const Vec& v_a, const Vec& v_o, const MixerParams& p, double r_m);

// cos(v, t_j) / tau for every row t_j.
std::vector<double> composition_scores(const Vec& v, const Mat& composition_reps, Temperature tau);

// Softmax over exactly the candidates the score row was computed for.
PrimitiveDistribution composition_probs(std::span<const double> scores);

enum class NegativeRole { AttrSwapped, ObjSwapped };

struct Negative {
  Composition comp;
  NegativeRole role;
  bool operator==(const Negative&) const = default;
};

using NegativeSet = std::vector<Negative>;

// Constrained argmax swaps: the attribute-swapped member keeps the label object,
// the object-swapped member keeps the label attribute; both must be seen. Ties go
// to the lower index. A slot with no eligible candidate is omitted.
NegativeSet generate_hard_negatives(Composition label, const PrimitiveDistribution& p_a,
                                    const PrimitiveDistribution& p_o, const CompositionSpace& space);

// Same constraint set, ranked by arbitrary per-primitive scores.
NegativeSet argmax_negatives(Composition label, std::span<const double> attr_score, std::span<const double> obj_score,
                             const CompositionSpace& space);

// Uniform choice among the eligible swaps.
NegativeSet random_negatives(Composition label, const CompositionSpace& space, std::mt19937_64& rng);

enum class ThresholdPolicy { Mean, Max, Fixed };
enum class DeltaPopulation { Contributors, Batch };

struct ThresholdEntry {
  double th = 0.0;
  double up = 1.0;
  std::int64_t last_update_step = -1;
  bool operator==(const ThresholdEntry&) const = default;
};

// Per-negative-composition adaptive margins. Entries are created lazily at the
// policy's initial value (0 for mean/max).
class ThresholdTable {
 public:
  ThresholdTable() = default;
  ThresholdTable(ThresholdPolicy policy, double up_default, double fixed_value = 0.0,
                 std::map<Composition, double> up_overrides = {});

  ThresholdPolicy policy() const { return policy_; }
  double up_default() const { return up_default_; }
  double fixed_value() const { return fixed_value_; }
  const std::map<Composition, double>& up_overrides() const { return up_overrides_; }

  double th(Composition c) const;
  double up(Composition c) const;
  const std::map<Composition, ThresholdEntry>& entries() const { return entries_; }
  void restore(Composition c, ThresholdEntry e) { entries_[c] = e; }

  // diffs[c] holds (s_gt - s_neg) for every sample whose negative set contained c,
  // measured before the optimizer step.
  void update(const std::map<Composition, std::vector<double>>& diffs, std::size_t batch_size, std::int64_t step,
              DeltaPopulation population = DeltaPopulation::Contributors);

  bool operator==(const ThresholdTable&) const = default;

 private:
  double initial(Composition c) const;

  ThresholdPolicy policy_ = ThresholdPolicy::Mean;
  double up_default_ = 1.0;
  double fixed_value_ = 0.0;
  std::map<Composition, double> up_overrides_;
  std::map<Composition, ThresholdEntry> entries_;
};

// sum over negatives of max(0, s_neg - s_gt + th_neg). `candidates` is sorted and
// aligned with `scores`. When g_scores is given, the subgradient is accumulated into it.
double contrastive_loss(std::span<const double> scores, std::span<const Composition> candidates, Composition gt,
                        const NegativeSet& negs, const ThresholdTable& table, std::vector<double>* g_scores = nullptr);

// -mean log p(gt) + r_c * L_cntr
double lao_loss(std::span<const double> gt_log_probs, double contrastive, double r_c);

std::string_view to_string(ThresholdPolicy p);
ThresholdPolicy parse_threshold_policy(std::string_view s);
std::string_view to_string(DeltaPopulation p);
DeltaPopulation parse_delta_population(std::string_view s);

}  // namespace ulao
