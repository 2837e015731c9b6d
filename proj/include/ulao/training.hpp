#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ulao/data.hpp"
#include "ulao/model.hpp"

namespace ulao {

using Batch = std::vector<const Sample*>;

// Text representations shared by every sample in a batch (or an evaluation pass).
struct TextReps {
  Mat objects;         // n_obj x d, tanh outputs
  Mat attr_base_z;     // n_attr x d, pre-activation without the hint slot
  std::vector<Composition> candidates;
  Mat compositions;    // |candidates| x d
  Mat comp_z;          // pre-activations, for the backward pass
  Mat objects_z;
};

TextReps compute_text_reps(const ModelState& s, std::vector<Composition> candidates);

// Attribute text representations for one hint vector: tanh(attr_base_z + w_4 W e3').
Mat attribute_reps(const ModelState& s, const TextReps& reps, const Vec& e3_prime);

struct SampleOutputs {
  VisualTokens visual;
  Vec v_a;
  Vec v_o;
  Vec v_mix;  // v'_c
  std::optional<PrimitiveDistribution> p_a;
  std::optional<PrimitiveDistribution> p_o;
  std::optional<ObjectHint> hint;
  std::vector<double> comp_scores;  // over reps.candidates
};

// Forward pass for one sample; hint = nullopt computes the object hint from the current state.
SampleOutputs forward_sample(const ModelState& s, const TextReps& reps, const Sample& x,
                             const std::optional<ObjectHint>& hint = std::nullopt);

// alpha * softmax(scores) + (1 - alpha) * renormalized p(a)p(o) over the candidates.
std::vector<double> fuse_predictions(std::span<const double> p_comp, const PrimitiveDistribution* p_a,
                                     const PrimitiveDistribution* p_o, double alpha,
                                     std::span<const Composition> candidates);

// -mean log p_fused(gt)
double combined_loss(const std::vector<std::vector<double>>& fused, const std::vector<std::size_t>& gt_columns);

struct LossTermMask {
  bool attr_ce = true;
  bool obj_ce = true;
  bool uao_product = true;
  bool comp_ce = true;
  bool contrastive = true;
  bool combined = true;

  static LossTermMask only_attr_ce() { return {true, false, false, false, false, false}; }
};

struct LossBreakdown {
  double total = 0.0;
  double uao = 0.0;
  double lao = 0.0;
  double combined = 0.0;
  double comp_ce = 0.0;
  double contrastive = 0.0;
  double attr_ce = 0.0;
  double obj_ce = 0.0;
};

// Discrete or detached decisions taken at the current parameters: object hints
// and negative sets. Re-using a plan holds them fixed (finite-difference checks).
struct StepPlan {
  std::vector<std::optional<ObjectHint>> hints;
  std::vector<NegativeSet> negatives;
};

struct LossResult {
  LossBreakdown loss;
  std::optional<Params> grad;
  StepPlan plan;
  // (s_gt - s_neg) per negative composition, from this forward pass.
  std::map<Composition, std::vector<double>> diffs;
};

struct LossOptions {
  bool compute_grad = true;
  LossTermMask mask;
  const StepPlan* plan = nullptr;
  std::mt19937_64* rng = nullptr;  // random negatives
};

// Total objective (UAO + LAO + combined) on a batch of seen-label samples, and
// gradients for every learnable tensor. Thresholds are constants within the call.
LossResult total_loss(const ModelState& s, const Batch& batch, const CompositionSpace& space,
                      const LossOptions& opt = {});

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  std::map<std::string, double> grad_norms;  // active groups only
  std::vector<std::pair<Composition, double>> thresholds;  // keys updated this step, new th
};

// forward -> losses -> record differences -> Adam update -> threshold update.
StepRecord train_step(ModelState& s, const Batch& batch, const CompositionSpace& space, std::mt19937_64& rng);

void adam_update(ModelState& s, const Params& grad);

struct GradGroupReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  bool active = true;
  bool pass = true;
};

struct GradReport {
  std::vector<GradGroupReport> groups;
  double hint_path_max_grad = 0.0;  // attribute-CE gradient w.r.t. w_o and object attention
  bool frozen_unchanged = true;
  bool pass = true;

  const GradGroupReport* find(std::string_view name) const;
};

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  // Fault injection: scale the analytic gradient of one group before comparing.
  std::string corrupt_group;
  double corrupt_factor = 1.0;
};

GradReport gradient_check(const ModelState& s, const Batch& batch, const CompositionSpace& space,
                          const GradCheckOptions& opt = {});

struct EpochRecord {
  int epoch = 0;
  double val_auc = 0.0;
  double val_hm = 0.0;
  double mean_loss = 0.0;
};

struct History {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
};

struct FitResult {
  ModelState best;
  ModelState final;
  History history;
};

FitResult fit(const Dataset& ds, ModelState init);

}  // namespace ulao
