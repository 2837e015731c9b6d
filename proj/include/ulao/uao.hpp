#pragma once

#include <vector>

#include "ulao/common.hpp"
#include "ulao/data.hpp"
#include "ulao/encoders.hpp"

namespace ulao {

// Single-layer multi-head attention with one learnable probe query attending over
// the visual tokens. Per head i: q_i = Wq_i query, k_t = Wk_i x_t, v_t = Wv_i x_t;
// out = Wo [softmax_t(q_i . k_t / sqrt(dk)) v_t]_i + bo.
struct AttentionHead {
  int heads = 1;
  Vec query;  // d
  Mat wq;     // heads*dk x d
  Mat wk;     // heads*dk x d_v
  Mat wv;     // heads*dk x d_v
  Mat wo;     // d x heads*dk
  Vec bo;     // d

  int head_dim() const { return static_cast<int>(wq.rows()) / heads; }
};

struct AttentionCache {
  Vec q;        // heads*dk
  Mat keys;     // T x heads*dk
  Mat values;   // T x heads*dk
  Mat weights;  // heads x T
  Vec concat;   // heads*dk
};

Vec attend(const AttentionHead& head, const Mat& tokens, AttentionCache* cache = nullptr);
void attend_backward(const AttentionHead& head, const Mat& tokens, const AttentionCache& cache, const Vec& g_out,
                     AttentionHead& grad);

struct Temperature {
  double value = 0.01;
  explicit Temperature(double tau);
};

struct PrimitiveDistribution {
  std::vector<double> prob;
  std::vector<double> logp;

  static PrimitiveDistribution from_logits(std::span<const double> logits);
  std::size_t size() const { return prob.size(); }
};

// Normalized-cosine softmax over the given text representations (one per row).
PrimitiveDistribution object_probs(const Vec& v_o, const Mat& object_reps, Temperature tau);
PrimitiveDistribution attribute_probs(const Vec& v_a, const Mat& attribute_reps, Temperature tau);

struct HintConfig {
  int k = 3;
  double r_k = 0.5;
  bool renormalize = false;
};

struct ObjectHint {
  Vec e3_prime;
  std::vector<int> top;         // selected objects, most probable first
  std::vector<double> weights;  // blend weight per selected object
};

// Indices of the k largest entries; ties go to the lower index.
std::vector<int> top_k(std::span<const double> p, int k);

// e3' = (1 - r_k) e3 + r_k * sum_{i in top-k} p_i w_o[i]. The caller treats the
// result as a constant (no gradient reaches p_o or w_o through it).
ObjectHint blend_object_hint(const PrimitiveDistribution& p_o, const Mat& w_o, const Vec& e3, const HintConfig& cfg);

// -mean_x [log p(a|x) + log p(o|x) + r_ao log(p(a|x) p(o|x))]
double uao_loss(const std::vector<PrimitiveDistribution>& p_a, const std::vector<PrimitiveDistribution>& p_o,
                const std::vector<Composition>& labels, double r_ao);

}  // namespace ulao
