#include "ulao/lao.hpp"

#include <algorithm>
#include <cmath>

namespace ulao {
namespace {

Vec tanh_vec(const Vec& x) { return x.array().tanh().matrix(); }
Vec tanh_grad(const Vec& h, const Vec& g) { return g.cwiseProduct((1.0 - h.array().square()).matrix()); }

}  // namespace

Vec mixer_forward(const MixerParams& p, const Vec& v_a, const Vec& v_o, MixerCache* cache) {
  if (v_a.size() + v_o.size() != p.w1.cols()) throw DataError("mixer: input width mismatch");
  MixerCache local;
  MixerCache& c = cache ? *cache : local;
  c.x0.resize(v_a.size() + v_o.size());
  c.x0 << v_a, v_o;
  c.h1 = tanh_vec(p.w1 * c.x0 + p.b1);
  c.h2 = tanh_vec(p.w2 * c.h1 + p.b2);
  c.h3 = tanh_vec(p.w3 * c.h2 + p.b3);
  return p.w4 * c.h3 + p.b4;
}

void mixer_backward(const MixerParams& p, const MixerCache& c, const Vec& g_out, MixerParams& grad, Vec& g_va,
                    Vec& g_vo) {
  grad.w4.noalias() += g_out * c.h3.transpose();
  grad.b4 += g_out;
  const Vec g3 = tanh_grad(c.h3, p.w4.transpose() * g_out);
  grad.w3.noalias() += g3 * c.h2.transpose();
  grad.b3 += g3;
  const Vec g2 = tanh_grad(c.h2, p.w3.transpose() * g3);
  grad.w2.noalias() += g2 * c.h1.transpose();
  grad.b2 += g2;
  const Vec g1 = tanh_grad(c.h1, p.w2.transpose() * g2);
  grad.w1.noalias() += g1 * c.x0.transpose();
  grad.b1 += g1;
  const Vec g0 = p.w1.transpose() * g1;
  g_va += g0.head(g_va.size());
  g_vo += g0.tail(g_vo.size());
}

Vec mix_composition(const Vec& v_c, const Vec& v_a, const Vec& v_o, const MixerParams& p, double r_m) {
  if (v_c.size() != p.w4.rows()) throw DataError("mixer: output width does not match v_c");
  if (r_m == 0.0) return v_c;
  return v_c + r_m * mixer_forward(p, v_a, v_o);
}

std::vector<double> composition_scores(const Vec& v, const Mat& composition_reps, Temperature tau) {
  if (composition_reps.cols() != v.size()) throw DataError("composition reps width mismatch");
  const CosineScores cs = cosine_scores(v, composition_reps);
  std::vector<double> out(static_cast<std::size_t>(cs.cos.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cs.cos(static_cast<Eigen::Index>(i)) / tau.value;
  return out;
}

PrimitiveDistribution composition_probs(std::span<const double> scores) {
  if (scores.empty()) throw DataError("composition_probs: empty candidate set");
  return PrimitiveDistribution::from_logits(scores);
}

NegativeSet argmax_negatives(Composition label, std::span<const double> attr_score, std::span<const double> obj_score,
                             const CompositionSpace& space) {
  NegativeSet out;
  int best_a = -1;
  for (int a = 0; a < space.n_attr(); ++a) {
    if (a == label.attr || !space.is_seen({a, label.obj})) continue;
    if (best_a < 0 || attr_score[a] > attr_score[best_a]) best_a = a;
  }
  if (best_a >= 0) out.push_back({{best_a, label.obj}, NegativeRole::AttrSwapped});
  int best_o = -1;
  for (int o = 0; o < space.n_obj(); ++o) {
    if (o == label.obj || !space.is_seen({label.attr, o})) continue;
    if (best_o < 0 || obj_score[o] > obj_score[best_o]) best_o = o;
  }
  if (best_o >= 0) out.push_back({{label.attr, best_o}, NegativeRole::ObjSwapped});
  return out;
}

NegativeSet generate_hard_negatives(Composition label, const PrimitiveDistribution& p_a,
                                    const PrimitiveDistribution& p_o, const CompositionSpace& space) {
  if (!space.is_seen(label)) throw DataError("hard negatives: label is not a seen composition");
  return argmax_negatives(label, p_a.prob, p_o.prob, space);
}

NegativeSet random_negatives(Composition label, const CompositionSpace& space, std::mt19937_64& rng) {
  NegativeSet out;
  std::vector<int> attrs, objs;
  for (int a = 0; a < space.n_attr(); ++a)
    if (a != label.attr && space.is_seen({a, label.obj})) attrs.push_back(a);
  for (int o = 0; o < space.n_obj(); ++o)
    if (o != label.obj && space.is_seen({label.attr, o})) objs.push_back(o);
  if (!attrs.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, attrs.size() - 1);
    out.push_back({{attrs[pick(rng)], label.obj}, NegativeRole::AttrSwapped});
  }
  if (!objs.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, objs.size() - 1);
    out.push_back({{label.attr, objs[pick(rng)]}, NegativeRole::ObjSwapped});
  }
  return out;
}

ThresholdTable::ThresholdTable(ThresholdPolicy policy, double up_default, double fixed_value,
                               std::map<Composition, double> up_overrides)
    : policy_(policy), up_default_(up_default), fixed_value_(fixed_value), up_overrides_(std::move(up_overrides)) {
  if (!(up_default >= 0.0)) throw ConfigError("threshold upper bound must be >= 0");
  for (const auto& [c, u] : up_overrides_) {
    if (!(u >= 0.0)) throw ConfigError("threshold upper bound override must be >= 0");
  }
  if (fixed_value < 0.0) throw ConfigError("fixed threshold must be >= 0");
}

double ThresholdTable::up(Composition c) const {
  auto it = up_overrides_.find(c);
  return it != up_overrides_.end() ? it->second : up_default_;
}

double ThresholdTable::initial(Composition c) const {
  return policy_ == ThresholdPolicy::Fixed ? std::min(fixed_value_, up(c)) : 0.0;
}

double ThresholdTable::th(Composition c) const {
  auto it = entries_.find(c);
  return it != entries_.end() ? it->second.th : initial(c);
}

void ThresholdTable::update(const std::map<Composition, std::vector<double>>& diffs, std::size_t batch_size,
                            std::int64_t step, DeltaPopulation population) {
  if (policy_ == ThresholdPolicy::Fixed) return;
  for (const auto& [c, values] : diffs) {
    if (values.empty()) continue;
    double delta = 0.0;
    if (policy_ == ThresholdPolicy::Max) {
      delta = *std::max_element(values.begin(), values.end());
    } else {
      double sum = 0.0;
      for (double v : values) sum += v;
      const double denom = population == DeltaPopulation::Batch ? static_cast<double>(std::max<std::size_t>(batch_size, 1))
                                                                 : static_cast<double>(values.size());
      delta = sum / denom;
    }
    auto [it, inserted] = entries_.try_emplace(c, ThresholdEntry{initial(c), up(c), -1});
    auto& e = it->second;
    e.up = up(c);
    e.th = std::min(std::max(e.th, delta), e.up);
    e.last_update_step = step;
  }
}

double contrastive_loss(std::span<const double> scores, std::span<const Composition> candidates, Composition gt,
                        const NegativeSet& negs, const ThresholdTable& table, std::vector<double>* g_scores) {
  if (scores.size() != candidates.size()) throw DataError("contrastive_loss: score row does not match candidates");
  auto column = [&](Composition c) {
    auto it = std::lower_bound(candidates.begin(), candidates.end(), c);
    if (it == candidates.end() || *it != c) throw DataError("contrastive_loss: composition missing from score row");
    return static_cast<std::size_t>(it - candidates.begin());
  };
  if (negs.empty()) return 0.0;
  const std::size_t j_gt = column(gt);
  double loss = 0.0;
  for (const auto& n : negs) {
    const std::size_t j = column(n.comp);
    const double margin = scores[j] - scores[j_gt] + table.th(n.comp);
    if (margin > 0.0) {
      loss += margin;
      if (g_scores) {
        (*g_scores)[j] += 1.0;
        (*g_scores)[j_gt] -= 1.0;
      }
    }
  }
  return loss;
}

double lao_loss(std::span<const double> gt_log_probs, double contrastive, double r_c) {
  double ce = 0.0;
  for (double lp : gt_log_probs) ce -= lp;
  if (!gt_log_probs.empty()) ce /= static_cast<double>(gt_log_probs.size());
  const double loss = ce + r_c * contrastive;
  if (!std::isfinite(loss)) throw NumericError("lao_loss: non-finite value");
  return loss;
}

std::string_view to_string(ThresholdPolicy p) {
  switch (p) {
    case ThresholdPolicy::Mean: return "mean";
    case ThresholdPolicy::Max: return "max";
    case ThresholdPolicy::Fixed: return "fixed";
  }
  return "mean";
}

ThresholdPolicy parse_threshold_policy(std::string_view s) {
  if (s == "mean") return ThresholdPolicy::Mean;
  if (s == "max") return ThresholdPolicy::Max;
  if (s == "fixed") return ThresholdPolicy::Fixed;
  throw ConfigError("threshold_policy must be mean|max|fixed, got '" + std::string(s) + "'");
}

std::string_view to_string(DeltaPopulation p) { return p == DeltaPopulation::Batch ? "batch" : "contributors"; }

DeltaPopulation parse_delta_population(std::string_view s) {
  if (s == "contributors") return DeltaPopulation::Contributors;
  if (s == "batch") return DeltaPopulation::Batch;
  throw ConfigError("delta_population must be contributors|batch, got '" + std::string(s) + "'");
}

}  // namespace ulao
