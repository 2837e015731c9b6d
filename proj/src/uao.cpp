#include "ulao/uao.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ulao {

Vec attend(const AttentionHead& head, const Mat& tokens, AttentionCache* cache) {
  if (tokens.cols() != head.wk.cols()) {
    throw DataError("attention: token width " + std::to_string(tokens.cols()) + " does not match head input " +
                    std::to_string(head.wk.cols()));
  }
  if (tokens.rows() < 1) throw DataError("attention: no tokens");
  const int dk = head.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c.q = head.wq * head.query;
  c.keys = tokens * head.wk.transpose();
  c.values = tokens * head.wv.transpose();
  c.weights.resize(head.heads, tokens.rows());
  c.concat.resize(head.wq.rows());
  for (int i = 0; i < head.heads; ++i) {
    const Vec s = c.keys.middleCols(i * dk, dk) * c.q.segment(i * dk, dk) * scale;
    const double m = s.maxCoeff();
    Vec a = (s.array() - m).exp().matrix();
    a /= a.sum();
    c.weights.row(i) = a.transpose();
    c.concat.segment(i * dk, dk) = c.values.middleCols(i * dk, dk).transpose() * a;
  }
  return head.wo * c.concat + head.bo;
}

void attend_backward(const AttentionHead& head, const Mat& tokens, const AttentionCache& c, const Vec& g_out,
                     AttentionHead& grad) {
  const int dk = head.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  grad.wo.noalias() += g_out * c.concat.transpose();
  grad.bo += g_out;
  const Vec g_concat = head.wo.transpose() * g_out;
  Vec g_q(head.wq.rows());
  for (int i = 0; i < head.heads; ++i) {
    const Vec g_h = g_concat.segment(i * dk, dk);
    const Vec a = c.weights.row(i).transpose();
    const Vec g_a = c.values.middleCols(i * dk, dk) * g_h;
    const Vec g_s = a.cwiseProduct((g_a.array() - a.dot(g_a)).matrix());
    g_q.segment(i * dk, dk) = c.keys.middleCols(i * dk, dk).transpose() * g_s * scale;
    const Mat g_k = g_s * c.q.segment(i * dk, dk).transpose() * scale;  // T x dk
    const Mat g_v = a * g_h.transpose();                                // T x dk
    grad.wk.middleRows(i * dk, dk).noalias() += g_k.transpose() * tokens;
    grad.wv.middleRows(i * dk, dk).noalias() += g_v.transpose() * tokens;
  }
  grad.wq.noalias() += g_q * head.query.transpose();
  grad.query.noalias() += head.wq.transpose() * g_q;
}

Temperature::Temperature(double tau) : value(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be strictly positive");
}

PrimitiveDistribution PrimitiveDistribution::from_logits(std::span<const double> logits) {
  PrimitiveDistribution d;
  d.logp = log_softmax(logits);
  d.prob.resize(d.logp.size());
  for (std::size_t i = 0; i < d.logp.size(); ++i) d.prob[i] = std::exp(d.logp[i]);
  return d;
}

namespace {

PrimitiveDistribution cosine_softmax(const Vec& v, const Mat& reps, Temperature tau) {
  if (reps.rows() < 1) throw DataError("need at least one text representation");
  if (reps.cols() != v.size()) throw DataError("representation width mismatch");
  const CosineScores cs = cosine_scores(v, reps);
  std::vector<double> logits(static_cast<std::size_t>(cs.cos.size()));
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = cs.cos(static_cast<Eigen::Index>(i)) / tau.value;
  return PrimitiveDistribution::from_logits(logits);
}

}  // namespace

PrimitiveDistribution object_probs(const Vec& v_o, const Mat& object_reps, Temperature tau) {
  return cosine_softmax(v_o, object_reps, tau);
}

PrimitiveDistribution attribute_probs(const Vec& v_a, const Mat& attribute_reps, Temperature tau) {
  return cosine_softmax(v_a, attribute_reps, tau);
}

std::vector<int> top_k(std::span<const double> p, int k) {
  if (k < 1 || k > static_cast<int>(p.size())) {
    throw ConfigError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(p.size()) + "]");
  }
  std::vector<int> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

ObjectHint blend_object_hint(const PrimitiveDistribution& p_o, const Mat& w_o, const Vec& e3, const HintConfig& cfg) {
  if (cfg.r_k < 0.0 || cfg.r_k > 1.0) throw ConfigError("r_k must lie in [0,1]");
  if (static_cast<Eigen::Index>(p_o.size()) != w_o.rows()) throw DataError("object distribution size mismatch");
  ObjectHint h;
  h.top = top_k(p_o.prob, cfg.k);
  double total = 0.0;
  for (int o : h.top) total += p_o.prob[o];
  Vec w_fo = Vec::Zero(e3.size());
  for (int o : h.top) {
    const double w = cfg.renormalize ? p_o.prob[o] / total : p_o.prob[o];
    h.weights.push_back(w);
    w_fo += w * w_o.row(o).transpose();
  }
  h.e3_prime = cfg.r_k == 0.0 ? e3 : Vec((1.0 - cfg.r_k) * e3 + cfg.r_k * w_fo);
  return h;
}

double uao_loss(const std::vector<PrimitiveDistribution>& p_a, const std::vector<PrimitiveDistribution>& p_o,
                const std::vector<Composition>& labels, double r_ao) {
  if (p_a.size() != labels.size() || p_o.size() != labels.size()) throw DataError("uao_loss: batch size mismatch");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double la = p_a[i].logp.at(static_cast<std::size_t>(labels[i].attr));
    const double lo = p_o[i].logp.at(static_cast<std::size_t>(labels[i].obj));
    sum += la + lo + r_ao * (la + lo);
  }
  const double loss = -sum / static_cast<double>(labels.size());
  if (!std::isfinite(loss)) throw NumericError("uao_loss: non-finite value");
  return loss == 0.0 ? 0.0 : loss;
}

}  // namespace ulao
