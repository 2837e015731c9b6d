#include "ulao/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ulao {

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ulao

namespace ulao {

CosineScores cosine_scores(const Vec& v, const Mat& rows) {
  CosineScores cs;
  cs.v_norm = v.norm();
  if (!(cs.v_norm > 0.0) || !std::isfinite(cs.v_norm)) throw NumericError("degenerate representation: zero-norm visual vector");
  cs.v_hat = v / cs.v_norm;
  cs.r_norm = rows.rowwise().norm();
  for (Eigen::Index i = 0; i < cs.r_norm.size(); ++i) {
    if (!(cs.r_norm(i) > 0.0) || !std::isfinite(cs.r_norm(i))) {
      throw NumericError("degenerate representation: zero-norm text representation");
    }
  }
  cs.r_hat = cs.r_norm.cwiseInverse().asDiagonal() * rows;
  cs.cos = cs.r_hat * cs.v_hat;
  return cs;
}

void cosine_scores_backward(const CosineScores& cs, const Vec& g_cos, Vec& g_v, Mat& g_rows) {
  // d cos_j / d v   = (r_hat_j - cos_j v_hat) / |v|
  // d cos_j / d r_j = (v_hat - cos_j r_hat_j) / |r_j|
  g_v += (cs.r_hat.transpose() * g_cos - g_cos.dot(cs.cos) * cs.v_hat) / cs.v_norm;
  for (Eigen::Index j = 0; j < cs.r_hat.rows(); ++j) {
    if (g_cos(j) == 0.0) continue;
    g_rows.row(j) += (g_cos(j) / cs.r_norm(j)) * (cs.v_hat.transpose() - cs.cos(j) * cs.r_hat.row(j));
  }
}

}  // namespace ulao
