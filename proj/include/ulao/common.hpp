#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulao {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Input files or label spaces that do not satisfy the dataset contract.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Schema or option problems in user-supplied configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, degenerate representations, and similar numeric failures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Max-shifted log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

// Normalized exponentials; returns log-probabilities computed without exp/log round trips.
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

// Stable 64-bit FNV-1a; used to derive per-name seeds.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace ulao

namespace ulao {

// Cosine similarities between one vector and each row of a matrix, with the
// normalized pieces kept for the backward pass.
struct CosineScores {
  Vec v_hat;
  double v_norm = 0.0;
  Mat r_hat;
  Vec r_norm;
  Vec cos;
};

// Throws NumericError("degenerate representation") for zero-norm inputs.
CosineScores cosine_scores(const Vec& v, const Mat& rows);

// Accumulates d(sum_j g_j cos_j) into g_v (size d) and g_rows (same shape as rows).
void cosine_scores_backward(const CosineScores& cs, const Vec& g_cos, Vec& g_v, Mat& g_rows);

}  // namespace ulao
