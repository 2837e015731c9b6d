#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulao/data.hpp"
#include "ulao/model.hpp"

namespace ulao {

// Fused probabilities, one row per image, one column per candidate.
struct ScoreMatrix {
  std::vector<Composition> candidates;
  Mat scores;
  std::vector<std::string> ids;
  std::vector<Composition> labels;
  std::vector<std::size_t> label_columns;  // npos when the label is not a candidate
  std::vector<std::uint8_t> unseen_mask;   // per candidate column
};

struct RankedCandidate {
  Composition comp;
  double prob = 0.0;
};

// Fused distribution over build_label_space(space, world), sorted descending.
std::vector<RankedCandidate> predict(const ModelState& s, const CompositionSpace& space, const Sample& x, World world);

ScoreMatrix score_samples(const ModelState& s, const CompositionSpace& space, const std::vector<Sample>& samples,
                          World world);

struct CurvePoint {
  double bias = 0.0;
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
};

// Seen-image and unseen-image accuracy after adding `bias` to every unseen column.
// Ties go to the lower column index. Images whose label is unseen count as unseen images.
CurvePoint accuracy_at(const Mat& scores, std::span<const std::size_t> label_columns,
                       std::span<const std::uint8_t> unseen_mask, double bias);

// Exact sweep: the -inf endpoint, one point between each pair of consecutive
// critical biases, and the +inf endpoint. Ordered by increasing bias.
std::vector<CurvePoint> bias_sweep(const Mat& scores, std::span<const std::size_t> label_columns,
                                   std::span<const std::uint8_t> unseen_mask);

struct PairAccuracy {
  Composition comp;
  bool unseen = false;
  std::size_t n = 0;
  std::size_t correct = 0;  // at zero bias
};

struct MetricsReport {
  World world = World::CW;
  double s = 0.0;
  double u = 0.0;
  double hm = 0.0;
  double auc = 0.0;
  std::vector<CurvePoint> curve;
  std::vector<PairAccuracy> per_pair;
  std::size_t n_seen_images = 0;
  std::size_t n_unseen_images = 0;
};

// S, U, HM and AUC (trapezoid over unseen_acc -> seen_acc) from a sweep.
MetricsReport metrics_from_curve(std::vector<CurvePoint> curve);
MetricsReport metrics_from_scores(const ScoreMatrix& m);

MetricsReport evaluate(const ModelState& s, const CompositionSpace& space, const std::vector<Sample>& samples,
                       World world);
inline MetricsReport evaluate(const ModelState& s, const Dataset& ds, World world) {
  return evaluate(s, ds.space, ds.test, world);
}

nlohmann::json report_to_json(const MetricsReport& r, const PrimitiveVocab& vocab);

// id, gt, then five (candidate, probability) column pairs.
void write_prediction_dump(const std::filesystem::path& path, const ScoreMatrix& m, const PrimitiveVocab& vocab);

}  // namespace ulao
