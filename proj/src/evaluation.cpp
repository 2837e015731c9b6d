#include "ulao/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "ulao/training.hpp"

namespace ulao {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kNone = static_cast<std::size_t>(-1);

// Best seen and best unseen column of one score row (first index on ties).
struct RowSummary {
  double seen = -kInf;
  std::size_t seen_col = kNone;
  double unseen = -kInf;
  std::size_t unseen_col = kNone;
  std::size_t label = kNone;
  bool unseen_image = false;
};

std::vector<RowSummary> summarize(const Mat& scores, std::span<const std::size_t> labels,
                                  std::span<const std::uint8_t> unseen_mask) {
  if (scores.rows() == 0) throw DataError("evaluation: empty test split");
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw DataError("evaluation: label count mismatch");
  if (static_cast<std::size_t>(scores.cols()) != unseen_mask.size()) throw DataError("evaluation: mask width mismatch");
  std::vector<RowSummary> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& r = out[i];
    if (labels[i] >= unseen_mask.size()) throw DataError("evaluation: label is not a candidate");
    r.label = labels[i];
    r.unseen_image = unseen_mask[labels[i]] != 0;
    for (std::size_t j = 0; j < unseen_mask.size(); ++j) {
      const double v = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (unseen_mask[j]) {
        if (r.unseen_col == kNone || v > r.unseen) r.unseen = v, r.unseen_col = j;
      } else if (r.seen_col == kNone || v > r.seen) {
        r.seen = v, r.seen_col = j;
      }
    }
  }
  return out;
}

std::size_t predicted(const RowSummary& r, double bias) {
  if (r.unseen_col == kNone) return r.seen_col;
  if (r.seen_col == kNone) return r.unseen_col;
  if (bias == kInf) return r.unseen_col;
  if (bias == -kInf) return r.seen_col;
  const double u = r.unseen + bias;
  if (u > r.seen || (u == r.seen && r.unseen_col < r.seen_col)) return r.unseen_col;
  return r.seen_col;
}

CurvePoint accuracy(const std::vector<RowSummary>& rows, double bias) {
  std::size_t ns = 0, nu = 0, cs = 0, cu = 0;
  for (const auto& r : rows) {
    const bool ok = predicted(r, bias) == r.label;
    if (r.unseen_image) {
      ++nu;
      cu += ok;
    } else {
      ++ns;
      cs += ok;
    }
  }
  CurvePoint p;
  p.bias = bias;
  p.seen_acc = ns ? static_cast<double>(cs) / static_cast<double>(ns) : 0.0;
  p.unseen_acc = nu ? static_cast<double>(cu) / static_cast<double>(nu) : 0.0;
  return p;
}

nlohmann::json bias_json(double b) {
  if (b == kInf) return "inf";
  if (b == -kInf) return "-inf";
  return b;
}

}  // namespace

ScoreMatrix score_samples(const ModelState& s, const CompositionSpace& space, const std::vector<Sample>& samples,
                          World world) {
  ScoreMatrix m;
  m.candidates = build_label_space(space, world);
  if (m.candidates.empty()) throw DataError("evaluation: empty candidate set");
  const TextReps reps = compute_text_reps(s, m.candidates);
  m.scores.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(m.candidates.size()));
  m.unseen_mask.resize(m.candidates.size());
  for (std::size_t j = 0; j < m.candidates.size(); ++j) m.unseen_mask[j] = !space.is_seen(m.candidates[j]);
  const double alpha = s.hp.fusion_alpha();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& x = samples[i];
    const SampleOutputs out = forward_sample(s, reps, x);
    const std::vector<double> p_comp = softmax(out.comp_scores);
    const auto fused = fuse_predictions(p_comp, out.p_a ? &*out.p_a : nullptr, out.p_o ? &*out.p_o : nullptr, alpha,
                                        m.candidates);
    for (std::size_t j = 0; j < fused.size(); ++j) {
      m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = fused[j];
    }
    m.ids.push_back(x.id);
    m.labels.push_back(x.label);
    auto it = std::lower_bound(m.candidates.begin(), m.candidates.end(), x.label);
    m.label_columns.push_back(it != m.candidates.end() && *it == x.label
                                  ? static_cast<std::size_t>(it - m.candidates.begin())
                                  : kNone);
  }
  return m;
}

std::vector<RankedCandidate> predict(const ModelState& s, const CompositionSpace& space, const Sample& x, World world) {
  const ScoreMatrix m = score_samples(s, space, {x}, world);
  std::vector<std::size_t> order(m.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return m.scores(0, static_cast<Eigen::Index>(a)) >
                                                              m.scores(0, static_cast<Eigen::Index>(b)); });
  std::vector<RankedCandidate> out;
  for (std::size_t j : order) out.push_back({m.candidates[j], m.scores(0, static_cast<Eigen::Index>(j))});
  return out;
}

CurvePoint accuracy_at(const Mat& scores, std::span<const std::size_t> label_columns,
                       std::span<const std::uint8_t> unseen_mask, double bias) {
  return accuracy(summarize(scores, label_columns, unseen_mask), bias);
}

std::vector<CurvePoint> bias_sweep(const Mat& scores, std::span<const std::size_t> label_columns,
                                   std::span<const std::uint8_t> unseen_mask) {
  const auto rows = summarize(scores, label_columns, unseen_mask);
  std::vector<double> gaps;
  for (const auto& r : rows) {
    if (r.seen_col != kNone && r.unseen_col != kNone) gaps.push_back(r.seen - r.unseen);
  }
  std::sort(gaps.begin(), gaps.end());
  gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());
  std::vector<CurvePoint> curve;
  curve.push_back(accuracy(rows, -kInf));
  for (std::size_t k = 0; k + 1 < gaps.size(); ++k) curve.push_back(accuracy(rows, gaps[k] + 0.5 * (gaps[k + 1] - gaps[k])));
  curve.push_back(accuracy(rows, kInf));
  return curve;
}

MetricsReport metrics_from_curve(std::vector<CurvePoint> curve) {
  MetricsReport r;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const auto& p = curve[k];
    r.s = std::max(r.s, p.seen_acc);
    r.u = std::max(r.u, p.unseen_acc);
    if (p.seen_acc + p.unseen_acc > 0.0) {
      r.hm = std::max(r.hm, 2.0 * p.seen_acc * p.unseen_acc / (p.seen_acc + p.unseen_acc));
    }
    if (k > 0) {
      const auto& q = curve[k - 1];
      r.auc += (p.unseen_acc - q.unseen_acc) * (p.seen_acc + q.seen_acc) / 2.0;
    }
  }
  r.curve = std::move(curve);
  return r;
}

MetricsReport metrics_from_scores(const ScoreMatrix& m) {
  MetricsReport r = metrics_from_curve(bias_sweep(m.scores, m.label_columns, m.unseen_mask));
  const auto rows = summarize(m.scores, m.label_columns, m.unseen_mask);
  std::map<Composition, PairAccuracy> pairs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& pa = pairs[m.labels.at(i)];
    pa.comp = m.labels[i];
    pa.unseen = rows[i].unseen_image;
    ++pa.n;
    pa.correct += predicted(rows[i], 0.0) == rows[i].label;
    ++(rows[i].unseen_image ? r.n_unseen_images : r.n_seen_images);
  }
  for (auto& [c, pa] : pairs) r.per_pair.push_back(pa);
  return r;
}

MetricsReport evaluate(const ModelState& s, const CompositionSpace& space, const std::vector<Sample>& samples,
                       World world) {
  if (samples.empty()) throw DataError("evaluation: empty test split");
  MetricsReport r = metrics_from_scores(score_samples(s, space, samples, world));
  r.world = world;
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r, const PrimitiveVocab& vocab) {
  nlohmann::json j;
  j["world"] = std::string(to_string(r.world));
  j["S"] = r.s;
  j["U"] = r.u;
  j["HM"] = r.hm;
  j["AUC"] = r.auc;
  j["n_seen_images"] = r.n_seen_images;
  j["n_unseen_images"] = r.n_unseen_images;
  j["protocol"] = "calibration bias on unseen candidates, exact critical-value sweep";
  auto& curve = j["curve"] = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({{"bias", bias_json(p.bias)}, {"seen", p.seen_acc}, {"unseen", p.unseen_acc}});
  auto& pp = j["per_pair"] = nlohmann::json::array();
  for (const auto& p : r.per_pair) {
    pp.push_back({{"pair", composition_name(vocab, p.comp)},
                  {"unseen", p.unseen},
                  {"n", p.n},
                  {"correct", p.correct},
                  {"acc", p.n ? static_cast<double>(p.correct) / static_cast<double>(p.n) : 0.0}});
  }
  return j;
}

void write_prediction_dump(const std::filesystem::path& path, const ScoreMatrix& m, const PrimitiveVocab& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id\tgt";
  for (int k = 1; k <= 5; ++k) out << "\ttop" << k << "\tp" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    std::vector<std::size_t> order(m.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    const auto row = static_cast<Eigen::Index>(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return m.scores(row, static_cast<Eigen::Index>(a)) > m.scores(row, static_cast<Eigen::Index>(b));
    });
    out << m.ids[i] << '\t' << composition_name(vocab, m.labels[i]);
    for (std::size_t k = 0; k < 5 && k < order.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.6f", m.scores(row, static_cast<Eigen::Index>(order[k])));
      out << '\t' << composition_name(vocab, m.candidates[order[k]]) << '\t' << buf;
    }
    out << '\n';
  }
}

}  // namespace ulao
