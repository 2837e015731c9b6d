#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "ulao/evaluation.hpp"

using namespace ulao;
using namespace ulao::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Columns: c0, c1 seen; c2, c3 unseen. Image labels c0, c1, c3.
struct Fixture {
  Mat scores;
  std::vector<std::size_t> labels{0, 1, 3};
  std::vector<std::uint8_t> unseen{0, 0, 1, 1};
  Fixture() : scores(3, 4) {
    scores << 0.9, 0.1, 0.5, 0.2,  //
        0.2, 0.6, 0.5, 0.1,        //
        0.7, 0.1, 0.2, 0.4;
  }
};

MetricsReport metrics(const Mat& s, const std::vector<std::size_t>& l, const std::vector<std::uint8_t>& u) {
  return metrics_from_curve(bias_sweep(s, l, u));
}

}  // namespace

TEST_CASE("hand-enumerated three-image fixture") {
  const Fixture f;
  const auto curve = bias_sweep(f.scores, f.labels, f.unseen);
  // Critical gaps 0.1, 0.3, 0.4 -> points at -inf, 0.2, 0.35, +inf.
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].bias == -kInf);
  CHECK(curve[1].bias == doctest::Approx(0.2));
  CHECK(curve[2].bias == doctest::Approx(0.35));
  CHECK(curve[3].bias == kInf);
  const double seen[] = {1.0, 0.5, 0.5, 0.0};
  const double unseen[] = {0.0, 0.0, 1.0, 1.0};
  for (int i = 0; i < 4; ++i) {
    CHECK(curve[i].seen_acc == seen[i]);
    CHECK(curve[i].unseen_acc == unseen[i]);
  }
  const MetricsReport r = metrics_from_curve(curve);
  CHECK(r.s == 1.0);
  CHECK(r.u == 1.0);
  CHECK(r.hm == 2.0 / 3.0);
  CHECK(r.auc == 0.5);
  CHECK(r.auc <= r.s * r.u);
}

TEST_CASE("accuracy_at limits and ties") {
  const Fixture f;
  CHECK(accuracy_at(f.scores, f.labels, f.unseen, -kInf).unseen_acc == 0.0);
  // Every seen image has an unseen candidate, so seen accuracy vanishes at +inf.
  CHECK(accuracy_at(f.scores, f.labels, f.unseen, kInf).seen_acc == 0.0);
  CHECK(accuracy_at(f.scores, f.labels, f.unseen, kInf).unseen_acc == 1.0);
  // Exact tie at the critical value goes to the lower column (the seen one here).
  Mat s(1, 2);
  s << 0.5, 0.25;
  const std::vector<std::size_t> l{0};
  const std::vector<std::uint8_t> u{0, 1};
  CHECK(accuracy_at(s, l, u, 0.25).seen_acc == 1.0);
  CHECK(accuracy_at(s, l, u, 0.2500001).seen_acc == 0.0);
  CHECK_THROWS_AS(bias_sweep(Mat(0, 2), std::vector<std::size_t>{}, u), DataError);
}

TEST_CASE("perfect classifier") {
  Mat s = Mat::Zero(4, 4);
  const std::vector<std::size_t> l{0, 1, 2, 3};
  for (int i = 0; i < 4; ++i) s(i, i) = 1.0;
  const auto r = metrics(s, l, {0, 0, 1, 1});
  CHECK(r.s == 1.0);
  CHECK(r.u == 1.0);
  CHECK(r.hm == 1.0);
  CHECK(r.auc == 1.0);
}

TEST_CASE("seen-perfect model that never ranks an unseen pair first") {
  Mat s(3, 3);
  s << 0.9, 0.1, 0.3,  //
      0.1, 0.9, 0.2,   //
      0.9, 0.1, 0.2;   // unseen image, label column 2
  const auto r = metrics(s, {0, 1, 2}, {0, 0, 1});
  CHECK(r.s == 1.0);
  CHECK(r.u == 1.0);
  CHECK(r.auc < 1.0);
}

TEST_CASE("metric invariances on random score matrices") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 60, c = 10;
    Mat s(n, c);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(nd(rng) * 8) / 8;  // ties
    std::vector<std::size_t> l(n);
    for (auto& v : l) v = rng() % c;
    std::vector<std::uint8_t> u(c);
    for (int j = 0; j < c; ++j) u[j] = j >= 6;
    const auto base = metrics(s, l, u);

    const Mat shifted = (s.array() + 3.25).matrix();
    const auto sh = metrics(shifted, l, u);
    CHECK(std::abs(sh.s - base.s) <= 1e-12);
    CHECK(std::abs(sh.u - base.u) <= 1e-12);
    CHECK(std::abs(sh.hm - base.hm) <= 1e-12);
    CHECK(std::abs(sh.auc - base.auc) <= 1e-12);

    // Denser grid: every critical midpoint plus extra points between and beyond them.
    std::vector<double> biases{-kInf, kInf};
    for (const auto& p : base.curve) {
      if (!std::isfinite(p.bias)) continue;
      biases.push_back(p.bias);
      biases.push_back(p.bias + 1e-9);
      biases.push_back(p.bias - 1e-9);
    }
    for (int k = 0; k < 200; ++k) biases.push_back(nd(rng) * 3);
    std::sort(biases.begin(), biases.end());
    std::vector<CurvePoint> dense;
    for (double b : biases) dense.push_back(accuracy_at(s, l, u, b));
    const auto d = metrics_from_curve(dense);
    CHECK(std::abs(d.auc - base.auc) < 1e-9);
    CHECK(d.hm == doctest::Approx(base.hm));
    CHECK(base.auc <= base.s * base.u + 1e-15);
    for (const auto& p : dense) {
      CHECK(base.s >= p.seen_acc);
      CHECK(base.u >= p.unseen_acc);
    }
  }
}

TEST_CASE("model-level evaluation") {
  const Dataset ds = generate_synthetic(tiny_synthetic(2));
  Hyperparams hp;
  hp.epochs = 2;
  hp.lr = 1e-2;
  const ModelState trained = fit(ds, tiny_model(ds, hp)).final;

  SUBCASE("closed world scores at least as well as open world") {
    for (double alpha : {0.0, 1.0}) {
      ModelState s = trained;
      s.hp.alpha = alpha;
      const auto cw = evaluate(s, ds, World::CW), ow = evaluate(s, ds, World::OW);
      CAPTURE(alpha);
      CHECK(cw.s >= ow.s);
      CHECK(cw.u >= ow.u);
      CHECK(cw.hm >= ow.hm);
      CHECK(cw.auc >= ow.auc);
    }
  }
  SUBCASE("predict is sorted, normalized and honors the candidate set") {
    const auto ranked = predict(trained, ds.space, ds.test[0], World::OW);
    CHECK(ranked.size() == 20);
    double total = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      total += ranked[i].prob;
      if (i) CHECK(ranked[i - 1].prob >= ranked[i].prob);
    }
    CHECK(total == doctest::Approx(1.0));
    const CompositionSpace single(5, 4, {{0, 0}}, {});
    const auto one = predict(trained, single, ds.test[0], World::CW);
    REQUIRE(one.size() == 1);
    CHECK(one[0].prob == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("alpha = 0 ranks by the product of primitives") {
    ModelState s = trained;
    s.hp.alpha = 0.0;
    const auto ranked = predict(s, ds.space, ds.test[1], World::CW);
    const auto out = forward_sample(s, compute_text_reps(s, build_label_space(ds.space, World::CW)), ds.test[1]);
    for (std::size_t i = 1; i < ranked.size(); ++i) {
      const auto a = ranked[i - 1].comp, b = ranked[i].comp;
      CHECK(out.p_a->prob[a.attr] * out.p_o->prob[a.obj] >= out.p_a->prob[b.attr] * out.p_o->prob[b.obj] * (1 - 1e-12));
    }
  }
  SUBCASE("report and prediction dump") {
    const ScoreMatrix m = score_samples(trained, ds.space, ds.test, World::CW);
    const auto r = metrics_from_scores(m);
    CHECK(r.n_seen_images + r.n_unseen_images == ds.test.size());
    std::size_t n = 0;
    for (const auto& p : r.per_pair) n += p.n;
    CHECK(n == ds.test.size());
    const auto j = report_to_json(r, ds.vocab);
    for (const char* k : {"S", "U", "HM", "AUC", "curve", "per_pair", "protocol", "world"}) CHECK(j.contains(k));
    CHECK(j["curve"].front()["bias"] == "-inf");
    const auto dir = scratch("eval_dump");
    write_prediction_dump(dir / "p.tsv", m, ds.vocab);
    std::ifstream in(dir / "p.tsv");
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "id\tgt\ttop1\tp1\ttop2\tp2\ttop3\tp3\ttop4\tp4\ttop5\tp5");
    std::getline(in, row);
    CHECK(std::count(row.begin(), row.end(), '\t') == 11);
    CHECK(row.rfind(ds.test[0].id + "\t", 0) == 0);
  }
  SUBCASE("empty split") { CHECK_THROWS_AS(evaluate(trained, ds.space, {}, World::CW), DataError); }
}
