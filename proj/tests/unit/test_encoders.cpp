#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "ulao/encoders.hpp"
#include "ulao/tensor_io.hpp"
#include "ulao/training.hpp"

using namespace ulao;

namespace {

FrozenEncoders make_enc(int d_in = 6, int d_v = 8, int d = 8, int d_e = 8, int T = 4, std::uint64_t seed = 5) {
  FrozenEncoderSpec spec;
  spec.seed = seed;
  spec.dims = {d_in, d_v, d, d_e, T, PayloadKind::Latent};
  return make_frozen_encoders(spec);
}

Mat random_mat(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

PromptSequence random_prompt(std::mt19937_64& rng, int L, int d_e) {
  PromptSequence p;
  p.slots = random_mat(rng, L, d_e);
  p.kinds.assign(L, SlotKind::Learnable);
  return p;
}

}  // namespace

TEST_CASE("encode_image") {
  const FrozenEncoders enc = make_enc();
  std::mt19937_64 rng(1);
  const Mat x = random_mat(rng, 4, 6);

  SUBCASE("deterministic") {
    const auto a = encode_image(x, enc), b = encode_image(x, enc);
    CHECK(a.tokens == b.tokens);
    CHECK(a.pooled == b.pooled);
    CHECK(make_enc() == enc);
  }
  SUBCASE("zero latent gives the bias rows") {
    CHECK(encode_image(Mat::Zero(4, 6), enc).tokens == enc.visual.token_bias);
  }
  SUBCASE("matches a direct evaluation") {
    const auto& v = enc.visual;
    Vec mean = Vec::Zero(8);
    for (int t = 0; t < 4; ++t) {
      Vec tok = v.token_bias.row(t).transpose();
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 6; ++j) tok(i) += v.token_w(i, j) * x(t, j);
      mean += v.pos_w(t) * tok;
    }
    Vec expect(8);
    for (int i = 0; i < 8; ++i) {
      double z = v.pool_b(i);
      for (int j = 0; j < 8; ++j) z += v.pool_w(i, j) * mean(j);
      expect(i) = std::tanh(z);
    }
    CHECK(rel_err(encode_image(x, enc).pooled, expect) < 1e-14);
    CHECK(v.pos_w.sum() == doctest::Approx(1.0));
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(encode_image(Mat::Zero(4, 5), enc), DataError); }
}

TEST_CASE("encode_text") {
  const FrozenEncoders enc = make_enc();
  std::mt19937_64 rng(2);

  SUBCASE("matches a hand evaluation on a 5-slot prompt") {
    const PromptSequence p = random_prompt(rng, 5, 8);
    const auto& t = enc.text;
    Vec u = Vec::Zero(8);
    for (int l = 0; l < 5; ++l) u += t.pos5(l) * p.slots.row(l).transpose();
    Vec expect(8);
    for (int i = 0; i < 8; ++i) expect(i) = std::tanh(t.w.row(i).dot(u) + t.b(i));
    CHECK(rel_err(encode_text(p, enc), expect) < 1e-14);
    CHECK(encode_text(p, enc) == encode_text(p, enc));
  }
  SUBCASE("a zero-weight slot is ignored") {
    FrozenEncoders e2 = enc;
    e2.text.pos4(1) = 0.0;
    PromptSequence a = random_prompt(rng, 4, 8), b = a;
    b.slots.row(1).setRandom();
    CHECK(encode_text(a, e2) == encode_text(b, e2));
  }
  SUBCASE("length must be 4 or 5") {
    CHECK_THROWS_AS(encode_text(random_prompt(rng, 3, 8), enc), DataError);
  }
}

TEST_CASE("JVPs match central differences at 10 random points") {
  const FrozenEncoders enc = make_enc();
  std::mt19937_64 rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const Mat x = random_mat(rng, 4, 6), dx = random_mat(rng, 4, 6);
    const auto j = encode_image_jvp(x, dx, enc);
    const auto p = encode_image(Mat(x + h * dx), enc), m = encode_image(Mat(x - h * dx), enc);
    CHECK(rel_err(j.pooled, (p.pooled - m.pooled) / (2 * h)) < 1e-4);
    CHECK(rel_err(j.tokens, (p.tokens - m.tokens) / (2 * h)) < 1e-4);

    for (int L : {4, 5}) {
      PromptSequence pr = random_prompt(rng, L, 8);
      const Mat ds = random_mat(rng, L, 8);
      const Vec jt = encode_text_jvp(pr, ds, enc);
      PromptSequence pp = pr, pm = pr;
      pp.slots += h * ds;
      pm.slots -= h * ds;
      CHECK(rel_err(jt, (encode_text(pp, enc) - encode_text(pm, enc)) / (2 * h)) < 1e-4);
      // Adjoint identity: <g, J ds> = <J^T g, ds>.
      const Vec g = random_mat(rng, 8, 1);
      const Mat back = encode_text_backward(pr, g, enc);
      CHECK(g.dot(jt) == doctest::Approx(back.cwiseProduct(ds).sum()).epsilon(1e-12));
    }
  }
}

TEST_CASE("prompt assembly") {
  PrimitiveVocab vocab{{"old", "new", "wet"}, {"car", "cat"}};
  const PromptParams pp = init_prompt_params(vocab, 8, 1);
  const Mat fixed = fixed_prompt_embeddings(8, 1);
  const TokenEmbeddingTable table{fixed, pp};

  SUBCASE("object prompt") {
    const auto p = assemble_object_prompt(0, table);
    REQUIRE(p.length() == 4);
    CHECK(p.slots.topRows(3) == fixed.topRows(3));
    CHECK(p.slots.row(3) == pp.w_o.row(0));
    CHECK(p.kinds == std::vector<SlotKind>{SlotKind::Fixed, SlotKind::Fixed, SlotKind::Fixed, SlotKind::Learnable});
    CHECK(assemble_object_prompt(1, table).slots.row(3) != p.slots.row(3));
    CHECK_THROWS_AS(assemble_object_prompt(2, table), DataError);
  }
  SUBCASE("attribute prompt") {
    const Vec e3 = fixed.row(3).transpose();
    const auto p = assemble_attribute_prompt(0, e3, table);
    REQUIRE(p.length() == 5);
    CHECK(p.slots.row(3) == pp.w_a.row(0));
    CHECK(p.slots.row(4) == fixed.row(3));
    CHECK(p.kinds[4] == SlotKind::DynamicHint);
    const Vec other = Vec::Constant(8, 0.25);
    CHECK(assemble_attribute_prompt(0, other, table).slots.row(3) == pp.w_a.row(0));
    CHECK_THROWS_AS(assemble_attribute_prompt(0, Vec::Zero(7), table), DataError);
    CHECK_THROWS_AS(assemble_attribute_prompt(3, e3, table), DataError);
  }
  SUBCASE("composition prompt") {
    const auto p = assemble_composition_prompt({1, 0}, table);
    REQUIRE(p.length() == 5);
    CHECK(p.slots.topRows(3) == pp.w_ctx);
    CHECK(p.slots.row(3) == pp.w_ca.row(1));
    CHECK(p.slots.row(4) == pp.w_co.row(0));
    for (auto k : p.kinds) CHECK(k == SlotKind::Learnable);
    CHECK(assemble_composition_prompt({1, 1}, table).slots.row(3) == p.slots.row(3));
    CHECK_THROWS_AS(assemble_composition_prompt({0, 2}, table), DataError);
    int n = 0;
    for (int a = 0; a < 3; ++a)
      for (int o = 0; o < 2; ++o) n += assemble_composition_prompt({a, o}, table).length() == 5;
    CHECK(n == 6);
  }
  SUBCASE("word embeddings are seeded by name") {
    CHECK(word_embedding("car", 8, 1) == word_embedding("car", 8, 1));
    CHECK(word_embedding("car", 8, 1) != word_embedding("cat", 8, 1));
    CHECK(pp.w_o.row(0).transpose() == word_embedding("car", 8, 1));
  }
}

TEST_CASE("batched text representations equal per-prompt encoding") {
  const Dataset ds = generate_synthetic(testing::tiny_synthetic());
  const ModelState s = testing::tiny_model(ds, Hyperparams{});
  const auto cands = build_label_space(ds.space, World::OW);
  const TextReps reps = compute_text_reps(s, cands);
  const auto table = s.table();
  for (int o = 0; o < ds.vocab.n_obj(); ++o) {
    CHECK(rel_err(reps.objects.row(o).transpose(), encode_text(assemble_object_prompt(o, table), s.enc)) < 1e-13);
  }
  for (std::size_t j = 0; j < cands.size(); ++j) {
    CHECK(rel_err(reps.compositions.row(static_cast<Eigen::Index>(j)).transpose(),
                  encode_text(assemble_composition_prompt(cands[j], table), s.enc)) < 1e-13);
  }
  std::mt19937_64 rng(4);
  const Vec e3p = random_mat(rng, 8, 1);
  const Mat ar = attribute_reps(s, reps, e3p);
  for (int a = 0; a < ds.vocab.n_attr(); ++a) {
    CHECK(rel_err(ar.row(a).transpose(), encode_text(assemble_attribute_prompt(a, e3p, table), s.enc)) < 1e-13);
  }
}

TEST_CASE("external encoder blobs reproduce the reference encoder") {
  const FrozenEncoders ref = make_enc();
  const auto dir = testing::scratch("external_enc");
  FrozenEncoderSpec spec;
  spec.kind = EncoderKind::External;
  spec.dims = ref.spec.dims;
  for (const auto& [name, m] : frozen_blobs(ref)) {
    const auto path = dir / (name + ".ulao");
    write_tensor(path, m.cols() == 1 ? to_tensor(Vec(m.col(0))) : to_tensor(m));
    spec.weight_files[name] = path;
  }
  const FrozenEncoders ext = make_frozen_encoders(spec);
  std::mt19937_64 rng(9);
  const Mat x = random_mat(rng, 4, 6);
  CHECK(rel_err(encode_image(x, ext).pooled, encode_image(x, ref).pooled) < 1e-6);
  spec.weight_files.erase("text.w");
  CHECK_THROWS_WITH_AS(make_frozen_encoders(spec), doctest::Contains("text.w"), DataError);
}
