#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "ulao/checkpoint.hpp"
#include "ulao/config.hpp"

using namespace ulao;
using namespace ulao::testing;
using nlohmann::json;

TEST_CASE("config parsing") {
  SUBCASE("defaults from an empty document") {
    const RunConfig c = parse_run_config(json::object());
    CHECK(c.train.tau == 0.01);
    CHECK(c.train.r_c == 0.3);
    CHECK(c.train.variant() == Variant::ULAO);
    CHECK(c.eval.world == World::CW);
  }
  SUBCASE("unknown keys name the dotted path") {
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"train", {{"learning_rate", 0.1}}}}),
                         doctest::Contains("train.learning_rate"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"data", {{"synthetic", {{"n_atr", 3}}}}}}),
                         doctest::Contains("data.synthetic.n_atr"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"extra", 1}}), doctest::Contains("extra"), ConfigError);
  }
  SUBCASE("range and type errors") {
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"alpha", 1.5}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"k", "three"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"train", {{"lr_schedule", "cosine"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"model", {{"d", 9}, {"heads", 2}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"eval", {{"world", "mid"}}}}), ConfigError);
  }
  SUBCASE("variants") {
    CHECK(parse_run_config(json{{"train", {{"variant", "C+AO"}}}}).train.variant() == Variant::C_AO);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"train", {{"variant", "C"}, {"enable_contrastive", true}}}}),
                         doctest::Contains("conflicts"), ConfigError);
  }
  SUBCASE("up accepts inf") {
    CHECK(std::isinf(parse_run_config(json{{"train", {{"up_default", "inf"}}}}).train.up_default));
  }
  SUBCASE("dotted overrides") {
    json doc = json::object();
    apply_override(doc, "train.r_c", "0.4");
    apply_override(doc, "train.threshold_policy", "max");
    apply_override(doc, "data.synthetic.n_attr", "7");
    const RunConfig c = parse_run_config(doc);
    CHECK(c.train.r_c == 0.4);
    CHECK(c.train.threshold_policy == ThresholdPolicy::Max);
    CHECK(c.data.synthetic->n_attr == 7);
  }
  SUBCASE("to_json round trip") {
    json doc = json{{"train", {{"r_k", 0.25}, {"variant", "C+UAO"}}},
                    {"data", {{"synthetic", {{"seed", 9}, {"binding", 0.5}}}}},
                    {"eval", {{"world", "ow"}}}};
    const RunConfig a = parse_run_config(doc);
    const RunConfig b = parse_run_config(to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK(b.train.r_k == 0.25);
    CHECK(b.eval.world == World::OW);
    CHECK(b.data.synthetic->binding == 0.5);
  }
  SUBCASE("config files") {
    const auto dir = scratch("cfg");
    std::ofstream(dir / "c.json") << R"({"train": {"epochs": 4}})";
    const RunConfig c = load_run_config(dir / "c.json", {{"train.epochs", "6"}});
    CHECK(c.train.epochs == 6);
    std::ofstream(dir / "bad.json") << "{";
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "none.json"), ConfigError);
  }
}

TEST_CASE("checkpoints") {
  const Dataset ds = generate_synthetic(tiny_synthetic());
  Hyperparams hp;
  hp.epochs = 1;
  hp.lr = 1e-2;
  const ModelState s = fit(ds, tiny_model(ds, hp)).final;
  const auto dir = scratch("ckpt");
  save_checkpoint(s, dir / "a");

  SUBCASE("round trip restores every piece of state") {
    const ModelState back = load_checkpoint(dir / "a");
    CHECK(back.step == s.step);
    CHECK(back.vocab.attributes == s.vocab.attributes);
    CHECK(back.dims == s.dims);
    CHECK(back.enc == s.enc);
    CHECK(back.thresholds == s.thresholds);
    CHECK(hyperparams_to_json(back.hp) == hyperparams_to_json(s.hp));
    visit_param_pairs(back.params, s.params, [](std::string_view name, const auto& x, const auto& y) {
      CAPTURE(name);
      CHECK(x == y.template cast<float>().template cast<double>());
    });
    // Saving the reloaded state reproduces the files byte for byte.
    save_checkpoint(back, dir / "b");
    CHECK(same_tree(dir / "a", dir / "b"));
  }
  SUBCASE("vocabulary mismatch") {
    PrimitiveVocab other = ds.vocab;
    other.objects[0] = "something_else";
    CHECK_THROWS_WITH_AS(check_vocab(s, other), doctest::Contains("vocabulary mismatch"), DataError);
    CHECK_NOTHROW(check_vocab(s, ds.vocab));
  }
  SUBCASE("damaged checkpoints") {
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), DataError);
    std::filesystem::remove(dir / "a" / "params" / "attn_a.wq.ulao");
    CHECK_THROWS_AS(load_checkpoint(dir / "a"), DataError);
  }
}
