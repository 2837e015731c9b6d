#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "ulao/encoders.hpp"
#include "ulao/lao.hpp"
#include "ulao/uao.hpp"

namespace ulao {

enum class NegativeSource { Uao, Composition, Random };
std::string_view to_string(NegativeSource s);
NegativeSource parse_negative_source(std::string_view s);

// Ablation rows: C = composition branch only; C+AO adds the attribute/object
// branches; C+UAO adds object hints; ULAO adds the adaptive contrastive loss.
enum class Variant { C, C_AO, C_UAO, ULAO };
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

struct Hyperparams {
  double tau = 0.01;
  int k = 3;
  double r_k = 0.5;
  double r_ao = 1.0;
  double r_m = 0.1;
  double r_c = 0.3;
  double alpha = 0.5;
  double up_default = 1.0;  // +inf disables the bound
  double fixed_threshold = 0.0;
  double lr = 1e-3;
  std::string lr_schedule = "constant";  // hook only; other schedules are rejected
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;

  bool enable_ao_branches = true;
  bool enable_object_hints = true;
  bool enable_contrastive = true;

  NegativeSource negative_source = NegativeSource::Uao;
  ThresholdPolicy threshold_policy = ThresholdPolicy::Mean;
  bool topk_renormalize = false;
  DeltaPopulation delta_population = DeltaPopulation::Contributors;
  bool combined_stop_grad = false;
  // Test-only: let the attribute loss reach w_o / p_o through the object hint.
  bool detach_hints = true;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void apply_variant(Variant v);
  Variant variant() const;
  // Effective fusion weight: the product path is absent without AO branches.
  double fusion_alpha() const { return enable_ao_branches ? alpha : 1.0; }
  void check() const;
};

struct ModelDims {
  EncoderDims enc;
  int heads = 2;
  int mixer_hidden = 32;
  int n_attr = 1;
  int n_obj = 1;
  bool operator==(const ModelDims&) const = default;
};

// Every learnable tensor. The same struct carries gradients and optimizer moments.
struct Params {
  PromptParams prompts;
  AttentionHead attn_a;
  AttentionHead attn_o;
  MixerParams mixer;

  Params zeros_like() const;
  std::size_t numel() const;
};

template <typename P, typename F>
void visit_params(P& p, F&& f) {
  f("prompt.w_o", p.prompts.w_o);
  f("prompt.w_a", p.prompts.w_a);
  f("prompt.w_ctx", p.prompts.w_ctx);
  f("prompt.w_ca", p.prompts.w_ca);
  f("prompt.w_co", p.prompts.w_co);
  f("attn_a.query", p.attn_a.query);
  f("attn_a.wq", p.attn_a.wq);
  f("attn_a.wk", p.attn_a.wk);
  f("attn_a.wv", p.attn_a.wv);
  f("attn_a.wo", p.attn_a.wo);
  f("attn_a.bo", p.attn_a.bo);
  f("attn_o.query", p.attn_o.query);
  f("attn_o.wq", p.attn_o.wq);
  f("attn_o.wk", p.attn_o.wk);
  f("attn_o.wv", p.attn_o.wv);
  f("attn_o.wo", p.attn_o.wo);
  f("attn_o.bo", p.attn_o.bo);
  f("mixer.w1", p.mixer.w1);
  f("mixer.b1", p.mixer.b1);
  f("mixer.w2", p.mixer.w2);
  f("mixer.b2", p.mixer.b2);
  f("mixer.w3", p.mixer.w3);
  f("mixer.b3", p.mixer.b3);
  f("mixer.w4", p.mixer.w4);
  f("mixer.b4", p.mixer.b4);
}

// Visits the same tensor in two structs of identical layout.
template <typename P, typename Q, typename F>
void visit_param_pairs(P& a, Q& b, F&& f) {
  std::vector<std::pair<std::string, Eigen::Map<Mat>>> rhs;
  visit_params(b, [&](std::string_view name, auto& t) {
    rhs.emplace_back(std::string(name), Eigen::Map<Mat>(const_cast<double*>(t.data()), t.rows(), t.cols()));
  });
  std::size_t i = 0;
  visit_params(a, [&](std::string_view name, auto& t) { f(name, t, rhs[i++].second); });
}

// Parameter groups that the active loss terms can move under these hyperparameters.
bool group_is_active(std::string_view name, const Hyperparams& hp);

struct ModelState {
  ModelDims dims;
  Hyperparams hp;
  PrimitiveVocab vocab;
  FrozenEncoders enc;
  Params params;
  Params adam_m;
  Params adam_v;
  ThresholdTable thresholds;
  std::int64_t step = 0;

  TokenEmbeddingTable table() const { return {enc.fixed_embeddings, params.prompts}; }
};

// Word-seeded prompts, random attention/mixer weights, zero-initialized final mixer layer.
ModelState init_model(const PrimitiveVocab& vocab, const ModelDims& dims, const FrozenEncoderSpec& enc_spec,
                      const Hyperparams& hp);

ThresholdTable make_threshold_table(const Hyperparams& hp, std::map<Composition, double> up_overrides = {});

}  // namespace ulao
