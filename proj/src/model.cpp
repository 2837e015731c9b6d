#include "ulao/model.hpp"

#include <cmath>
#include <random>

namespace ulao {
namespace {

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

AttentionHead init_head(std::mt19937_64& rng, int d, int d_v, int heads) {
  AttentionHead h;
  h.heads = heads;
  h.query = gaussian(rng, d, 1, 1.0);
  h.wq = gaussian(rng, d, d, 1.0 / std::sqrt(d));
  h.wk = gaussian(rng, d, d_v, 1.0 / std::sqrt(d_v));
  h.wv = gaussian(rng, d, d_v, 1.0 / std::sqrt(d_v));
  h.wo = gaussian(rng, d, d, 1.0 / std::sqrt(d));
  h.bo = Vec::Zero(d);
  return h;
}

}  // namespace

std::string_view to_string(NegativeSource s) {
  switch (s) {
    case NegativeSource::Uao: return "uao";
    case NegativeSource::Composition: return "composition";
    case NegativeSource::Random: return "random";
  }
  return "uao";
}

NegativeSource parse_negative_source(std::string_view s) {
  if (s == "uao") return NegativeSource::Uao;
  if (s == "composition") return NegativeSource::Composition;
  if (s == "random") return NegativeSource::Random;
  throw ConfigError("negative_source must be uao|composition|random, got '" + std::string(s) + "'");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::C: return "C";
    case Variant::C_AO: return "C+AO";
    case Variant::C_UAO: return "C+UAO";
    case Variant::ULAO: return "ULAO";
  }
  return "ULAO";
}

Variant parse_variant(std::string_view s) {
  if (s == "C" || s == "c") return Variant::C;
  if (s == "C+AO" || s == "c+ao" || s == "c_ao") return Variant::C_AO;
  if (s == "C+UAO" || s == "c+uao" || s == "c_uao") return Variant::C_UAO;
  if (s == "ULAO" || s == "ulao") return Variant::ULAO;
  throw ConfigError("variant must be C|C+AO|C+UAO|ULAO, got '" + std::string(s) + "'");
}

void Hyperparams::apply_variant(Variant v) {
  enable_ao_branches = v != Variant::C;
  enable_object_hints = v == Variant::C_UAO || v == Variant::ULAO;
  enable_contrastive = v == Variant::ULAO;
}

Variant Hyperparams::variant() const {
  if (!enable_ao_branches) return Variant::C;
  if (!enable_object_hints) return Variant::C_AO;
  return enable_contrastive ? Variant::ULAO : Variant::C_UAO;
}

void Hyperparams::check() const {
  (void)Temperature(tau);
  if (k < 1) throw ConfigError("train.k must be >= 1");
  if (r_k < 0.0 || r_k > 1.0) throw ConfigError("train.r_k must lie in [0,1]");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("train.alpha must lie in [0,1]");
  if (!(up_default >= 0.0)) throw ConfigError("train.up_default must be >= 0");
  if (fixed_threshold < 0.0) throw ConfigError("train.fixed_threshold must be >= 0");
  if (lr < 0.0) throw ConfigError("train.lr must be >= 0");
  if (lr_schedule != "constant") throw ConfigError("train.lr_schedule: only 'constant' is implemented");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (enable_object_hints && !enable_ao_branches) throw ConfigError("object hints require the attribute/object branches");
  if (enable_contrastive && negative_source == NegativeSource::Uao && !enable_ao_branches) {
    throw ConfigError("negative_source 'uao' requires the attribute/object branches");
  }
}

Params Params::zeros_like() const {
  Params z = *this;
  visit_params(z, [](std::string_view, auto& t) { t.setZero(); });
  return z;
}

std::size_t Params::numel() const {
  std::size_t n = 0;
  visit_params(*this, [&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool group_is_active(std::string_view name, const Hyperparams& hp) {
  if (name == "prompt.w_ctx" || name == "prompt.w_ca" || name == "prompt.w_co") return true;
  return hp.enable_ao_branches;
}

ThresholdTable make_threshold_table(const Hyperparams& hp, std::map<Composition, double> up_overrides) {
  return ThresholdTable(hp.threshold_policy, hp.up_default, hp.fixed_threshold, std::move(up_overrides));
}

ModelState init_model(const PrimitiveVocab& vocab, const ModelDims& dims, const FrozenEncoderSpec& enc_spec,
                      const Hyperparams& hp) {
  vocab.check();
  hp.check();
  const auto& e = dims.enc;
  if (dims.heads < 1 || e.d % dims.heads != 0) throw ConfigError("model.heads must divide model.d");
  if (dims.mixer_hidden < 1) throw ConfigError("model.mixer_hidden must be >= 1");
  if (hp.k > vocab.n_obj() && hp.enable_object_hints) throw ConfigError("train.k exceeds the number of objects");

  ModelState s;
  s.dims = dims;
  s.dims.n_attr = vocab.n_attr();
  s.dims.n_obj = vocab.n_obj();
  s.hp = hp;
  s.vocab = vocab;
  FrozenEncoderSpec spec = enc_spec;
  spec.dims = e;
  s.enc = make_frozen_encoders(spec);

  std::mt19937_64 rng(hp.seed * 0x2545f4914f6cdd1dULL + 101);
  s.params.prompts = init_prompt_params(vocab, e.d_e, spec.seed);
  s.params.attn_a = init_head(rng, e.d, e.d_v, dims.heads);
  s.params.attn_o = init_head(rng, e.d, e.d_v, dims.heads);
  const int hdim = dims.mixer_hidden;
  auto& m = s.params.mixer;
  m.w1 = gaussian(rng, hdim, 2 * e.d, 1.0 / std::sqrt(2.0 * e.d));
  m.b1 = Vec::Zero(hdim);
  m.w2 = gaussian(rng, hdim, hdim, 1.0 / std::sqrt(hdim));
  m.b2 = Vec::Zero(hdim);
  m.w3 = gaussian(rng, hdim, hdim, 1.0 / std::sqrt(hdim));
  m.b3 = Vec::Zero(hdim);
  m.w4 = Mat::Zero(e.d, hdim);
  m.b4 = Vec::Zero(e.d);

  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  s.thresholds = make_threshold_table(hp);
  return s;
}

}  // namespace ulao
