#include "ulao/encoders.hpp"

#include <cmath>
#include <random>

#include "ulao/tensor_io.hpp"

namespace ulao {
namespace {

Mat gaussian(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

Vec positive_weights(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Vec w(n);
  for (int i = 0; i < n; ++i) w(i) = u(rng);
  return w / w.sum();
}

void check_shape(const Mat& m, int rows, int cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DataError("encoder blob " + name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                    ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

Mat load_blob(const FrozenEncoderSpec& spec, const std::string& name) {
  auto it = spec.weight_files.find(name);
  if (it == spec.weight_files.end()) throw DataError("external encoder spec lacks blob '" + name + "'");
  const Tensor t = read_tensor(it->second);
  if (t.dims.size() == 1) return tensor_to_vec(t);
  return tensor_to_mat(t);
}

}  // namespace

const std::vector<std::string>& frozen_blob_names() {
  static const std::vector<std::string> names = {
      "visual.token_w", "visual.token_bias", "visual.pos_w", "visual.pool_w", "visual.pool_b",
      "text.pos4",      "text.pos5",         "text.w",       "text.b",        "text.fixed_embeddings"};
  return names;
}

const Vec& TextEncoder::pos(int slots) const {
  if (slots == 4) return pos4;
  if (slots == 5) return pos5;
  throw DataError("prompt length must be 4 or 5, got " + std::to_string(slots));
}

bool FrozenEncoders::operator==(const FrozenEncoders& o) const {
  const auto a = frozen_blobs(*this);
  const auto b = frozen_blobs(o);
  if (a.size() != b.size()) return false;
  for (const auto& [name, m] : a) {
    const auto& n = b.at(name);
    if (m.rows() != n.rows() || m.cols() != n.cols() || m != n) return false;
  }
  return spec.dims == o.spec.dims;
}

FrozenEncoders make_frozen_encoders(const FrozenEncoderSpec& spec) {
  const auto& d = spec.dims;
  if (d.d_in < 1 || d.d_v < 1 || d.d < 1 || d.d_e < 1 || d.tokens < 1) {
    throw ConfigError("encoder dims must be positive");
  }
  if (d.input == PayloadKind::Tokens && d.d_in != d.d_v) {
    throw ConfigError("token payloads require d_in == d_v");
  }
  FrozenEncoders enc;
  enc.spec = spec;
  if (spec.kind == EncoderKind::Reference) {
    std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + 17);
    auto& v = enc.visual;
    v.token_w = d.input == PayloadKind::Tokens ? Mat::Identity(d.d_v, d.d_v)
                                               : gaussian(rng, d.d_v, d.d_in, 1.0 / std::sqrt(d.d_in));
    v.token_bias = gaussian(rng, d.tokens, d.d_v, 0.05);
    v.pos_w = positive_weights(rng, d.tokens);
    v.pool_w = gaussian(rng, d.d, d.d_v, 1.5 / std::sqrt(d.d_v));
    v.pool_b = gaussian(rng, d.d, 1, 0.05);
    auto& t = enc.text;
    t.pos4 = positive_weights(rng, 4);
    t.pos5 = positive_weights(rng, 5);
    t.w = gaussian(rng, d.d, d.d_e, 1.5 / std::sqrt(d.d_e));
    t.b = gaussian(rng, d.d, 1, 0.05);
    enc.fixed_embeddings = fixed_prompt_embeddings(d.d_e, spec.seed);
  } else {
    auto& v = enc.visual;
    v.token_w = load_blob(spec, "visual.token_w");
    v.token_bias = load_blob(spec, "visual.token_bias");
    v.pos_w = load_blob(spec, "visual.pos_w");
    v.pool_w = load_blob(spec, "visual.pool_w");
    v.pool_b = load_blob(spec, "visual.pool_b");
    auto& t = enc.text;
    t.pos4 = load_blob(spec, "text.pos4");
    t.pos5 = load_blob(spec, "text.pos5");
    t.w = load_blob(spec, "text.w");
    t.b = load_blob(spec, "text.b");
    enc.fixed_embeddings = spec.weight_files.count("text.fixed_embeddings")
                               ? load_blob(spec, "text.fixed_embeddings")
                               : fixed_prompt_embeddings(d.d_e, spec.seed);
    check_shape(v.token_w, d.d_v, d.d_in, "visual.token_w");
    check_shape(v.token_bias, d.tokens, d.d_v, "visual.token_bias");
    check_shape(v.pos_w, d.tokens, 1, "visual.pos_w");
    check_shape(v.pool_w, d.d, d.d_v, "visual.pool_w");
    check_shape(v.pool_b, d.d, 1, "visual.pool_b");
    check_shape(t.pos4, 4, 1, "text.pos4");
    check_shape(t.pos5, 5, 1, "text.pos5");
    check_shape(t.w, d.d, d.d_e, "text.w");
    check_shape(t.b, d.d, 1, "text.b");
    check_shape(enc.fixed_embeddings, 4, d.d_e, "text.fixed_embeddings");
  }
  return enc;
}

std::map<std::string, Mat> frozen_blobs(const FrozenEncoders& enc) {
  return {{"visual.token_w", enc.visual.token_w},  {"visual.token_bias", enc.visual.token_bias},
          {"visual.pos_w", enc.visual.pos_w},      {"visual.pool_w", enc.visual.pool_w},
          {"visual.pool_b", enc.visual.pool_b},    {"text.pos4", enc.text.pos4},
          {"text.pos5", enc.text.pos5},            {"text.w", enc.text.w},
          {"text.b", enc.text.b},                  {"text.fixed_embeddings", enc.fixed_embeddings}};
}

VisualTokens encode_image(const Mat& payload, const FrozenEncoders& enc) {
  const auto& d = enc.spec.dims;
  if (payload.rows() != d.tokens || payload.cols() != d.d_in) {
    throw DataError("dimension mismatch: payload " + std::to_string(payload.rows()) + "x" +
                    std::to_string(payload.cols()) + " vs encoder " + std::to_string(d.tokens) + "x" +
                    std::to_string(d.d_in));
  }
  const auto& v = enc.visual;
  VisualTokens out;
  out.tokens = payload * v.token_w.transpose() + v.token_bias;
  const Vec mean = out.tokens.transpose() * v.pos_w;
  out.pooled = (v.pool_w * mean + v.pool_b).array().tanh().matrix();
  return out;
}

VisualTokens encode_image(const Sample& s, const FrozenEncoders& enc) { return encode_image(s.payload, enc); }

VisualTokens encode_image_jvp(const Mat& payload, const Mat& dpayload, const FrozenEncoders& enc) {
  const auto base = encode_image(payload, enc);
  const auto& v = enc.visual;
  VisualTokens out;
  out.tokens = dpayload * v.token_w.transpose();
  const Vec dmean = out.tokens.transpose() * v.pos_w;
  out.pooled = (1.0 - base.pooled.array().square()).matrix().cwiseProduct(v.pool_w * dmean);
  return out;
}

Vec encode_text(const PromptSequence& prompt, const FrozenEncoders& enc) {
  const Vec& pos = enc.text.pos(prompt.length());
  if (prompt.slots.cols() != enc.spec.dims.d_e) throw DataError("prompt embedding width mismatch");
  const Vec u = prompt.slots.transpose() * pos;
  return (enc.text.w * u + enc.text.b).array().tanh().matrix();
}

Vec encode_text_jvp(const PromptSequence& prompt, const Mat& dslots, const FrozenEncoders& enc) {
  const Vec t = encode_text(prompt, enc);
  const Vec du = dslots.transpose() * enc.text.pos(prompt.length());
  return (1.0 - t.array().square()).matrix().cwiseProduct(enc.text.w * du);
}

Mat encode_text_backward(const PromptSequence& prompt, const Vec& g, const FrozenEncoders& enc) {
  const Vec t = encode_text(prompt, enc);
  const Vec gz = g.cwiseProduct((1.0 - t.array().square()).matrix());
  const Vec gu = enc.text.w.transpose() * gz;
  return enc.text.pos(prompt.length()) * gu.transpose();
}

Vec word_embedding(std::string_view word, int d_e, std::uint64_t seed) {
  std::mt19937_64 rng(fnv1a64(word) ^ (seed * 0xbf58476d1ce4e5b9ULL));
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(d_e);
  for (int i = 0; i < d_e; ++i) v(i) = nd(rng);
  return v;
}

Mat fixed_prompt_embeddings(int d_e, std::uint64_t seed) {
  Mat e(4, d_e);
  e.row(0) = word_embedding("a", d_e, seed);
  e.row(1) = word_embedding("photo", d_e, seed);
  e.row(2) = word_embedding("of", d_e, seed);
  e.row(3) = word_embedding("object", d_e, seed);
  return e;
}

PromptParams init_prompt_params(const PrimitiveVocab& vocab, int d_e, std::uint64_t seed) {
  PromptParams p;
  p.w_o.resize(vocab.n_obj(), d_e);
  p.w_a.resize(vocab.n_attr(), d_e);
  for (int o = 0; o < vocab.n_obj(); ++o) p.w_o.row(o) = word_embedding(vocab.objects[o], d_e, seed);
  for (int a = 0; a < vocab.n_attr(); ++a) p.w_a.row(a) = word_embedding(vocab.attributes[a], d_e, seed);
  p.w_ca = p.w_a;
  p.w_co = p.w_o;
  p.w_ctx = fixed_prompt_embeddings(d_e, seed).topRows(3);
  return p;
}

PromptSequence assemble_object_prompt(int obj, const TokenEmbeddingTable& table) {
  if (obj < 0 || obj >= table.learnable.w_o.rows()) throw DataError("object index out of range");
  PromptSequence p;
  p.slots.resize(4, table.fixed.cols());
  p.slots.topRows(3) = table.fixed.topRows(3);
  p.slots.row(3) = table.learnable.w_o.row(obj);
  p.kinds = {SlotKind::Fixed, SlotKind::Fixed, SlotKind::Fixed, SlotKind::Learnable};
  return p;
}

PromptSequence assemble_attribute_prompt(int attr, const Vec& e3_prime, const TokenEmbeddingTable& table) {
  if (attr < 0 || attr >= table.learnable.w_a.rows()) throw DataError("attribute index out of range");
  if (e3_prime.size() != table.fixed.cols()) throw DataError("object hint has wrong embedding width");
  PromptSequence p;
  p.slots.resize(5, table.fixed.cols());
  p.slots.topRows(3) = table.fixed.topRows(3);
  p.slots.row(3) = table.learnable.w_a.row(attr);
  p.slots.row(4) = e3_prime.transpose();
  p.kinds = {SlotKind::Fixed, SlotKind::Fixed, SlotKind::Fixed, SlotKind::Learnable, SlotKind::DynamicHint};
  return p;
}

PromptSequence assemble_composition_prompt(Composition c, const TokenEmbeddingTable& table) {
  if (c.attr < 0 || c.attr >= table.learnable.w_ca.rows() || c.obj < 0 || c.obj >= table.learnable.w_co.rows()) {
    throw DataError("composition index out of range");
  }
  PromptSequence p;
  p.slots.resize(5, table.fixed.cols());
  p.slots.topRows(3) = table.learnable.w_ctx;
  p.slots.row(3) = table.learnable.w_ca.row(c.attr);
  p.slots.row(4) = table.learnable.w_co.row(c.obj);
  p.kinds.assign(5, SlotKind::Learnable);
  return p;
}

}  // namespace ulao
