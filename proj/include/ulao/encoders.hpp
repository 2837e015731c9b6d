#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ulao/common.hpp"
#include "ulao/data.hpp"

namespace ulao {

struct EncoderDims {
  int d_in = 16;  // latent width (or d_v when the payload already holds tokens)
  int d_v = 16;
  int d = 16;
  int d_e = 16;
  int tokens = 4;
  PayloadKind input = PayloadKind::Latent;
  bool operator==(const EncoderDims&) const = default;
};

enum class EncoderKind { Reference, External };

struct FrozenEncoderSpec {
  EncoderKind kind = EncoderKind::Reference;
  std::uint64_t seed = 0;
  EncoderDims dims;
  // External kind only: blob name -> tensor file. Names are listed in frozen_blob_names().
  std::map<std::string, std::filesystem::path> weight_files;
};

const std::vector<std::string>& frozen_blob_names();

struct VisualTokens {
  Mat tokens;  // T x d_v
  Vec pooled;  // d (the pooled representation is projected into the shared space)
};

// tokens = latent * W^T + bias (per position); pooled = tanh(P * sum_t w_t x_t + c).
struct VisualEncoder {
  Mat token_w;     // d_v x d_in
  Mat token_bias;  // T x d_v
  Vec pos_w;       // T
  Mat pool_w;      // d x d_v
  Vec pool_b;      // d
};

// u = sum_l w_l e_l ; t = tanh(W u + b). Separate positional weights for 4- and 5-slot prompts.
struct TextEncoder {
  Vec pos4;
  Vec pos5;
  Mat w;  // d x d_e
  Vec b;  // d

  const Vec& pos(int slots) const;
};

struct FrozenEncoders {
  FrozenEncoderSpec spec;
  VisualEncoder visual;
  TextEncoder text;
  Mat fixed_embeddings;  // rows e0 "a", e1 "photo", e2 "of", e3 "object"

  bool operator==(const FrozenEncoders& o) const;
};

FrozenEncoders make_frozen_encoders(const FrozenEncoderSpec& spec);

// Named views of every frozen blob (for checkpointing and immutability checks).
std::map<std::string, Mat> frozen_blobs(const FrozenEncoders& enc);

VisualTokens encode_image(const Mat& payload, const FrozenEncoders& enc);
VisualTokens encode_image(const Sample& s, const FrozenEncoders& enc);
// Directional derivative of encode_image along dpayload.
VisualTokens encode_image_jvp(const Mat& payload, const Mat& dpayload, const FrozenEncoders& enc);

enum class SlotKind { Fixed, Learnable, DynamicHint };

struct PromptSequence {
  Mat slots;  // L x d_e
  std::vector<SlotKind> kinds;
  int length() const { return static_cast<int>(slots.rows()); }
};

Vec encode_text(const PromptSequence& prompt, const FrozenEncoders& enc);
Vec encode_text_jvp(const PromptSequence& prompt, const Mat& dslots, const FrozenEncoders& enc);
// Gradient of <g, encode_text(prompt)> with respect to each slot (L x d_e).
Mat encode_text_backward(const PromptSequence& prompt, const Vec& g, const FrozenEncoders& enc);

// Learnable prompt embeddings. w_ctx holds w0, w1, w2 of the composition prompt.
struct PromptParams {
  Mat w_o;    // n_obj x d_e
  Mat w_a;    // n_attr x d_e
  Mat w_ctx;  // 3 x d_e
  Mat w_ca;   // n_attr x d_e
  Mat w_co;   // n_obj x d_e
};

struct TokenEmbeddingTable {
  const Mat& fixed;  // e0..e3
  const PromptParams& learnable;
};

// Deterministic stand-in for a pretrained word embedding of `word`.
Vec word_embedding(std::string_view word, int d_e, std::uint64_t seed);
PromptParams init_prompt_params(const PrimitiveVocab& vocab, int d_e, std::uint64_t seed);
Mat fixed_prompt_embeddings(int d_e, std::uint64_t seed);

PromptSequence assemble_object_prompt(int obj, const TokenEmbeddingTable& table);
PromptSequence assemble_attribute_prompt(int attr, const Vec& e3_prime, const TokenEmbeddingTable& table);
PromptSequence assemble_composition_prompt(Composition c, const TokenEmbeddingTable& table);

}  // namespace ulao
