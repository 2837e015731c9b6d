#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ulao/common.hpp"

namespace ulao {

struct PrimitiveVocab {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;

  int n_attr() const { return static_cast<int>(attributes.size()); }
  int n_obj() const { return static_cast<int>(objects.size()); }
  std::optional<int> attr_index(std::string_view name) const;
  std::optional<int> obj_index(std::string_view name) const;
  // Throws DataError when a list is empty or holds duplicate names.
  void check() const;
  std::uint64_t hash() const;
};

struct Composition {
  int attr = 0;
  int obj = 0;
  auto operator<=>(const Composition&) const = default;
};

// Seen / unseen partitions of the full attribute x object product. Lists are kept
// sorted attribute-major; membership lookups go through dense masks.
class CompositionSpace {
 public:
  CompositionSpace() = default;
  CompositionSpace(int n_attr, int n_obj, std::vector<Composition> seen, std::vector<Composition> unseen);

  int n_attr() const { return n_attr_; }
  int n_obj() const { return n_obj_; }
  std::size_t full_size() const { return static_cast<std::size_t>(n_attr_) * static_cast<std::size_t>(n_obj_); }
  const std::vector<Composition>& seen() const { return seen_; }
  const std::vector<Composition>& unseen() const { return unseen_; }

  bool in_range(Composition c) const { return c.attr >= 0 && c.attr < n_attr_ && c.obj >= 0 && c.obj < n_obj_; }
  bool is_seen(Composition c) const { return in_range(c) && seen_mask_[flat(c)]; }
  bool is_unseen(Composition c) const { return in_range(c) && unseen_mask_[flat(c)]; }
  std::size_t flat(Composition c) const { return static_cast<std::size_t>(c.attr) * n_obj_ + c.obj; }

 private:
  int n_attr_ = 0;
  int n_obj_ = 0;
  std::vector<Composition> seen_;
  std::vector<Composition> unseen_;
  std::vector<std::uint8_t> seen_mask_;
  std::vector<std::uint8_t> unseen_mask_;
};

enum class PayloadKind { Latent, Tokens };

struct PayloadShape {
  PayloadKind kind = PayloadKind::Latent;
  int rows = 1;  // token positions T
  int cols = 1;  // latent or token width
  bool operator==(const PayloadShape&) const = default;
};

struct Sample {
  std::string id;
  Mat payload;  // rows x cols per PayloadShape
  Composition label;
  // Second composition rendered into the payload by the synthetic generator, if any.
  std::optional<Composition> distractor;
};

struct Dataset {
  PrimitiveVocab vocab;
  CompositionSpace space;
  PayloadShape shape;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

enum class World { CW, OW };
World parse_world(std::string_view s);
std::string_view to_string(World w);

// CW: seen u unseen; OW: the whole product. Both in attribute-major order.
std::vector<Composition> build_label_space(const CompositionSpace& space, World world);
inline std::vector<Composition> build_label_space(const Dataset& ds, World world) {
  return build_label_space(ds.space, world);
}

struct ValidationIssue {
  std::string kind;  // "overlap", "orphan primitive", "label outside declared space", ...
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> violations;
  std::vector<ValidationIssue> warnings;

  int n_attr = 0;
  int n_obj = 0;
  std::size_t n_seen = 0;
  std::size_t n_unseen = 0;
  std::size_t ow_unseen_space = 0;  // |full| - |seen|
  std::size_t train_pairs = 0;
  std::size_t test_seen_pairs = 0;
  std::size_t test_unseen_pairs = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view kind) const;
};

ValidationReport validate_split(const Dataset& ds);

// Manifest ingestion. Tensor paths are resolved relative to the manifest directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes manifest.json and one tensor file per sample under out_dir/tensors.
void save_dataset(const Dataset& ds, const std::filesystem::path& out_dir);

std::string composition_name(const PrimitiveVocab& vocab, Composition c);

}  // namespace ulao
