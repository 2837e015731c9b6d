#pragma once

#include <filesystem>

#include "ulao/model.hpp"

namespace ulao {

// Directory layout: index.json plus one tensor file per learnable tensor and per
// Adam moment (params/<name>.ulao, adam_m/<name>.ulao, adam_v/<name>.ulao).
// Tensors are stored as f32, so reloaded parameters are the f32 roundings.
void save_checkpoint(const ModelState& s, const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);

// DataError("vocabulary mismatch ...") when the checkpoint was trained on other primitives.
void check_vocab(const ModelState& s, const PrimitiveVocab& vocab);

}  // namespace ulao
