#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulao/data.hpp"
#include "ulao/encoders.hpp"
#include "ulao/model.hpp"
#include "ulao/synthetic.hpp"

namespace ulao {

struct DataSection {
  std::optional<std::filesystem::path> manifest;
  std::optional<SyntheticConfig> synthetic;
};

struct ModelSection {
  int d_v = 16;
  int d = 16;
  int d_e = 16;
  int heads = 2;
  int mixer_hidden = 32;
  EncoderKind encoder = EncoderKind::Reference;
  std::uint64_t encoder_seed = 0;
  std::map<std::string, std::filesystem::path> encoder_weights;
};

struct EvalSection {
  World world = World::CW;
  std::string report = "report.json";
  std::string predictions = "predictions.tsv";
};

// Sections: data, model, train, eval. Unknown keys are rejected with the dotted path.
struct RunConfig {
  DataSection data;
  ModelSection model;
  Hyperparams train;
  EvalSection eval;
};

RunConfig parse_run_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);

// Sets doc[a][b]... = value, parsing value as JSON when possible and as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view dotted_key, std::string_view value);

// Reads a JSON document (or starts from {} when path is empty) and applies overrides in order.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

nlohmann::json hyperparams_to_json(const Hyperparams& hp);
Hyperparams hyperparams_from_json(const nlohmann::json& j, const std::string& where = "train");
nlohmann::json synthetic_to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_from_json(const nlohmann::json& j, const std::string& where = "data.synthetic");
nlohmann::json encoder_spec_to_json(const FrozenEncoderSpec& s);
FrozenEncoderSpec encoder_spec_from_json(const nlohmann::json& j, const std::string& where = "encoder");

ModelDims model_dims(const ModelSection& m, const PayloadShape& shape);
FrozenEncoderSpec encoder_spec(const ModelSection& m, const PayloadShape& shape);

// Loads the manifest or generates the synthetic set named by the data section.
Dataset materialize_dataset(const DataSection& d);

}  // namespace ulao
