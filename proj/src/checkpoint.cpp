#include "ulao/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "ulao/config.hpp"
#include "ulao/tensor_io.hpp"

namespace ulao {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json bound_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

double bound_from(const json& j) {
  if (j.is_string() && j == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

void write_group(const Params& p, const std::filesystem::path& dir, const std::string& sub, json& list) {
  std::filesystem::create_directories(dir / sub);
  visit_params(p, [&](std::string_view name, const auto& t) {
    const std::string file = sub + "/" + std::string(name) + ".ulao";
    write_tensor(dir / file, to_tensor(t));
    list.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"file", file}});
  });
}

void read_group(Params& p, const std::filesystem::path& dir, const json& list) {
  std::map<std::string, std::string> files;
  for (const auto& e : list) files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();
  visit_params(p, [&](std::string_view name, auto& t) {
    auto it = files.find(std::string(name));
    if (it == files.end()) throw DataError("checkpoint lacks tensor '" + std::string(name) + "'");
    const Tensor raw = read_tensor(dir / it->second);
    Mat m = raw.dims.size() == 1 ? Mat(tensor_to_vec(raw)) : tensor_to_mat(raw);
    if (m.rows() != t.rows() || m.cols() != t.cols()) {
      throw DataError("checkpoint tensor '" + std::string(name) + "' has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(t.rows()) + "x" +
                      std::to_string(t.cols()));
    }
    t = m;
  });
}

}  // namespace

void save_checkpoint(const ModelState& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json idx;
  idx["format"] = "ulao-checkpoint";
  idx["version"] = kCheckpointVersion;
  idx["step"] = s.step;
  idx["vocab"] = {{"attributes", s.vocab.attributes}, {"objects", s.vocab.objects}};
  idx["vocab_hash"] = hex64(s.vocab.hash());
  idx["dims"] = {{"heads", s.dims.heads}, {"mixer_hidden", s.dims.mixer_hidden}};
  idx["encoder"] = encoder_spec_to_json(s.enc.spec);
  idx["hyperparams"] = hyperparams_to_json(s.hp);
  idx["hyperparams"]["detach_hints"] = s.hp.detach_hints;

  const auto& th = s.thresholds;
  json overrides = json::array();
  for (const auto& [c, u] : th.up_overrides()) overrides.push_back({{"attr", c.attr}, {"obj", c.obj}, {"up", bound_json(u)}});
  json entries = json::array();
  for (const auto& [c, e] : th.entries()) {
    entries.push_back({{"attr", c.attr},
                       {"obj", c.obj},
                       {"th", e.th},
                       {"up", bound_json(e.up)},
                       {"last_update_step", e.last_update_step}});
  }
  idx["thresholds"] = {{"policy", std::string(to_string(th.policy()))},
                       {"up_default", bound_json(th.up_default())},
                       {"fixed_value", th.fixed_value()},
                       {"up_overrides", overrides},
                       {"entries", entries}};

  json params = json::array(), m = json::array(), v = json::array();
  write_group(s.params, dir, "params", params);
  write_group(s.adam_m, dir, "adam_m", m);
  write_group(s.adam_v, dir, "adam_v", v);
  idx["params"] = params;
  idx["adam_m"] = m;
  idx["adam_v"] = v;

  std::ofstream out(dir / "index.json");
  if (!out) throw DataError("cannot write " + (dir / "index.json").string());
  out << idx.dump(2) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw DataError("missing file: " + (dir / "index.json").string());
  const json idx = json::parse(in, nullptr, false);
  if (idx.is_discarded() || idx.value("format", "") != "ulao-checkpoint") {
    throw DataError("not a checkpoint index: " + (dir / "index.json").string());
  }
  if (idx.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  try {
    PrimitiveVocab vocab;
    vocab.attributes = idx.at("vocab").at("attributes").get<std::vector<std::string>>();
    vocab.objects = idx.at("vocab").at("objects").get<std::vector<std::string>>();
    if (hex64(vocab.hash()) != idx.at("vocab_hash").get<std::string>()) throw DataError("checkpoint vocabulary hash mismatch");

    json hpj = idx.at("hyperparams");
    const bool detach = hpj.value("detach_hints", true);
    hpj.erase("detach_hints");
    Hyperparams hp = hyperparams_from_json(hpj, "hyperparams");
    hp.detach_hints = detach;

    const FrozenEncoderSpec spec = encoder_spec_from_json(idx.at("encoder"), "encoder");
    ModelDims dims;
    dims.enc = spec.dims;
    dims.heads = idx.at("dims").at("heads").get<int>();
    dims.mixer_hidden = idx.at("dims").at("mixer_hidden").get<int>();

    ModelState s = init_model(vocab, dims, spec, hp);
    read_group(s.params, dir, idx.at("params"));
    read_group(s.adam_m, dir, idx.at("adam_m"));
    read_group(s.adam_v, dir, idx.at("adam_v"));
    s.step = idx.at("step").get<std::int64_t>();

    const json& tj = idx.at("thresholds");
    std::map<Composition, double> overrides;
    for (const auto& o : tj.at("up_overrides")) {
      overrides[{o.at("attr").get<int>(), o.at("obj").get<int>()}] = bound_from(o.at("up"));
    }
    s.thresholds = ThresholdTable(parse_threshold_policy(tj.at("policy").get<std::string>()),
                                  bound_from(tj.at("up_default")), tj.at("fixed_value").get<double>(), overrides);
    for (const auto& e : tj.at("entries")) {
      s.thresholds.restore({e.at("attr").get<int>(), e.at("obj").get<int>()},
                           {e.at("th").get<double>(), bound_from(e.at("up")), e.at("last_update_step").get<std::int64_t>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint index: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed checkpoint index: ") + e.what());
  }
}

void check_vocab(const ModelState& s, const PrimitiveVocab& vocab) {
  if (s.vocab.hash() != vocab.hash()) {
    throw DataError("vocabulary mismatch: checkpoint " + hex64(s.vocab.hash()) + " vs dataset " + hex64(vocab.hash()));
  }
}

}  // namespace ulao
