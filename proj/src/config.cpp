#include "ulao/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace ulao {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path(key) + ": wrong type");
    }
  }

  void get_number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v.is_number()) {
      out = v.get<double>();
    } else if (v.is_string() && (v == "inf" || v == "+inf")) {
      out = std::numeric_limits<double>::infinity();
    } else {
      throw ConfigError(path(key) + ": expected a number");
    }
  }

  const json& sub(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json number_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

template <typename E>
E parse_enum(Reader& r, const std::string& key, E current, E (*parse)(std::string_view)) {
  std::string s;
  r.get(key, s);
  if (s.empty()) return current;
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    throw ConfigError(r.path(key) + ": " + e.what());
  }
}

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "reference") return EncoderKind::Reference;
  if (s == "external") return EncoderKind::External;
  throw ConfigError("encoder kind must be reference|external");
}

std::string_view encoder_kind_name(EncoderKind k) { return k == EncoderKind::External ? "external" : "reference"; }

World parse_world_cfg(std::string_view s) {
  try {
    return parse_world(s);
  } catch (const std::exception&) {
    throw ConfigError("world must be cw|ow");
  }
}

}  // namespace

json hyperparams_to_json(const Hyperparams& hp) {
  return {{"tau", hp.tau},
          {"k", hp.k},
          {"r_k", hp.r_k},
          {"r_ao", hp.r_ao},
          {"r_m", hp.r_m},
          {"r_c", hp.r_c},
          {"alpha", hp.alpha},
          {"up_default", number_json(hp.up_default)},
          {"fixed_threshold", hp.fixed_threshold},
          {"lr", hp.lr},
          {"lr_schedule", hp.lr_schedule},
          {"batch_size", hp.batch_size},
          {"epochs", hp.epochs},
          {"seed", hp.seed},
          {"variant", std::string(to_string(hp.variant()))},
          {"enable_ao_branches", hp.enable_ao_branches},
          {"enable_object_hints", hp.enable_object_hints},
          {"enable_contrastive", hp.enable_contrastive},
          {"negative_source", std::string(to_string(hp.negative_source))},
          {"threshold_policy", std::string(to_string(hp.threshold_policy))},
          {"topk_renormalize", hp.topk_renormalize},
          {"delta_population", std::string(to_string(hp.delta_population))},
          {"combined_stop_grad", hp.combined_stop_grad},
          {"adam_beta1", hp.adam_beta1},
          {"adam_beta2", hp.adam_beta2},
          {"adam_eps", hp.adam_eps}};
}

Hyperparams hyperparams_from_json(const json& j, const std::string& where) {
  Hyperparams hp;
  Reader r(j, where);
  std::string variant;
  r.get("variant", variant);
  if (!variant.empty()) {
    try {
      hp.apply_variant(parse_variant(variant));
    } catch (const ConfigError& e) {
      throw ConfigError(r.path("variant") + ": " + e.what());
    }
  }
  r.get_number("tau", hp.tau);
  r.get("k", hp.k);
  r.get_number("r_k", hp.r_k);
  r.get_number("r_ao", hp.r_ao);
  r.get_number("r_m", hp.r_m);
  r.get_number("r_c", hp.r_c);
  r.get_number("alpha", hp.alpha);
  r.get_number("up_default", hp.up_default);
  r.get_number("fixed_threshold", hp.fixed_threshold);
  r.get_number("lr", hp.lr);
  r.get("lr_schedule", hp.lr_schedule);
  r.get("batch_size", hp.batch_size);
  r.get("epochs", hp.epochs);
  r.get("seed", hp.seed);
  r.get("enable_ao_branches", hp.enable_ao_branches);
  r.get("enable_object_hints", hp.enable_object_hints);
  r.get("enable_contrastive", hp.enable_contrastive);
  hp.negative_source = parse_enum(r, "negative_source", hp.negative_source, &parse_negative_source);
  hp.threshold_policy = parse_enum(r, "threshold_policy", hp.threshold_policy, &parse_threshold_policy);
  r.get("topk_renormalize", hp.topk_renormalize);
  hp.delta_population = parse_enum(r, "delta_population", hp.delta_population, &parse_delta_population);
  r.get("combined_stop_grad", hp.combined_stop_grad);
  r.get_number("adam_beta1", hp.adam_beta1);
  r.get_number("adam_beta2", hp.adam_beta2);
  r.get_number("adam_eps", hp.adam_eps);
  r.finish();
  Hyperparams want;
  if (!variant.empty()) want.apply_variant(parse_variant(variant));
  if (!variant.empty() && (want.enable_ao_branches != hp.enable_ao_branches ||
                           want.enable_object_hints != hp.enable_object_hints ||
                           want.enable_contrastive != hp.enable_contrastive)) {
    throw ConfigError(r.path("variant") + ": conflicts with the explicit enable_* flags");
  }
  hp.check();
  return hp;
}

json synthetic_to_json(const SyntheticConfig& c) {
  return {{"n_attr", c.n_attr},
          {"n_obj", c.n_obj},
          {"d_latent", c.d_latent},
          {"tokens", c.tokens},
          {"seen_density", c.seen_density},
          {"unseen_count", c.unseen_count},
          {"samples_per_pair", c.samples_per_pair},
          {"noise_sigma", c.noise_sigma},
          {"distractor_rate", c.distractor_rate},
          {"distractor_strength", c.distractor_strength},
          {"contextuality", c.contextuality},
          {"binding", c.binding},
          {"object_scale", c.object_scale},
          {"train_fraction", c.train_fraction},
          {"val_fraction", c.val_fraction},
          {"unseen_val_fraction", c.unseen_val_fraction},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_from_json(const json& j, const std::string& where) {
  SyntheticConfig c;
  Reader r(j, where);
  r.get("n_attr", c.n_attr);
  r.get("n_obj", c.n_obj);
  r.get("d_latent", c.d_latent);
  r.get("tokens", c.tokens);
  r.get_number("seen_density", c.seen_density);
  r.get("unseen_count", c.unseen_count);
  r.get("samples_per_pair", c.samples_per_pair);
  r.get_number("noise_sigma", c.noise_sigma);
  r.get_number("distractor_rate", c.distractor_rate);
  r.get_number("distractor_strength", c.distractor_strength);
  r.get_number("contextuality", c.contextuality);
  r.get_number("binding", c.binding);
  r.get_number("object_scale", c.object_scale);
  r.get_number("train_fraction", c.train_fraction);
  r.get_number("val_fraction", c.val_fraction);
  r.get_number("unseen_val_fraction", c.unseen_val_fraction);
  r.get("seed", c.seed);
  r.finish();
  c.check();
  return c;
}

json encoder_spec_to_json(const FrozenEncoderSpec& s) {
  json w = json::object();
  for (const auto& [k, v] : s.weight_files) w[k] = v.string();
  const auto& d = s.dims;
  return {{"kind", std::string(encoder_kind_name(s.kind))},
          {"seed", s.seed},
          {"d_in", d.d_in},
          {"d_v", d.d_v},
          {"d", d.d},
          {"d_e", d.d_e},
          {"tokens", d.tokens},
          {"input", d.input == PayloadKind::Tokens ? "tokens" : "latent"},
          {"weights", w}};
}

FrozenEncoderSpec encoder_spec_from_json(const json& j, const std::string& where) {
  FrozenEncoderSpec s;
  Reader r(j, where);
  std::string kind = "reference", input = "latent";
  r.get("kind", kind);
  s.kind = parse_encoder_kind(kind);
  r.get("seed", s.seed);
  r.get("d_in", s.dims.d_in);
  r.get("d_v", s.dims.d_v);
  r.get("d", s.dims.d);
  r.get("d_e", s.dims.d_e);
  r.get("tokens", s.dims.tokens);
  r.get("input", input);
  if (input != "latent" && input != "tokens") throw ConfigError(r.path("input") + ": expected latent|tokens");
  s.dims.input = input == "tokens" ? PayloadKind::Tokens : PayloadKind::Latent;
  if (r.has("weights")) {
    for (const auto& [k, v] : r.sub("weights").items()) s.weight_files[k] = v.get<std::string>();
  }
  r.finish();
  return s;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  Reader root(doc, "config");
  if (root.has("data")) {
    Reader d(root.sub("data"), "data");
    std::string manifest;
    d.get("manifest", manifest);
    if (!manifest.empty()) cfg.data.manifest = manifest;
    if (d.has("synthetic")) cfg.data.synthetic = synthetic_from_json(d.sub("synthetic"), "data.synthetic");
    d.finish();
    if (cfg.data.manifest && cfg.data.synthetic) throw ConfigError("data: give either manifest or synthetic, not both");
  }
  if (root.has("model")) {
    Reader m(root.sub("model"), "model");
    m.get("d_v", cfg.model.d_v);
    m.get("d", cfg.model.d);
    m.get("d_e", cfg.model.d_e);
    m.get("heads", cfg.model.heads);
    m.get("mixer_hidden", cfg.model.mixer_hidden);
    if (m.has("encoder")) {
      Reader e(m.sub("encoder"), "model.encoder");
      std::string kind = "reference";
      e.get("kind", kind);
      try {
        cfg.model.encoder = parse_encoder_kind(kind);
      } catch (const ConfigError& err) {
        throw ConfigError(e.path("kind") + ": " + err.what());
      }
      e.get("seed", cfg.model.encoder_seed);
      if (e.has("weights")) {
        const json& w = e.sub("weights");
        if (!w.is_object()) throw ConfigError("model.encoder.weights: expected an object");
        for (const auto& [k, v] : w.items()) {
          if (!v.is_string()) throw ConfigError("model.encoder.weights." + k + ": expected a path");
          cfg.model.encoder_weights[k] = v.get<std::string>();
        }
      }
      e.finish();
    }
    m.finish();
    const auto& mm = cfg.model;
    if (mm.d_v < 1 || mm.d < 1 || mm.d_e < 1) throw ConfigError("model: dimensions must be >= 1");
    if (mm.heads < 1 || mm.d % mm.heads != 0) throw ConfigError("model.heads must divide model.d");
    if (mm.mixer_hidden < 1) throw ConfigError("model.mixer_hidden must be >= 1");
  }
  if (root.has("train")) cfg.train = hyperparams_from_json(root.sub("train"), "train");
  if (root.has("eval")) {
    Reader e(root.sub("eval"), "eval");
    std::string world;
    e.get("world", world);
    if (!world.empty()) cfg.eval.world = parse_world_cfg(world);
    e.get("report", cfg.eval.report);
    e.get("predictions", cfg.eval.predictions);
    e.finish();
  }
  root.finish();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json data = json::object();
  if (cfg.data.manifest) data["manifest"] = cfg.data.manifest->string();
  if (cfg.data.synthetic) data["synthetic"] = synthetic_to_json(*cfg.data.synthetic);
  json weights = json::object();
  for (const auto& [k, v] : cfg.model.encoder_weights) weights[k] = v.string();
  json model = {{"d_v", cfg.model.d_v},
                {"d", cfg.model.d},
                {"d_e", cfg.model.d_e},
                {"heads", cfg.model.heads},
                {"mixer_hidden", cfg.model.mixer_hidden},
                {"encoder",
                 {{"kind", std::string(encoder_kind_name(cfg.model.encoder))},
                  {"seed", cfg.model.encoder_seed},
                  {"weights", weights}}}};
  json eval = {{"world", std::string(to_string(cfg.eval.world))},
               {"report", cfg.eval.report},
               {"predictions", cfg.eval.predictions}};
  return {{"data", data}, {"model", model}, {"train", hyperparams_to_json(cfg.train)}, {"eval", eval}};
}

void apply_override(json& doc, std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw ConfigError("empty override key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (part.empty()) throw ConfigError("malformed override key '" + std::string(dotted_key) + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string_view::npos) {
      json v = json::parse(value, nullptr, false);
      (*node)[part] = v.is_discarded() ? json(std::string(value)) : v;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  }
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  return parse_run_config(doc);
}

ModelDims model_dims(const ModelSection& m, const PayloadShape& shape) {
  ModelDims d;
  d.enc.input = shape.kind;
  d.enc.tokens = shape.rows;
  d.enc.d_in = shape.cols;
  d.enc.d_v = shape.kind == PayloadKind::Tokens ? shape.cols : m.d_v;
  d.enc.d = m.d;
  d.enc.d_e = m.d_e;
  d.heads = m.heads;
  d.mixer_hidden = m.mixer_hidden;
  return d;
}

FrozenEncoderSpec encoder_spec(const ModelSection& m, const PayloadShape& shape) {
  FrozenEncoderSpec s;
  s.kind = m.encoder;
  s.seed = m.encoder_seed;
  s.dims = model_dims(m, shape).enc;
  s.weight_files = m.encoder_weights;
  return s;
}

Dataset materialize_dataset(const DataSection& d) {
  if (d.manifest) return load_dataset(*d.manifest);
  if (d.synthetic) return generate_synthetic(*d.synthetic);
  throw ConfigError("data: need data.manifest or data.synthetic");
}

}  // namespace ulao
