#include "ulao/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "ulao/tensor_io.hpp"

namespace ulao {

using nlohmann::json;

namespace {

std::optional<int> find_index(const std::vector<std::string>& names, std::string_view n) {
  auto it = std::find(names.begin(), names.end(), n);
  if (it == names.end()) return std::nullopt;
  return static_cast<int>(it - names.begin());
}

std::vector<Composition> sorted_unique(std::vector<Composition> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw DataError(where + ": missing key '" + key + "'");
  return j.at(key);
}

std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected a list of names");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw DataError(where + ": expected a list of names");
    out.push_back(e.get<std::string>());
  }
  return out;
}

Composition parse_pair(const json& j, const PrimitiveVocab& vocab, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_string() || !j[1].is_string()) {
    throw DataError(where + ": expected [attribute, object]");
  }
  auto a = vocab.attr_index(j[0].get<std::string>());
  auto o = vocab.obj_index(j[1].get<std::string>());
  if (!a || !o) {
    throw DataError("label outside declared space: " + where + " [" + j[0].get<std::string>() + ", " +
                    j[1].get<std::string>() + "]");
  }
  return {*a, *o};
}

json pair_json(const PrimitiveVocab& v, Composition c) {
  return json::array({v.attributes[c.attr], v.objects[c.obj]});
}

}  // namespace

std::optional<int> PrimitiveVocab::attr_index(std::string_view name) const { return find_index(attributes, name); }
std::optional<int> PrimitiveVocab::obj_index(std::string_view name) const { return find_index(objects, name); }

void PrimitiveVocab::check() const {
  if (attributes.empty() || objects.empty()) throw DataError("vocabulary: attribute and object lists must be non-empty");
  for (const auto* list : {&attributes, &objects}) {
    std::set<std::string> seen(list->begin(), list->end());
    if (seen.size() != list->size()) throw DataError("vocabulary: duplicate primitive name");
  }
}

std::uint64_t PrimitiveVocab::hash() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& a : attributes) h = fnv1a64(a + '\x1f', h);
  h = fnv1a64("\x1e", h);
  for (const auto& o : objects) h = fnv1a64(o + '\x1f', h);
  return h;
}

CompositionSpace::CompositionSpace(int n_attr, int n_obj, std::vector<Composition> seen,
                                   std::vector<Composition> unseen)
    : n_attr_(n_attr),
      n_obj_(n_obj),
      seen_(sorted_unique(std::move(seen))),
      unseen_(sorted_unique(std::move(unseen))),
      seen_mask_(full_size(), 0),
      unseen_mask_(full_size(), 0) {
  for (auto c : seen_)
    if (in_range(c)) seen_mask_[flat(c)] = 1;
  for (auto c : unseen_)
    if (in_range(c)) unseen_mask_[flat(c)] = 1;
}

World parse_world(std::string_view s) {
  if (s == "cw" || s == "CW") return World::CW;
  if (s == "ow" || s == "OW") return World::OW;
  throw ConfigError("world must be 'cw' or 'ow', got '" + std::string(s) + "'");
}

std::string_view to_string(World w) { return w == World::CW ? "cw" : "ow"; }

std::vector<Composition> build_label_space(const CompositionSpace& space, World world) {
  std::vector<Composition> out;
  for (int a = 0; a < space.n_attr(); ++a) {
    for (int o = 0; o < space.n_obj(); ++o) {
      Composition c{a, o};
      if (world == World::OW || space.is_seen(c) || space.is_unseen(c)) out.push_back(c);
    }
  }
  return out;
}

bool ValidationReport::has(std::string_view kind) const {
  auto match = [&](const ValidationIssue& i) { return i.kind == kind; };
  return std::any_of(violations.begin(), violations.end(), match) ||
         std::any_of(warnings.begin(), warnings.end(), match);
}

std::string composition_name(const PrimitiveVocab& vocab, Composition c) {
  auto name = [](const std::vector<std::string>& v, int i) {
    return (i >= 0 && i < static_cast<int>(v.size())) ? v[i] : "#" + std::to_string(i);
  };
  return name(vocab.attributes, c.attr) + " " + name(vocab.objects, c.obj);
}

ValidationReport validate_split(const Dataset& ds) {
  ValidationReport r;
  const auto& sp = ds.space;
  r.n_attr = sp.n_attr();
  r.n_obj = sp.n_obj();
  r.n_seen = sp.seen().size();
  r.n_unseen = sp.unseen().size();
  r.ow_unseen_space = sp.full_size() >= r.n_seen ? sp.full_size() - r.n_seen : 0;
  r.n_train = ds.train.size();
  r.n_val = ds.val.size();
  r.n_test = ds.test.size();

  if (sp.n_attr() != ds.vocab.n_attr() || sp.n_obj() != ds.vocab.n_obj()) {
    r.violations.push_back({"vocabulary mismatch", "composition space dims differ from vocabulary sizes"});
  }
  for (const auto* list : {&sp.seen(), &sp.unseen()}) {
    for (auto c : *list) {
      if (!sp.in_range(c)) {
        r.violations.push_back({"label outside declared space", "pair index out of range"});
      }
    }
  }
  for (auto c : sp.seen()) {
    if (sp.is_unseen(c)) r.violations.push_back({"overlap", composition_name(ds.vocab, c)});
  }

  std::vector<int> attr_seen(sp.n_attr(), 0), obj_seen(sp.n_obj(), 0);
  for (auto c : sp.seen()) {
    if (!sp.in_range(c)) continue;
    ++attr_seen[c.attr];
    ++obj_seen[c.obj];
  }
  for (int a = 0; a < sp.n_attr(); ++a) {
    if (attr_seen[a] == 0) {
      r.warnings.push_back({"orphan primitive", "attribute " + (a < ds.vocab.n_attr() ? ds.vocab.attributes[a] : std::to_string(a))});
    }
  }
  for (int o = 0; o < sp.n_obj(); ++o) {
    if (obj_seen[o] == 0) {
      r.warnings.push_back({"orphan primitive", "object " + (o < ds.vocab.n_obj() ? ds.vocab.objects[o] : std::to_string(o))});
    }
  }

  std::unordered_set<std::string> ids;
  std::set<Composition> train_pairs, test_seen, test_unseen;
  auto check_split = [&](const std::vector<Sample>& split, const char* name, bool seen_only) {
    for (const auto& s : split) {
      if (!ids.insert(s.id).second) r.violations.push_back({"duplicate sample id", s.id});
      const bool known = sp.is_seen(s.label) || (!seen_only && sp.is_unseen(s.label));
      if (!known) {
        r.violations.push_back({"label outside declared space",
                                std::string(name) + " sample " + s.id + ": " + composition_name(ds.vocab, s.label)});
      }
      if (s.payload.rows() != ds.shape.rows || s.payload.cols() != ds.shape.cols) {
        r.violations.push_back({"dimension mismatch", s.id});
      }
    }
  };
  check_split(ds.train, "train", true);
  check_split(ds.val, "val", false);
  check_split(ds.test, "test", false);

  for (const auto& s : ds.train) train_pairs.insert(s.label);
  for (const auto& s : ds.test) {
    if (sp.is_seen(s.label)) test_seen.insert(s.label);
    if (sp.is_unseen(s.label)) test_unseen.insert(s.label);
  }
  r.train_pairs = train_pairs.size();
  r.test_seen_pairs = test_seen.size();
  r.test_unseen_pairs = test_unseen.size();
  return r;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("missing file: " + manifest_path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const std::string where = manifest_path.filename().string();
  const auto base = manifest_path.parent_path();

  Dataset ds;
  ds.vocab.attributes = string_list(require(j, "attributes", where), where + ".attributes");
  ds.vocab.objects = string_list(require(j, "objects", where), where + ".objects");
  ds.vocab.check();

  std::vector<Composition> seen, unseen;
  for (const auto& p : require(j, "seen_pairs", where)) seen.push_back(parse_pair(p, ds.vocab, "seen_pairs"));
  if (j.contains("unseen_pairs")) {
    for (const auto& p : j.at("unseen_pairs")) unseen.push_back(parse_pair(p, ds.vocab, "unseen_pairs"));
  }
  ds.space = CompositionSpace(ds.vocab.n_attr(), ds.vocab.n_obj(), std::move(seen), std::move(unseen));

  const auto& payload = require(j, "payload", where);
  const auto kind = require(payload, "kind", where + ".payload").get<std::string>();
  if (kind == "latent") {
    ds.shape.kind = PayloadKind::Latent;
  } else if (kind == "tokens") {
    ds.shape.kind = PayloadKind::Tokens;
  } else {
    throw DataError(where + ".payload.kind must be 'latent' or 'tokens'");
  }
  ds.shape.rows = require(payload, "rows", where + ".payload").get<int>();
  ds.shape.cols = require(payload, "cols", where + ".payload").get<int>();
  if (ds.shape.rows < 1 || ds.shape.cols < 1) throw DataError(where + ".payload: dims must be positive");

  const auto& splits = require(j, "splits", where);
  std::unordered_set<std::string> ids;
  auto read_split = [&](const char* name, std::vector<Sample>& out) {
    for (const auto& e : require(splits, name, where + ".splits")) {
      Sample s;
      s.id = require(e, "id", name).get<std::string>();
      if (!ids.insert(s.id).second) throw DataError("duplicate sample id: " + s.id);
      s.label = parse_pair(require(e, "label", s.id), ds.vocab, std::string(name) + " sample " + s.id);
      if (e.contains("distractor") && !e.at("distractor").is_null()) {
        s.distractor = parse_pair(e.at("distractor"), ds.vocab, s.id + ".distractor");
      }
      const auto& t = require(e, "tensor", s.id);
      if (t.is_string()) {
        s.payload = tensor_to_mat(read_tensor(base / t.get<std::string>()));
      } else if (t.is_array()) {
        const auto rows = static_cast<Eigen::Index>(t.size());
        const auto cols = rows > 0 ? static_cast<Eigen::Index>(t[0].size()) : 0;
        s.payload.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
          if (!t[r].is_array() || static_cast<Eigen::Index>(t[r].size()) != cols) {
            throw DataError("dimension mismatch: ragged inline latent in " + s.id);
          }
          for (Eigen::Index c = 0; c < cols; ++c) s.payload(r, c) = t[r][c].get<double>();
        }
      } else {
        throw DataError(s.id + ": tensor must be a path or an inline matrix");
      }
      if (s.payload.rows() != ds.shape.rows || s.payload.cols() != ds.shape.cols) {
        throw DataError("dimension mismatch: " + s.id + " is " + std::to_string(s.payload.rows()) + "x" +
                        std::to_string(s.payload.cols()) + ", header declares " + std::to_string(ds.shape.rows) +
                        "x" + std::to_string(ds.shape.cols));
      }
      out.push_back(std::move(s));
    }
  };
  read_split("train", ds.train);
  read_split("val", ds.val);
  read_split("test", ds.test);

  const auto report = validate_split(ds);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw DataError(v.kind + ": " + v.detail);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "tensors");
  json j;
  j["attributes"] = ds.vocab.attributes;
  j["objects"] = ds.vocab.objects;
  j["seen_pairs"] = json::array();
  for (auto c : ds.space.seen()) j["seen_pairs"].push_back(pair_json(ds.vocab, c));
  j["unseen_pairs"] = json::array();
  for (auto c : ds.space.unseen()) j["unseen_pairs"].push_back(pair_json(ds.vocab, c));
  j["payload"] = {{"kind", ds.shape.kind == PayloadKind::Latent ? "latent" : "tokens"},
                  {"rows", ds.shape.rows},
                  {"cols", ds.shape.cols}};
  auto dump_split = [&](const std::vector<Sample>& split) {
    json arr = json::array();
    for (const auto& s : split) {
      const std::string rel = "tensors/" + s.id + ".ulao";
      write_tensor(out_dir / rel, to_tensor(s.payload));
      json e = {{"id", s.id}, {"label", pair_json(ds.vocab, s.label)}, {"tensor", rel}};
      if (s.distractor) e["distractor"] = pair_json(ds.vocab, *s.distractor);
      arr.push_back(std::move(e));
    }
    return arr;
  };
  j["splits"] = {{"train", dump_split(ds.train)}, {"val", dump_split(ds.val)}, {"test", dump_split(ds.test)}};
  std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (out_dir / "manifest.json").string());
  os << j.dump(1) << '\n';
}

}  // namespace ulao
