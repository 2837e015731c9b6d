// ulao: data generation, training, evaluation and inspection.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ulao/checkpoint.hpp"
#include "ulao/config.hpp"
#include "ulao/evaluation.hpp"
#include "ulao/training.hpp"

namespace fs = std::filesystem;
using namespace ulao;
using nlohmann::json;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Leftover "--a.b value" pairs become config overrides.
Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& k = extras[i];
    if (k.rfind("--", 0) != 0 || k.find('.') == std::string::npos) {
      throw ConfigError("unexpected argument '" + k + "' (overrides look like --section.key value)");
    }
    std::string key = k.substr(2), value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override '" + k + "' needs a value");
      value = extras[++i];
    }
    out.emplace_back(key, value);
  }
  return out;
}

void add_seed_env(Overrides& ov, bool synthetic_too) {
  const char* seed = std::getenv("ULAO_SEED");
  if (!seed) return;
  ov.emplace_back("train.seed", seed);
  if (synthetic_too) ov.emplace_back("data.synthetic.seed", seed);
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_history(const fs::path& dir, const History& h, const Hyperparams& hp, const PrimitiveVocab& vocab) {
  std::vector<std::string> groups;
  Params probe;
  visit_params(probe, [&](std::string_view name, auto&) {
    if (group_is_active(name, hp)) groups.emplace_back(name);
  });
  std::ofstream loss(dir / "history.csv");
  loss << "step,epoch,total,uao,lao,combined,comp_ce,contrastive,attr_ce,obj_ce";
  for (const auto& g : groups) loss << ",grad_norm." << g;
  loss << '\n';
  std::ofstream th(dir / "thresholds.csv");
  th << "step,attr,obj,th\n";
  for (const auto& r : h.steps) {
    const auto& l = r.loss;
    loss << r.step << ',' << r.epoch << ',' << fmt(l.total) << ',' << fmt(l.uao) << ',' << fmt(l.lao) << ','
         << fmt(l.combined) << ',' << fmt(l.comp_ce) << ',' << fmt(l.contrastive) << ',' << fmt(l.attr_ce) << ','
         << fmt(l.obj_ce);
    for (const auto& g : groups) loss << ',' << fmt(r.grad_norms.at(g));
    loss << '\n';
    for (const auto& [c, v] : r.thresholds) {
      th << r.step << ',' << vocab.attributes[c.attr] << ',' << vocab.objects[c.obj] << ',' << fmt(v) << '\n';
    }
  }
  std::ofstream ep(dir / "epochs.csv");
  ep << "epoch,mean_loss,val_auc,val_hm,best\n";
  for (const auto& e : h.epochs) {
    ep << e.epoch << ',' << fmt(e.mean_loss) << ',' << fmt(e.val_auc) << ',' << fmt(e.val_hm) << ','
       << (e.epoch == h.best_epoch) << '\n';
  }
}

Dataset dataset_for(const std::string& manifest, const fs::path& config, const Overrides& ov) {
  if (!manifest.empty()) return load_dataset(manifest);
  if (config.empty()) throw ConfigError("need --data MANIFEST or --config with a data section");
  return materialize_dataset(load_run_config(config, ov).data);
}

const std::vector<Sample>& split_of(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw ConfigError("split must be train|val|test");
}

void inspect_thresholds(const ModelState& s) {
  std::cout << "attr\tobj\tth\tup\tlast_update_step\n";
  // Every seen-capable key is listed; untouched keys show their initial value.
  std::map<Composition, ThresholdEntry> rows;
  for (int a = 0; a < s.vocab.n_attr(); ++a) {
    for (int o = 0; o < s.vocab.n_obj(); ++o) {
      const Composition c{a, o};
      rows[c] = {s.thresholds.th(c), s.thresholds.up(c), -1};
    }
  }
  for (const auto& [c, e] : s.thresholds.entries()) rows[c] = e;
  for (const auto& [c, e] : rows) {
    std::cout << s.vocab.attributes[c.attr] << '\t' << s.vocab.objects[c.obj] << '\t' << fmt(e.th) << '\t'
              << (std::isinf(e.up) ? std::string("inf") : fmt(e.up)) << '\t' << e.last_update_step << '\n';
  }
}

void inspect_hints(const ModelState& s, const Dataset& ds, const std::vector<Sample>& samples, std::size_t limit) {
  if (!s.hp.enable_ao_branches) throw ConfigError("this checkpoint has no object branch to draw hints from");
  check_vocab(s, ds.vocab);
  const TextReps reps = compute_text_reps(s, build_label_space(ds.space, World::CW));
  Hyperparams hp = s.hp;
  std::cout << "id\tgt";
  for (int j = 1; j <= hp.k; ++j) std::cout << "\tobj" << j << "\tp" << j;
  std::cout << "\tsum\n";
  for (std::size_t i = 0; i < samples.size() && i < limit; ++i) {
    const SampleOutputs out = forward_sample(s, reps, samples[i]);
    const auto top = top_k(out.p_o->prob, hp.k);
    std::cout << samples[i].id << '\t' << composition_name(ds.vocab, samples[i].label);
    double sum = 0.0;
    for (int o : top) {
      std::cout << '\t' << ds.vocab.objects[o] << '\t' << fmt(out.p_o->prob[o]);
      sum += out.p_o->prob[o];
    }
    std::cout << '\t' << fmt(sum) << '\n';
  }
}

void inspect_prompts(const ModelState& s) {
  const auto table = s.table();
  auto kind = [](SlotKind k) {
    return k == SlotKind::Fixed ? "fixed" : k == SlotKind::Learnable ? "learnable" : "hint";
  };
  auto row = [&](const std::string& branch, const std::string& name, const PromptSequence& p,
                 const std::vector<std::string>& labels) {
    std::cout << branch << '\t' << name << '\t' << p.length();
    for (int l = 0; l < p.length(); ++l) {
      std::cout << '\t' << labels[l] << ':' << kind(p.kinds[l]) << ':' << fmt(p.slots.row(l).norm());
    }
    std::cout << '\n';
  };
  std::cout << "branch\tname\tslots\tslot:kind:norm...\n";
  const Vec e3 = s.enc.fixed_embeddings.row(3).transpose();
  for (int o = 0; o < s.vocab.n_obj(); ++o) {
    row("object", s.vocab.objects[o], assemble_object_prompt(o, table), {"a", "photo", "of", s.vocab.objects[o]});
  }
  for (int a = 0; a < s.vocab.n_attr(); ++a) {
    row("attribute", s.vocab.attributes[a], assemble_attribute_prompt(a, e3, table),
        {"a", "photo", "of", s.vocab.attributes[a], "[object]"});
  }
  row("composition", "[ctx]", assemble_composition_prompt({0, 0}, table),
      {"ctx0", "ctx1", "ctx2", s.vocab.attributes[0], s.vocab.objects[0]});
}

int run(int argc, char** argv) {
  CLI::App app{"ulao: compositional zero-shot learning with object hints and linkage contrast"};
  app.require_subcommand(1);

  fs::path config;
  fs::path out;
  bool force = false;
  std::string manifest, world_name, checkpoint, split = "test", resume;
  std::size_t limit = 20;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (manifest + tensors)");
  gen->add_option("--config", config, "run config (JSON); its data.synthetic section is used");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--force", force, "replace a non-empty output directory");
  gen->allow_extras();

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and history");
  train->add_option("--config", config, "run config (JSON)");
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint directory to continue from");
  train->add_flag("--force", force, "replace a non-empty output directory");
  train->allow_extras();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes a JSON report and a prediction dump");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", manifest, "dataset manifest");
  eval->add_option("--config", config, "run config supplying the data section and eval paths");
  eval->add_option("--world", world_name, "cw or ow");
  eval->add_option("--split", split, "train|val|test");
  eval->add_option("--out", out, "output directory")->required();
  eval->allow_extras();

  std::string target;
  auto* inspect = app.add_subcommand("inspect", "dump thresholds, hints or prompts of a checkpoint");
  inspect->add_option("what", target, "thresholds|hints|prompts")->required();
  std::vector<CLI::App*> inspect_cmds{inspect};
  for (const char* alias : {"inspect-thresholds", "inspect-hints", "inspect-prompts"}) {
    inspect_cmds.push_back(app.add_subcommand(alias, std::string("same as 'inspect ") + (alias + 8) + "'"));
  }
  for (auto* c : inspect_cmds) {
    c->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    c->add_option("--data", manifest, "dataset manifest (hints)");
    c->add_option("--config", config, "run config supplying the data section (hints)");
    c->add_option("--split", split, "train|val|test (hints)");
    c->add_option("--limit", limit, "maximum number of samples (hints)");
    c->allow_extras();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Overrides ov = parse_overrides(cmd->remaining());

  if (cmd == gen) {
    add_seed_env(ov, true);
    RunConfig cfg = load_run_config(config, ov);
    if (cfg.data.manifest) throw ConfigError("gen-data needs data.synthetic, not data.manifest");
    const SyntheticConfig sc = cfg.data.synthetic.value_or(SyntheticConfig{});
    const Dataset ds = generate_synthetic(sc);
    prepare_out_dir(out, force);
    save_dataset(ds, out);
    std::cout << "wrote " << ds.train.size() + ds.val.size() + ds.test.size() << " samples to " << out.string() << '\n';
    return 0;
  }

  if (cmd == train) {
    add_seed_env(ov, false);
    RunConfig cfg = load_run_config(config, ov);
    const Dataset ds = materialize_dataset(cfg.data);
    const ValidationReport rep = validate_split(ds);
    if (!rep.ok()) throw DataError(rep.violations.front().kind + ": " + rep.violations.front().detail);
    ModelState init;
    if (!resume.empty()) {
      init = load_checkpoint(resume);
      check_vocab(init, ds.vocab);
      const auto kept_policy = init.thresholds;
      init.hp = cfg.train;
      init.thresholds = kept_policy;
    } else {
      init = init_model(ds.vocab, model_dims(cfg.model, ds.shape), encoder_spec(cfg.model, ds.shape), cfg.train);
    }
    prepare_out_dir(out, force);
    write_json(out / "config.json", to_json(cfg));
    FitResult fr = fit(ds, std::move(init));
    save_checkpoint(fr.best, out / "best");
    save_checkpoint(fr.final, out / "final");
    write_history(out, fr.history, cfg.train, ds.vocab);
    std::cout << "trained " << fr.history.steps.size() << " steps; best epoch " << fr.history.best_epoch
              << "; checkpoints in " << out.string() << '\n';
    return 0;
  }

  if (cmd == eval) {
    const RunConfig cfg = load_run_config(config, ov);
    const ModelState s = load_checkpoint(checkpoint);
    const Dataset ds = manifest.empty() ? materialize_dataset(cfg.data) : load_dataset(manifest);
    check_vocab(s, ds.vocab);
    const World world = world_name.empty() ? cfg.eval.world : parse_world(world_name);
    const ScoreMatrix sm = score_samples(s, ds.space, split_of(ds, split), world);
    MetricsReport r = metrics_from_scores(sm);
    r.world = world;
    fs::create_directories(out);
    write_json(out / cfg.eval.report, report_to_json(r, ds.vocab));
    write_prediction_dump(out / cfg.eval.predictions, sm, ds.vocab);
    std::cout << "world=" << to_string(world) << " S=" << fmt(r.s) << " U=" << fmt(r.u) << " HM=" << fmt(r.hm)
              << " AUC=" << fmt(r.auc) << '\n';
    return 0;
  }

  // inspect
  if (cmd != inspect) target = cmd->get_name().substr(8);
  const ModelState s = load_checkpoint(checkpoint);
  if (target == "thresholds") {
    inspect_thresholds(s);
  } else if (target == "prompts") {
    inspect_prompts(s);
  } else if (target == "hints") {
    const Dataset ds = dataset_for(manifest, config, ov);
    inspect_hints(s, ds, split_of(ds, split), limit);
  } else {
    throw ConfigError("unknown inspect target '" + target + "' (thresholds|hints|prompts)");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
}
