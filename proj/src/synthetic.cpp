#include "ulao/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ulao {
namespace {

Vec gaussian_vec(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

// Rounds through float so tensor files reproduce the in-memory dataset exactly.
Mat round_to_float(const Mat& m) { return m.cast<float>().cast<double>(); }

}  // namespace

void SyntheticConfig::check() const {
  if (n_attr < 1 || n_obj < 1) throw ConfigError("synthetic: n_attr and n_obj must be >= 1");
  if (d_latent < 1 || tokens < 1) throw ConfigError("synthetic: d_latent and tokens must be >= 1");
  if (!(seen_density > 0.0 && seen_density <= 1.0)) throw ConfigError("synthetic: seen_density must be in (0,1]");
  if (unseen_count < 0) throw ConfigError("synthetic: unseen_count must be >= 0");
  if (samples_per_pair < 1) throw ConfigError("synthetic: samples_per_pair must be >= 1");
  if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) throw ConfigError("synthetic: distractor_rate must be in [0,1]");
  if (contextuality < 0.0 || contextuality > 1.0) throw ConfigError("synthetic: contextuality must be in [0,1]");
  if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("synthetic: train/val fractions must be positive and sum to <= 1");
  }
  if (unseen_val_fraction < 0.0 || unseen_val_fraction > 1.0) {
    throw ConfigError("synthetic: unseen_val_fraction must be in [0,1]");
  }
}

Vec SyntheticWorld::render(Composition c) const {
  const Vec a = attr_dir[c.attr].row(c.obj).transpose();
  const Vec o = object_proto.row(c.obj).transpose();
  const double d = static_cast<double>(a.size());
  return o + a + binding * std::sqrt(d) * a.cwiseProduct(o);
}

SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg) {
  cfg.check();
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eedULL);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_latent));
  SyntheticWorld w;
  w.binding = cfg.binding;
  w.object_proto.resize(cfg.n_obj, cfg.d_latent);
  for (int o = 0; o < cfg.n_obj; ++o) w.object_proto.row(o) = gaussian_vec(rng, cfg.d_latent, scale * cfg.object_scale);
  w.attr_base.resize(cfg.n_attr, cfg.d_latent);
  for (int a = 0; a < cfg.n_attr; ++a) w.attr_base.row(a) = gaussian_vec(rng, cfg.d_latent, scale);
  w.attr_dir.assign(cfg.n_attr, Mat(cfg.n_obj, cfg.d_latent));
  for (int a = 0; a < cfg.n_attr; ++a) {
    for (int o = 0; o < cfg.n_obj; ++o) {
      // Perturbation is always drawn so the RNG stream does not depend on contextuality.
      const Vec perturb = gaussian_vec(rng, cfg.d_latent, scale);
      w.attr_dir[a].row(o) = w.attr_base.row(a) + cfg.contextuality * perturb.transpose();
    }
  }
  return w;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.check();
  const int full = cfg.n_attr * cfg.n_obj;
  const int cover = std::max(cfg.n_attr, cfg.n_obj);
  if (cfg.unseen_count > full - cover) {
    throw DataError("infeasible synthetic config: unseen_count " + std::to_string(cfg.unseen_count) +
                    " leaves fewer than " + std::to_string(cover) + " pairs to cover every primitive");
  }
  const int n_seen = std::max(
      cover, static_cast<int>(std::lround(cfg.seen_density * static_cast<double>(full - cfg.unseen_count))));

  const SyntheticWorld world = make_synthetic_world(cfg);
  std::mt19937_64 rng(cfg.seed);

  // Seen set: a random cover of every attribute and object, topped up uniformly.
  std::vector<int> attr_perm(cfg.n_attr), obj_perm(cfg.n_obj);
  std::iota(attr_perm.begin(), attr_perm.end(), 0);
  std::iota(obj_perm.begin(), obj_perm.end(), 0);
  std::shuffle(attr_perm.begin(), attr_perm.end(), rng);
  std::shuffle(obj_perm.begin(), obj_perm.end(), rng);
  std::vector<std::uint8_t> is_seen(full, 0);
  for (int i = 0; i < cover; ++i) {
    const int a = attr_perm[i % cfg.n_attr];
    const int o = obj_perm[i % cfg.n_obj];
    is_seen[a * cfg.n_obj + o] = 1;
  }
  std::vector<int> rest;
  for (int k = 0; k < full; ++k)
    if (!is_seen[k]) rest.push_back(k);
  std::shuffle(rest.begin(), rest.end(), rng);
  const int extra = n_seen - cover;
  for (int i = 0; i < extra; ++i) is_seen[rest[i]] = 1;
  rest.erase(rest.begin(), rest.begin() + extra);
  std::vector<Composition> seen, unseen;
  for (int k = 0; k < full; ++k)
    if (is_seen[k]) seen.push_back({k / cfg.n_obj, k % cfg.n_obj});
  for (int i = 0; i < cfg.unseen_count; ++i) unseen.push_back({rest[i] / cfg.n_obj, rest[i] % cfg.n_obj});

  Dataset ds;
  for (int a = 0; a < cfg.n_attr; ++a) ds.vocab.attributes.push_back("attr" + std::to_string(a));
  for (int o = 0; o < cfg.n_obj; ++o) ds.vocab.objects.push_back("obj" + std::to_string(o));
  ds.space = CompositionSpace(cfg.n_attr, cfg.n_obj, seen, unseen);
  ds.shape = {PayloadKind::Latent, cfg.tokens, cfg.d_latent};

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma / std::sqrt(static_cast<double>(cfg.d_latent)));
  const int n_confuse_tokens = std::max(1, cfg.tokens / 4);

  auto make_sample = [&](Composition label, int serial) {
    Sample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06d", serial);
    s.id = buf;
    s.label = label;
    const Vec main = world.render(label);
    s.payload.resize(cfg.tokens, cfg.d_latent);
    for (int t = 0; t < cfg.tokens; ++t) s.payload.row(t) = main.transpose();

    if (cfg.distractor_rate > 0.0 && unif(rng) < cfg.distractor_rate && cfg.n_obj > 1) {
      // Prefer objects that form a seen pair with the label attribute so the
      // attribute-preserving hard negative can land on the confuser.
      std::vector<int> objs;
      for (int o = 0; o < cfg.n_obj; ++o)
        if (o != label.obj && is_seen[label.attr * cfg.n_obj + o]) objs.push_back(o);
      if (objs.empty()) {
        for (int o = 0; o < cfg.n_obj; ++o)
          if (o != label.obj) objs.push_back(o);
      }
      const int o2 = objs[static_cast<std::size_t>(unif(rng) * objs.size()) % objs.size()];
      int a2 = label.attr;
      if (cfg.n_attr > 1) {
        a2 = static_cast<int>(unif(rng) * (cfg.n_attr - 1)) % (cfg.n_attr - 1);
        if (a2 >= label.attr) ++a2;
      }
      s.distractor = Composition{a2, o2};
      const Vec conf = world.render(*s.distractor) * cfg.distractor_strength;
      const int start = static_cast<int>(unif(rng) * cfg.tokens) % cfg.tokens;
      for (int i = 0; i < n_confuse_tokens; ++i) s.payload.row((start + i) % cfg.tokens) = conf.transpose();
    }
    for (int t = 0; t < cfg.tokens; ++t)
      for (int j = 0; j < cfg.d_latent; ++j) s.payload(t, j) += noise(rng);
    s.payload = round_to_float(s.payload);
    return s;
  };

  int serial = 0;
  const int n = cfg.samples_per_pair;
  for (int k = 0; k < full; ++k) {
    const Composition c{k / cfg.n_obj, k % cfg.n_obj};
    if (is_seen[k]) {
      const int n_train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * n)));
      const int n_val = std::min(n - n_train, static_cast<int>(std::lround(cfg.val_fraction * n)));
      for (int i = 0; i < n; ++i) {
        auto s = make_sample(c, serial++);
        (i < n_train ? ds.train : i < n_train + n_val ? ds.val : ds.test).push_back(std::move(s));
      }
    } else if (ds.space.is_unseen(c)) {
      const int n_val = static_cast<int>(std::lround(cfg.unseen_val_fraction * n));
      for (int i = 0; i < n; ++i) {
        auto s = make_sample(c, serial++);
        (i < n_val ? ds.val : ds.test).push_back(std::move(s));
      }
    }
  }
  return ds;
}

}  // namespace ulao
