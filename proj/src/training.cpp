#include "ulao/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ulao/evaluation.hpp"

namespace ulao {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Mat tanh_of(const Mat& z) { return z.array().tanh().matrix(); }

Vec fixed_prefix(const Mat& e, const Vec& pos) {
  return pos(0) * e.row(0).transpose() + pos(1) * e.row(1).transpose() + pos(2) * e.row(2).transpose();
}

std::size_t column_of(std::span<const Composition> cands, Composition c) {
  auto it = std::lower_bound(cands.begin(), cands.end(), c);
  if (it == cands.end() || *it != c) throw DataError("composition is not among the candidates");
  return static_cast<std::size_t>(it - cands.begin());
}

double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// Hint from a given top set, weighted by the current object probabilities.
ObjectHint blend_with_top(const PrimitiveDistribution& p_o, const Mat& w_o, const Vec& e3, const HintConfig& cfg,
                          const std::vector<int>& top) {
  ObjectHint h;
  h.top = top;
  double total = 0.0;
  for (int o : top) total += p_o.prob[o];
  Vec w_fo = Vec::Zero(e3.size());
  for (int o : top) {
    const double w = cfg.renormalize ? p_o.prob[o] / total : p_o.prob[o];
    h.weights.push_back(w);
    w_fo += w * w_o.row(o).transpose();
  }
  h.e3_prime = cfg.r_k == 0.0 ? e3 : Vec((1.0 - cfg.r_k) * e3 + cfg.r_k * w_fo);
  return h;
}

HintConfig hint_config(const Hyperparams& hp) { return {hp.k, hp.r_k, hp.topk_renormalize}; }

struct Trace {
  VisualTokens vis;
  AttentionCache cache_a;
  AttentionCache cache_o;
  Vec v_a;
  Vec v_o;
  CosineScores cs_o;
  CosineScores cs_a;
  CosineScores cs_c;
  Mat attr_reps;
  PrimitiveDistribution p_a;
  PrimitiveDistribution p_o;
  std::optional<ObjectHint> hint;
  MixerCache mixer;
  Vec v_mix;
  std::vector<double> scores;
};

std::vector<double> scaled(const Vec& cos, double tau) {
  std::vector<double> out(static_cast<std::size_t>(cos.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cos(static_cast<Eigen::Index>(i)) / tau;
  return out;
}

Trace run_forward(const ModelState& s, const TextReps& reps, const Sample& x, const std::optional<ObjectHint>* fixed) {
  const auto& hp = s.hp;
  const auto& P = s.params;
  Trace t;
  t.vis = encode_image(x, s.enc);
  t.v_mix = t.vis.pooled;
  if (hp.enable_ao_branches) {
    t.v_a = attend(P.attn_a, t.vis.tokens, &t.cache_a);
    t.v_o = attend(P.attn_o, t.vis.tokens, &t.cache_o);
    t.cs_o = cosine_scores(t.v_o, reps.objects);
    t.p_o = PrimitiveDistribution::from_logits(scaled(t.cs_o.cos, hp.tau));
    const Vec e3 = s.enc.fixed_embeddings.row(3).transpose();
    Vec e3p = e3;
    if (hp.enable_object_hints) {
      const HintConfig cfg = hint_config(hp);
      if (fixed && fixed->has_value() && hp.detach_hints) {
        t.hint = **fixed;
      } else if (fixed && fixed->has_value()) {
        t.hint = blend_with_top(t.p_o, P.prompts.w_o, e3, cfg, (*fixed)->top);
      } else {
        t.hint = blend_with_top(t.p_o, P.prompts.w_o, e3, cfg, top_k(t.p_o.prob, cfg.k));
      }
      e3p = t.hint->e3_prime;
    }
    t.attr_reps = attribute_reps(s, reps, e3p);
    t.cs_a = cosine_scores(t.v_a, t.attr_reps);
    t.p_a = PrimitiveDistribution::from_logits(scaled(t.cs_a.cos, hp.tau));
    if (hp.r_m != 0.0) t.v_mix = t.vis.pooled + hp.r_m * mixer_forward(P.mixer, t.v_a, t.v_o, &t.mixer);
  }
  t.cs_c = cosine_scores(t.v_mix, reps.compositions);
  t.scores = scaled(t.cs_c.cos, hp.tau);
  return t;
}

void check_finite(const Params& g) {
  visit_params(g, [](std::string_view name, const auto& t) {
    if (!t.allFinite()) throw NumericError("non-finite gradient in " + std::string(name));
  });
}

}  // namespace

TextReps compute_text_reps(const ModelState& s, std::vector<Composition> candidates) {
  const auto& te = s.enc.text;
  const Mat& E = s.enc.fixed_embeddings;
  const auto& P = s.params.prompts;
  const Vec& p4 = te.pos(4);
  const Vec& p5 = te.pos(5);
  TextReps r;
  if (s.hp.enable_ao_branches) {
    Mat u = p4(3) * P.w_o;
    u.rowwise() += fixed_prefix(E, p4).transpose();
    r.objects_z = u * te.w.transpose();
    r.objects_z.rowwise() += te.b.transpose();
    r.objects = tanh_of(r.objects_z);
    Mat ua = p5(3) * P.w_a;
    ua.rowwise() += fixed_prefix(E, p5).transpose();
    r.attr_base_z = ua * te.w.transpose();
    r.attr_base_z.rowwise() += te.b.transpose();
  }
  std::sort(candidates.begin(), candidates.end());
  const Vec ctx = p5(0) * P.w_ctx.row(0).transpose() + p5(1) * P.w_ctx.row(1).transpose() +
                  p5(2) * P.w_ctx.row(2).transpose();
  Mat uc(static_cast<Eigen::Index>(candidates.size()), P.w_ctx.cols());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = candidates[i];
    if (c.attr < 0 || c.attr >= P.w_ca.rows() || c.obj < 0 || c.obj >= P.w_co.rows()) {
      throw DataError("composition index out of range");
    }
    uc.row(static_cast<Eigen::Index>(i)) =
        (ctx + p5(3) * P.w_ca.row(c.attr).transpose() + p5(4) * P.w_co.row(c.obj).transpose()).transpose();
  }
  r.comp_z = uc * te.w.transpose();
  r.comp_z.rowwise() += te.b.transpose();
  r.compositions = tanh_of(r.comp_z);
  r.candidates = std::move(candidates);
  return r;
}

Mat attribute_reps(const ModelState& s, const TextReps& reps, const Vec& e3_prime) {
  const auto& te = s.enc.text;
  Mat z = reps.attr_base_z;
  z.rowwise() += (te.pos(5)(4) * (te.w * e3_prime)).transpose();
  return tanh_of(z);
}

SampleOutputs forward_sample(const ModelState& s, const TextReps& reps, const Sample& x,
                             const std::optional<ObjectHint>& hint) {
  Trace t = run_forward(s, reps, x, hint ? &hint : nullptr);
  SampleOutputs out;
  out.visual = std::move(t.vis);
  out.v_a = std::move(t.v_a);
  out.v_o = std::move(t.v_o);
  out.v_mix = std::move(t.v_mix);
  if (s.hp.enable_ao_branches) {
    out.p_a = std::move(t.p_a);
    out.p_o = std::move(t.p_o);
  }
  out.hint = std::move(t.hint);
  out.comp_scores = std::move(t.scores);
  return out;
}

std::vector<double> fuse_predictions(std::span<const double> p_comp, const PrimitiveDistribution* p_a,
                                     const PrimitiveDistribution* p_o, double alpha,
                                     std::span<const Composition> candidates) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("fusion weight must lie in [0,1]");
  if (p_comp.size() != candidates.size()) throw DataError("fusion: composition distribution does not match candidates");
  std::vector<double> out(p_comp.begin(), p_comp.end());
  if (!p_a || !p_o || alpha == 1.0) return out;
  std::vector<double> lp(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    lp[i] = p_a->logp.at(static_cast<std::size_t>(candidates[i].attr)) +
            p_o->logp.at(static_cast<std::size_t>(candidates[i].obj));
  }
  const std::vector<double> prod = softmax(lp);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * p_comp[i] + (1.0 - alpha) * prod[i];
  return out;
}

double combined_loss(const std::vector<std::vector<double>>& fused, const std::vector<std::size_t>& gt_columns) {
  if (fused.size() != gt_columns.size()) throw DataError("combined_loss: batch size mismatch");
  if (fused.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) sum -= safe_log(fused[i].at(gt_columns[i]));
  const double loss = sum / static_cast<double>(fused.size());
  return loss == 0.0 ? 0.0 : loss;
}

LossResult total_loss(const ModelState& s, const Batch& batch, const CompositionSpace& space, const LossOptions& opt) {
  if (batch.empty()) throw DataError("total_loss: empty batch");
  const auto& hp = s.hp;
  const auto& P = s.params;
  const auto& te = s.enc.text;
  const bool ao = hp.enable_ao_branches;
  const bool hints = ao && hp.enable_object_hints;
  const double alpha = hp.fusion_alpha();
  const double inv = 1.0 / static_cast<double>(batch.size());
  const LossTermMask& m = opt.mask;
  if (opt.plan && opt.plan->hints.size() != batch.size()) throw DataError("total_loss: plan does not match batch");

  const TextReps reps = compute_text_reps(s, space.seen());
  const auto& cands = reps.candidates;
  const auto n_c = static_cast<Eigen::Index>(cands.size());

  LossResult res;
  res.plan.hints.resize(batch.size());
  res.plan.negatives.resize(batch.size());
  Params grad;
  Mat g_T_o, g_zbase_a, g_T_c;
  if (opt.compute_grad) {
    grad = P.zeros_like();
    g_T_c = Mat::Zero(n_c, reps.compositions.cols());
    if (ao) {
      g_T_o = Mat::Zero(reps.objects.rows(), reps.objects.cols());
      g_zbase_a = Mat::Zero(reps.attr_base_z.rows(), reps.attr_base_z.cols());
    }
  }
  LossBreakdown& L = res.loss;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& x = *batch[i];
    const Composition gt = x.label;
    if (!space.is_seen(gt)) throw DataError("training sample " + x.id + " does not carry a seen label");
    const std::optional<ObjectHint>* fixed_hint = opt.plan ? &opt.plan->hints[i] : nullptr;
    Trace t = run_forward(s, reps, x, fixed_hint);
    res.plan.hints[i] = t.hint;
    const std::size_t j_gt = column_of(cands, gt);

    std::vector<double> g_la, g_lo;
    std::vector<double> g_s(cands.size(), 0.0);
    if (ao) {
      g_la.assign(t.p_a.size(), 0.0);
      g_lo.assign(t.p_o.size(), 0.0);
      const double nla = -t.p_a.logp[gt.attr];
      const double nlo = -t.p_o.logp[gt.obj];
      L.attr_ce += inv * nla;
      L.obj_ce += inv * nlo;
      L.uao += inv * (1.0 + hp.r_ao) * (nla + nlo);
      const double ca = (m.attr_ce ? inv : 0.0) + (m.uao_product ? inv * hp.r_ao : 0.0);
      const double co = (m.obj_ce ? inv : 0.0) + (m.uao_product ? inv * hp.r_ao : 0.0);
      for (std::size_t j = 0; j < g_la.size(); ++j) g_la[j] += ca * (t.p_a.prob[j] - (static_cast<int>(j) == gt.attr));
      for (std::size_t j = 0; j < g_lo.size(); ++j) g_lo[j] += co * (t.p_o.prob[j] - (static_cast<int>(j) == gt.obj));
    }

    const std::vector<double> logq = log_softmax(t.scores);
    L.comp_ce += -inv * logq[j_gt];
    if (m.comp_ce) {
      for (std::size_t j = 0; j < cands.size(); ++j) g_s[j] += inv * (std::exp(logq[j]) - (j == j_gt));
    }

    if (hp.enable_contrastive) {
      NegativeSet negs;
      if (opt.plan) {
        negs = opt.plan->negatives[i];
      } else if (hp.negative_source == NegativeSource::Uao) {
        negs = generate_hard_negatives(gt, t.p_a, t.p_o, space);
      } else if (hp.negative_source == NegativeSource::Composition) {
        std::vector<double> as(space.n_attr(), kNegInf), os(space.n_obj(), kNegInf);
        for (std::size_t j = 0; j < cands.size(); ++j) {
          if (cands[j].obj == gt.obj) as[cands[j].attr] = t.scores[j];
          if (cands[j].attr == gt.attr) os[cands[j].obj] = t.scores[j];
        }
        negs = argmax_negatives(gt, as, os, space);
      } else {
        if (!opt.rng) throw ConfigError("random negatives need a random generator");
        negs = random_negatives(gt, space, *opt.rng);
      }
      std::vector<double> g_c(cands.size(), 0.0);
      L.contrastive += contrastive_loss(t.scores, cands, gt, negs, s.thresholds, &g_c);
      if (m.contrastive) {
        for (std::size_t j = 0; j < cands.size(); ++j) g_s[j] += hp.r_c * g_c[j];
      }
      for (const auto& n : negs) res.diffs[n.comp].push_back(t.scores[j_gt] - t.scores[column_of(cands, n.comp)]);
      res.plan.negatives[i] = std::move(negs);
    }

    // Fused objective in the log domain.
    {
      std::vector<double> lr;
      double log_r_gt = kNegInf;
      if (ao && alpha < 1.0) {
        std::vector<double> lp(cands.size());
        for (std::size_t j = 0; j < cands.size(); ++j) lp[j] = t.p_a.logp[cands[j].attr] + t.p_o.logp[cands[j].obj];
        lr = log_softmax(lp);
        log_r_gt = lr[j_gt];
      }
      const double la = safe_log(alpha) + logq[j_gt];
      const double lb = safe_log(1.0 - alpha) + log_r_gt;
      const double lf = log_add_exp(la, lb);
      L.combined += -inv * lf;
      if (m.combined && !hp.combined_stop_grad) {
        const double w_q = la == kNegInf ? 0.0 : std::exp(la - lf);
        const double w_r = lb == kNegInf ? 0.0 : std::exp(lb - lf);
        for (std::size_t j = 0; j < cands.size(); ++j) g_s[j] += -inv * w_q * ((j == j_gt) - std::exp(logq[j]));
        if (ao && w_r != 0.0) {
          for (std::size_t j = 0; j < cands.size(); ++j) {
            const double G = -inv * w_r * ((j == j_gt) - std::exp(lr[j]));
            g_la[cands[j].attr] += G;
            g_lo[cands[j].obj] += G;
          }
        }
      }
    }

    if (!opt.compute_grad) continue;

    // Backward for this sample.
    const Vec gs = Eigen::Map<const Vec>(g_s.data(), n_c) / hp.tau;
    Vec g_vmix = Vec::Zero(t.v_mix.size());
    cosine_scores_backward(t.cs_c, gs, g_vmix, g_T_c);
    if (!ao) continue;

    Vec g_va = Vec::Zero(t.v_a.size());
    Vec g_vo = Vec::Zero(t.v_o.size());
    const Vec gla = Eigen::Map<const Vec>(g_la.data(), static_cast<Eigen::Index>(g_la.size())) / hp.tau;
    Mat g_Ta = Mat::Zero(t.attr_reps.rows(), t.attr_reps.cols());
    cosine_scores_backward(t.cs_a, gla, g_va, g_Ta);
    const Mat g_za = g_Ta.cwiseProduct((1.0 - t.attr_reps.array().square()).matrix());
    g_zbase_a += g_za;

    if (hints && !hp.detach_hints && hp.r_k != 0.0) {
      const Vec g_e3p = te.pos(5)(4) * (te.w.transpose() * g_za.colwise().sum().transpose());
      const auto& h = *t.hint;
      std::vector<double> g_p(t.p_o.size(), 0.0);
      double total = 0.0;
      for (int o : h.top) total += t.p_o.prob[o];
      double mean_dot = 0.0;
      for (std::size_t j = 0; j < h.top.size(); ++j) {
        const int o = h.top[j];
        grad.prompts.w_o.row(o) += hp.r_k * h.weights[j] * g_e3p.transpose();
        const double dot = P.prompts.w_o.row(o).dot(g_e3p);
        g_p[o] = hp.r_k * dot;
        mean_dot += h.weights[j] * dot;
      }
      if (hp.topk_renormalize) {
        for (int o : h.top) g_p[o] = hp.r_k * (P.prompts.w_o.row(o).dot(g_e3p) - mean_dot) / total;
      }
      double pg = 0.0;
      for (std::size_t j = 0; j < g_p.size(); ++j) pg += t.p_o.prob[j] * g_p[j];
      for (std::size_t j = 0; j < g_p.size(); ++j) g_lo[j] += t.p_o.prob[j] * (g_p[j] - pg);
    }

    if (hp.r_m != 0.0) mixer_backward(P.mixer, t.mixer, hp.r_m * g_vmix, grad.mixer, g_va, g_vo);

    const Vec glo = Eigen::Map<const Vec>(g_lo.data(), static_cast<Eigen::Index>(g_lo.size())) / hp.tau;
    cosine_scores_backward(t.cs_o, glo, g_vo, g_T_o);
    attend_backward(P.attn_a, t.vis.tokens, t.cache_a, g_va, grad.attn_a);
    attend_backward(P.attn_o, t.vis.tokens, t.cache_o, g_vo, grad.attn_o);
  }

  L.lao = L.comp_ce + (hp.enable_contrastive ? hp.r_c * L.contrastive : 0.0);
  L.total = (ao ? L.uao : 0.0) + L.lao + L.combined;
  if (!ao) L.uao = L.attr_ce = L.obj_ce = 0.0;
  if (!std::isfinite(L.total)) throw NumericError("non-finite loss at step " + std::to_string(s.step));

  if (opt.compute_grad) {
    const Vec& p5 = te.pos(5);
    const Mat g_zc = g_T_c.cwiseProduct((1.0 - reps.compositions.array().square()).matrix());
    const Mat g_uc = g_zc * te.w;  // n_c x d_e
    for (Eigen::Index i = 0; i < n_c; ++i) {
      const auto c = cands[static_cast<std::size_t>(i)];
      for (int l = 0; l < 3; ++l) grad.prompts.w_ctx.row(l) += p5(l) * g_uc.row(i);
      grad.prompts.w_ca.row(c.attr) += p5(3) * g_uc.row(i);
      grad.prompts.w_co.row(c.obj) += p5(4) * g_uc.row(i);
    }
    if (ao) {
      const Mat g_zo = g_T_o.cwiseProduct((1.0 - reps.objects.array().square()).matrix());
      grad.prompts.w_o += te.pos(4)(3) * (g_zo * te.w);
      grad.prompts.w_a += p5(3) * (g_zbase_a * te.w);
    }
    res.grad = std::move(grad);
  }
  return res;
}

void adam_update(ModelState& s, const Params& grad) {
  const auto& hp = s.hp;
  const double t = static_cast<double>(s.step + 1);
  const double c1 = 1.0 - std::pow(hp.adam_beta1, t);
  const double c2 = 1.0 - std::pow(hp.adam_beta2, t);
  Params& p = s.params;
  // Walk params, moments and gradients in lockstep.
  std::vector<Eigen::Map<Mat>> pm, mm, vm;
  std::vector<Eigen::Map<const Mat>> gm;
  std::vector<std::string> names;
  auto collect = [](auto& dst, auto& src) {
    visit_params(src, [&](std::string_view, auto& x) {
      using M = typename std::decay_t<decltype(dst)>::value_type;
      dst.push_back(M(x.data(), x.rows(), x.cols()));
    });
  };
  collect(pm, p);
  collect(mm, s.adam_m);
  collect(vm, s.adam_v);
  collect(gm, grad);
  visit_params(p, [&](std::string_view name, auto&) { names.emplace_back(name); });
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!group_is_active(names[i], hp)) continue;
    mm[i] = hp.adam_beta1 * mm[i] + (1.0 - hp.adam_beta1) * gm[i];
    vm[i] = hp.adam_beta2 * vm[i] + (1.0 - hp.adam_beta2) * gm[i].cwiseProduct(gm[i]);
    if (hp.lr == 0.0) continue;
    pm[i].array() -= hp.lr * (mm[i].array() / c1) / ((vm[i].array() / c2).sqrt() + hp.adam_eps);
    if (!pm[i].allFinite()) throw NumericError("non-finite parameter update in " + names[i]);
  }
}

StepRecord train_step(ModelState& s, const Batch& batch, const CompositionSpace& space, std::mt19937_64& rng) {
  LossOptions opt;
  opt.rng = &rng;
  LossResult r = total_loss(s, batch, space, opt);
  check_finite(*r.grad);
  StepRecord rec;
  rec.step = s.step;
  rec.loss = r.loss;
  visit_params(*r.grad, [&](std::string_view name, const auto& g) {
    if (group_is_active(name, s.hp)) rec.grad_norms[std::string(name)] = g.norm();
  });
  adam_update(s, *r.grad);
  if (s.hp.enable_contrastive) {
    s.thresholds.update(r.diffs, batch.size(), s.step, s.hp.delta_population);
    for (const auto& [c, v] : r.diffs) rec.thresholds.emplace_back(c, s.thresholds.th(c));
  }
  ++s.step;
  return rec;
}

const GradGroupReport* GradReport::find(std::string_view name) const {
  for (const auto& g : groups)
    if (g.name == name) return &g;
  return nullptr;
}

GradReport gradient_check(const ModelState& s, const Batch& batch, const CompositionSpace& space,
                          const GradCheckOptions& opt) {
  GradReport rep;
  const FrozenEncoders frozen_before = s.enc;
  std::mt19937_64 rng(s.hp.seed + 17);
  LossOptions base_opt;
  base_opt.rng = &rng;
  const LossResult base = total_loss(s, batch, space, base_opt);
  const Params& g = *base.grad;

  LossOptions fd_opt;
  fd_opt.compute_grad = false;
  fd_opt.plan = &base.plan;

  ModelState work = s;
  std::vector<std::string> names;
  visit_params(work.params, [&](std::string_view name, auto&) { names.emplace_back(name); });
  std::vector<Eigen::Map<Mat>> wm;
  visit_params(work.params, [&](std::string_view, auto& x) { wm.emplace_back(x.data(), x.rows(), x.cols()); });
  std::vector<Eigen::Map<const Mat>> gm;
  visit_params(g, [&](std::string_view, const auto& x) { gm.emplace_back(x.data(), x.rows(), x.cols()); });

  for (std::size_t gi = 0; gi < names.size(); ++gi) {
    GradGroupReport gr;
    gr.name = names[gi];
    gr.active = group_is_active(names[gi], s.hp);
    Mat analytic = gm[gi];
    if (names[gi] == opt.corrupt_group) analytic *= opt.corrupt_factor;
    Mat numeric(analytic.rows(), analytic.cols());
    for (Eigen::Index k = 0; k < analytic.size(); ++k) {
      double& w = wm[gi].data()[k];
      const double w0 = w;
      w = w0 + opt.eps;
      const double lp = total_loss(work, batch, space, fd_opt).loss.total;
      w = w0 - opt.eps;
      const double lm = total_loss(work, batch, space, fd_opt).loss.total;
      w = w0;
      numeric.data()[k] = (lp - lm) / (2.0 * opt.eps);
    }
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
    gr.max_abs_grad = analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0;
    const double floor = std::max(1e-7, 1e-2 * scale);
    for (Eigen::Index k = 0; k < analytic.size(); ++k) {
      const double a = analytic.data()[k], n = numeric.data()[k];
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      gr.max_rel_error = std::max(gr.max_rel_error, std::abs(a - n) / denom);
    }
    gr.pass = gr.max_rel_error < opt.tol && (gr.active || gr.max_abs_grad == 0.0);
    rep.pass = rep.pass && gr.pass;
    rep.groups.push_back(gr);
  }

  if (s.hp.enable_ao_branches) {
    LossOptions attr_opt;
    attr_opt.mask = LossTermMask::only_attr_ce();
    attr_opt.plan = &base.plan;
    const LossResult ar = total_loss(s, batch, space, attr_opt);
    visit_params(*ar.grad, [&](std::string_view name, const auto& x) {
      if (name == "prompt.w_o" || name.starts_with("attn_o.")) {
        rep.hint_path_max_grad = std::max(rep.hint_path_max_grad, x.cwiseAbs().maxCoeff());
      }
    });
    if (s.hp.detach_hints && rep.hint_path_max_grad != 0.0) rep.pass = false;
  }
  rep.frozen_unchanged = s.enc == frozen_before;
  rep.pass = rep.pass && rep.frozen_unchanged;
  return rep;
}

FitResult fit(const Dataset& ds, ModelState init) {
  FitResult out;
  out.final = std::move(init);
  out.best = out.final;
  const auto& hp = out.final.hp;
  if (hp.epochs == 0) return out;
  if (ds.train.empty()) throw DataError("fit: empty train split");

  std::mt19937_64 rng(hp.seed * 0x9e3779b97f4a7c15ULL + 7);
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(hp.batch_size);
  double best_auc = -1.0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      Batch batch;
      for (std::size_t j = start; j < std::min(order.size(), start + bs); ++j) batch.push_back(&ds.train[order[j]]);
      StepRecord rec = train_step(out.final, batch, ds.space, rng);
      rec.epoch = epoch;
      loss_sum += rec.loss.total;
      ++n_steps;
      out.history.steps.push_back(std::move(rec));
    }
    EpochRecord er;
    er.epoch = epoch;
    er.mean_loss = loss_sum / static_cast<double>(n_steps);
    if (!ds.val.empty()) {
      const MetricsReport m = evaluate(out.final, ds.space, ds.val, World::CW);
      er.val_auc = m.auc;
      er.val_hm = m.hm;
    }
    if (ds.val.empty() || er.val_auc > best_auc) {
      best_auc = er.val_auc;
      out.best = out.final;
      out.history.best_epoch = epoch;
    }
    out.history.epochs.push_back(er);
  }
  return out;
}

}  // namespace ulao
