#include "mulsmo/guidance.hpp"

#include "mulsmo/motion.hpp"

#include <cmath>

namespace mulsmo {

nlohmann::json GuidanceConfig::to_json() const {
  return {{"w_c", w_c},         {"w_s", w_s},         {"tau", tau},
          {"content_cfg", content_cfg}, {"style_cfg", style_cfg}, {"classifier", classifier},
          {"steps", steps},     {"sampler", sampler}, {"spacing", spacing},
          {"eta", eta},         {"clip", clip},       {"full_grad", full_grad},
          {"iterations", iterations}, {"descent_sign", descent_sign}, {"grad_space", grad_space}};
}

GuidanceConfig GuidanceConfig::from_json(const nlohmann::json& j) {
  GuidanceConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "w_c") c.w_c = v.get<double>();
    else if (key == "w_s") c.w_s = v.get<double>();
    else if (key == "tau") c.tau = v.get<double>();
    else if (key == "content_cfg") c.content_cfg = v.get<bool>();
    else if (key == "style_cfg") c.style_cfg = v.get<bool>();
    else if (key == "classifier") c.classifier = v.get<bool>();
    else if (key == "steps") c.steps = v.get<int>();
    else if (key == "sampler") c.sampler = v.get<std::string>();
    else if (key == "spacing") c.spacing = v.get<std::string>();
    else if (key == "eta") c.eta = v.get<double>();
    else if (key == "clip") c.clip = v.get<double>();
    else if (key == "full_grad") c.full_grad = v.get<bool>();
    else if (key == "iterations") c.iterations = v.get<int>();
    else if (key == "descent_sign") c.descent_sign = v.get<bool>();
    else if (key == "grad_space") c.grad_space = v.get<std::string>();
    else if (key == "description") continue;
    else throw ConfigError("guidance config: unknown key '" + key + "'");
  }
  if (!std::isfinite(c.w_c) || !std::isfinite(c.w_s) || !std::isfinite(c.tau)) throw ConfigError("guidance config: weights must be finite");
  if (c.steps < 0) throw ConfigError("guidance config: steps must be >= 0");
  if (c.sampler != "ddim" && c.sampler != "ddpm") throw ConfigError("guidance config: sampler must be ddim or ddpm");
  if (c.grad_space != "z0" && c.grad_space != "zt") throw ConfigError("guidance config: grad_space must be z0 or zt");
  if (c.iterations < 1) throw ConfigError("guidance config: iterations must be >= 1");
  if (c.clip < 0.0 || c.eta < 0.0) throw ConfigError("guidance config: clip and eta must be >= 0");
  return c;
}

Mat cfg_combine(const Mat& e_uu, const Mat& e_cu, const Mat& e_cs, double w_c, double w_s) {
  if (e_uu.rows() != e_cu.rows() || e_uu.cols() != e_cu.cols() || e_cs.rows() != e_cu.rows() ||
      e_cs.cols() != e_cu.cols()) {
    throw ConfigError("cfg_combine: shape mismatch");
  }
  // Algebraically e_uu + w_c (e_cu - e_uu) + w_s (e_cs - e_cu), arranged so that
  // equal inputs and unit weights are reproduced exactly.
  return e_cs + (w_s - 1.0) * (e_cs - e_cu) + (w_c - 1.0) * (e_cu - e_uu);
}

namespace {

bool style_active(const ModelBundle& m, const StyleSignalBatch& style, const GuidanceConfig& cfg) {
  return cfg.style_cfg && style.has_style() && m.net != nullptr;
}

}  // namespace

Var cfg_eps(const ModelBundle& m, const Var& z_t, int t, const CondBatch& cond, const StyleSignalBatch& style,
            const GuidanceConfig& cfg) {
  const std::size_t b = cond.size();
  const std::vector<int> ts(b, t);
  const bool use_style = style_active(m, style, cfg);
  if (!cfg.content_cfg && !use_style) return m.den->forward(z_t, ts, CondBatch::nulls(b));

  Var e_uu, e_cu;
  if (cfg.content_cfg) {
    CondBatch both = CondBatch::nulls(b);
    both.texts.insert(both.texts.end(), cond.texts.begin(), cond.texts.end());
    both.null.insert(both.null.end(), cond.null.begin(), cond.null.end());
    std::vector<int> ts2(2 * b, t);
    Var out = m.den->forward(ad::concat_rows({z_t, z_t}), ts2, both);
    e_uu = ad::slice_rows(out, 0, z_t.rows());
    e_cu = ad::slice_rows(out, z_t.rows(), z_t.rows());
  } else {
    e_cu = m.den->forward(z_t, ts, cond);
  }
  if (!use_style) {
    return ad::add(e_cu, ad::scale(ad::sub(e_cu, e_uu), cfg.w_c - 1.0));
  }
  if (style.embeddings.rows() != static_cast<Eigen::Index>(b)) throw ConfigError("guidance: style batch mismatch");
  Var s = ad::constant(style.embeddings);
  Var e_cs = predict_eps(*m.den, m.net, z_t, ts, cond, &s);
  Var out = ad::add(e_cs, ad::scale(ad::sub(e_cs, e_cu), cfg.w_s - 1.0));
  if (cfg.content_cfg) out = ad::add(out, ad::scale(ad::sub(e_cu, e_uu), cfg.w_c - 1.0));
  return out;
}

StyleDistance style_distance(const ModelBundle& m, const Mat& z_t, int t, const Mat& eps_hat, const Mat& ref_features,
                             const GuidanceConfig& cfg, const CondBatch* cond, const StyleSignalBatch* style) {
  const Eigen::Index n_z = m.den->config().n_z;
  const Eigen::Index b = z_t.rows() / n_z;
  if (ref_features.rows() != b) throw ConfigError("style_distance: reference batch mismatch");
  Var zt = ad::leaf(z_t);
  Var eps;
  if (cfg.full_grad) {
    if (cond == nullptr || style == nullptr) throw ConfigError("style_distance: full_grad needs the conditions");
    eps = cfg_eps(m, zt, t, *cond, *style, cfg);
  } else {
    eps = ad::constant(eps_hat);
  }
  Var z0 = predict_clean(zt, t, eps, m.den->schedule());
  Var x = m.vae->decode(z0, b, m.frames);
  Var raw = ad::add_row(ad::mul_row(x, ad::constant(m.stats->std)), ad::constant(m.stats->mean));
  Var f = m.extractor->features(raw, b, m.frames);
  Var per = ad::row_sum(ad::abs(ad::sub(f, ad::constant(ref_features))));
  Var total = ad::sum(per);
  if (!std::isfinite(total.scalar())) throw NumericError("style_distance: non-finite value");
  ad::backward(total);
  StyleDistance out;
  out.G = per.value().col(0);
  out.grad = zt.grad();
  if (out.grad.size() == 0) out.grad = Mat::Zero(z_t.rows(), z_t.cols());
  if (!out.grad.allFinite()) throw NumericError("style_distance: non-finite gradient");
  return out;
}

Mat apply_classifier_guidance(const Mat& eps_hat, const Mat& grad, double tau, double clip, bool descent_sign,
                              Eigen::Index tokens_per_sample) {
  if (eps_hat.rows() != grad.rows() || eps_hat.cols() != grad.cols()) throw ConfigError("classifier guidance: shape mismatch");
  if (tau == 0.0) return eps_hat;
  Mat g = grad;
  if (clip > 0.0) {
    for (Eigen::Index r = 0; r < g.rows(); r += tokens_per_sample) {
      const double n = g.middleRows(r, tokens_per_sample).norm();
      if (n > clip) g.middleRows(r, tokens_per_sample) *= clip / n;
    }
  }
  const double sign = descent_sign ? -1.0 : 1.0;
  return eps_hat + sign * tau * g;
}

Mat guided_eps(const ModelBundle& m, const Mat& z_t, int t, const CondBatch& cond, const StyleSignalBatch& style,
               const GuidanceConfig& cfg) {
  const Mat base = cfg_eps(m, ad::constant(z_t), t, cond, style, cfg).value();
  bool any_ref = false;
  for (char c : style.has_ref) any_ref = any_ref || c != 0;
  if (!cfg.classifier || cfg.tau == 0.0 || m.extractor == nullptr || !any_ref) return base;
  const Eigen::Index n_z = m.den->config().n_z;
  const double scale = cfg.grad_space == "z0" ? std::sqrt(m.den->schedule().ab(t)) : 1.0;
  Mat eps = base;
  for (int it = 0; it < cfg.iterations; ++it) {
    StyleDistance sd = style_distance(m, z_t, t, eps, style.ref_features, cfg, &cond, &style);
    sd.grad *= scale;
    for (std::size_t i = 0; i < style.has_ref.size(); ++i) {
      if (!style.has_ref[i]) sd.grad.middleRows(static_cast<Eigen::Index>(i) * n_z, n_z).setZero();
    }
    eps = apply_classifier_guidance(base, sd.grad, cfg.tau, cfg.clip, cfg.descent_sign, n_z);
  }
  return eps;
}

Mat sample_latents(const ModelBundle& m, const CondBatch& cond, const StyleSignalBatch& style, const GuidanceConfig& cfg,
                   Rng& rng, const Mat* z_T) {
  const auto& sched = m.den->schedule();
  const Eigen::Index rows = static_cast<Eigen::Index>(cond.size()) * m.den->config().n_z;
  Mat z = z_T ? *z_T : rng.normal_matrix(rows, m.den->config().d_z);
  if (z.rows() != rows) throw ConfigError("sample: initial latent batch mismatch");
  if (cfg.steps == 0) return z;
  if (cfg.sampler == "ddpm") {
    if (cfg.steps != sched.T) throw ConfigError("sample: ddpm sampling runs all T steps; set steps = T");
    for (int t = sched.T; t >= 1; --t) z = ddpm_step(z, t, guided_eps(m, z, t, cond, style, cfg), sched, rng);
    return z;
  }
  const auto grid = step_grid(sched.T, cfg.steps, cfg.spacing);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const int t = grid[k];
    const int t_prev = k + 1 < grid.size() ? grid[k + 1] : 0;
    z = ddim_step(z, t, t_prev, guided_eps(m, z, t, cond, style, cfg), sched, cfg.eta, &rng);
    if (!z.allFinite()) throw NumericError("sample: latent became non-finite at t=" + std::to_string(t));
  }
  return z;
}

std::vector<Mat> decode_motions(const ModelBundle& m, const Mat& z0, Eigen::Index frames) {
  const Eigen::Index n_z = m.den->config().n_z;
  const Eigen::Index b = z0.rows() / n_z;
  const Mat x = m.vae->decode(ad::constant(z0), b, frames).value();
  const FeatureLayout layout(static_cast<int>((x.cols() + 1) / 12));
  std::vector<Mat> out;
  for (Eigen::Index i = 0; i < b; ++i) {
    Mat raw = denormalize(MotionSequence{x.middleRows(i * frames, frames)}, *m.stats).frames;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      for (int c = layout.contacts; c < layout.dim; ++c) raw(r, c) = raw(r, c) >= 0.5 ? 1.0 : 0.0;
    }
    if (!raw.allFinite()) throw NumericError("decode: non-finite motion");
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace mulsmo
