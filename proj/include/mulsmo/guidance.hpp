#pragma once

#include "mulsmo/control_flow.hpp"
#include "mulsmo/style_space.hpp"
#include "mulsmo/vae.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mulsmo {

struct GuidanceConfig {
  double w_c = 15.0;
  double w_s = 1.6;
  double tau = -0.2;
  bool content_cfg = true;
  bool style_cfg = true;
  bool classifier = true;
  int steps = 50;
  std::string sampler = "ddim";  // ddim or ddpm
  std::string spacing = "uniform";
  double eta = 0.0;
  double clip = 0.0;        // per-sample L2 clip of the guidance gradient; 0 disables
  bool full_grad = true;    // differentiate through the denoiser passes too; false treats eps_hat as constant
  int iterations = 1;       // repeated corrections per step
  // Apply the correction along the direction that lowers G for negative tau.
  // false applies eps + tau * grad literally.
  bool descent_sign = true;
  // "z0" scales dG/dz_t by sqrt(alpha_bar_t); "zt" uses dG/dz_t as is, which
  // overshoots badly at high noise levels.
  std::string grad_space = "z0";

  nlohmann::json to_json() const;
  static GuidanceConfig from_json(const nlohmann::json& j);
};

// Everything sampling needs; pointers are borrowed.
struct ModelBundle {
  const Vae* vae = nullptr;
  const Denoiser* den = nullptr;
  const StyleNet* net = nullptr;
  const MotionClassifier* extractor = nullptr;  // style feature extractor f
  const NormStats* stats = nullptr;
  Eigen::Index frames = 40;
};

// Per-sample style signal: embeddings (B x d_f, empty for no style) and,
// where a reference motion exists, its extractor feature for classifier guidance.
struct StyleSignalBatch {
  Mat embeddings;
  Mat ref_features;           // B x d_f of the extractor
  std::vector<char> has_ref;  // samples without a reference skip classifier guidance

  bool has_style() const { return embeddings.size() > 0; }
};

Mat cfg_combine(const Mat& e_uu, const Mat& e_cu, const Mat& e_cs, double w_c, double w_s);

// Combined classifier-free estimate as a graph node, so full_grad can differentiate through it.
Var cfg_eps(const ModelBundle& m, const Var& z_t, int t, const CondBatch& cond, const StyleSignalBatch& style,
            const GuidanceConfig& cfg);

struct StyleDistance {
  Eigen::VectorXd G;  // per sample
  Mat grad;           // dG/dz_t, same shape as z_t
};

// G = |f(denorm(decode(z0_hat))) - ref|_1 with z0_hat from eps_hat.
// With full_grad the eps estimate is recomputed inside the graph from z_t.
StyleDistance style_distance(const ModelBundle& m, const Mat& z_t, int t, const Mat& eps_hat, const Mat& ref_features,
                             const GuidanceConfig& cfg, const CondBatch* cond = nullptr,
                             const StyleSignalBatch* style = nullptr);

// eps' = eps -/+ tau * grad per the sign convention (see GuidanceConfig::descent_sign).
Mat apply_classifier_guidance(const Mat& eps_hat, const Mat& grad, double tau, double clip, bool descent_sign,
                              Eigen::Index tokens_per_sample);

Mat guided_eps(const ModelBundle& m, const Mat& z_t, int t, const CondBatch& cond, const StyleSignalBatch& style,
               const GuidanceConfig& cfg);

// Runs the sampler from z_T (drawn from rng when not given) and returns z_0.
Mat sample_latents(const ModelBundle& m, const CondBatch& cond, const StyleSignalBatch& style, const GuidanceConfig& cfg,
                   Rng& rng, const Mat* z_T = nullptr);

// Decodes row-stacked latents to raw motions with contacts snapped to {0, 1}.
std::vector<Mat> decode_motions(const ModelBundle& m, const Mat& z0, Eigen::Index frames);

}  // namespace mulsmo
