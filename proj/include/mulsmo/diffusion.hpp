#pragma once

#include "mulsmo/nn.hpp"

#include <string>
#include <vector>

namespace mulsmo {

// Discrete noise schedule indexed 1..T; index 0 is the clean state (alpha_bar = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // size T+1, beta[0] unused
  std::vector<double> alpha;      // size T+1
  std::vector<double> alpha_bar;  // size T+1, alpha_bar[0] = 1

  double ab(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

NoiseSchedule make_schedule(int T, const std::string& kind = "linear", double beta_start = 1e-4,
                            double beta_end = 2e-2);

// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.
Mat q_sample(const Mat& z0, int t, const Mat& eps, const NoiseSchedule& s);
// Per-sample timesteps for row-stacked latents with `tokens` rows per sample.
Mat q_sample(const Mat& z0, const std::vector<int>& ts, Eigen::Index tokens, const Mat& eps, const NoiseSchedule& s);

// z0_hat = (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t).
Mat predict_clean(const Mat& z_t, int t, const Mat& eps_hat, const NoiseSchedule& s);
Var predict_clean(const Var& z_t, int t, const Var& eps_hat, const NoiseSchedule& s);

// Deterministic (eta = 0) or stochastic DDIM update from t to t_prev < t.
Mat ddim_step(const Mat& z_t, int t, int t_prev, const Mat& eps_hat, const NoiseSchedule& s, double eta = 0.0,
              Rng* rng = nullptr);
// Ancestral DDPM update from t to t-1.
Mat ddpm_step(const Mat& z_t, int t, const Mat& eps_hat, const NoiseSchedule& s, Rng& rng);

// Descending timesteps t_S > ... > t_1 used by an S-step sampler; the final update goes to 0.
std::vector<int> step_grid(int T, int steps, const std::string& spacing = "uniform");

}  // namespace mulsmo
