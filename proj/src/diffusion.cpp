#include "mulsmo/diffusion.hpp"

#include <cmath>

namespace mulsmo {

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
}

}  // namespace

NoiseSchedule make_schedule(int T, const std::string& kind, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (kind != "linear") throw ConfigError("make_schedule: unknown kind '" + kind + "'");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) throw ConfigError("make_schedule: invalid beta range");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
    const auto i = static_cast<std::size_t>(t);
    s.beta[i] = beta_start + frac * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
  }
  return s;
}

Mat q_sample(const Mat& z0, int t, const Mat& eps, const NoiseSchedule& s) {
  check_t(t, s);
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) throw ConfigError("q_sample: shape mismatch");
  return std::sqrt(s.ab(t)) * z0 + std::sqrt(1.0 - s.ab(t)) * eps;
}

Mat q_sample(const Mat& z0, const std::vector<int>& ts, Eigen::Index tokens, const Mat& eps, const NoiseSchedule& s) {
  if (z0.rows() != static_cast<Eigen::Index>(ts.size()) * tokens) throw ConfigError("q_sample: batch mismatch");
  Mat out(z0.rows(), z0.cols());
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(b) * tokens;
    out.middleRows(r, tokens) = q_sample(z0.middleRows(r, tokens), ts[b], eps.middleRows(r, tokens), s);
  }
  return out;
}

Mat predict_clean(const Mat& z_t, int t, const Mat& eps_hat, const NoiseSchedule& s) {
  check_t(t, s);
  const double ab = s.ab(t);
  if (ab < 1e-12) throw NumericError("predict_clean: alpha_bar below 1e-12");
  return (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Var predict_clean(const Var& z_t, int t, const Var& eps_hat, const NoiseSchedule& s) {
  check_t(t, s);
  const double ab = s.ab(t);
  if (ab < 1e-12) throw NumericError("predict_clean: alpha_bar below 1e-12");
  return ad::scale(ad::sub(z_t, ad::scale(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

Mat ddim_step(const Mat& z_t, int t, int t_prev, const Mat& eps_hat, const NoiseSchedule& s, double eta, Rng* rng) {
  check_t(t, s);
  if (t_prev < 0 || t_prev >= t) throw ConfigError("ddim_step: need 0 <= t_prev < t");
  const double ab = s.ab(t);
  const double ab_prev = s.ab(t_prev);
  const Mat z0 = predict_clean(z_t, t, eps_hat, s);
  double sigma = 0.0;
  if (eta > 0.0) {
    if (rng == nullptr) throw ConfigError("ddim_step: eta > 0 needs an rng");
    sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
  }
  Mat out = std::sqrt(ab_prev) * z0 + std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) * eps_hat;
  if (sigma > 0.0) out += sigma * rng->normal_matrix(z_t.rows(), z_t.cols());
  return out;
}

Mat ddpm_step(const Mat& z_t, int t, const Mat& eps_hat, const NoiseSchedule& s, Rng& rng) {
  check_t(t, s);
  const auto i = static_cast<std::size_t>(t);
  const double ab = s.alpha_bar[i];
  const double ab_prev = s.alpha_bar[i - 1];
  const Mat mean = (z_t - s.beta[i] / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(s.alpha[i]);
  if (t == 1) return mean;
  const double var = s.beta[i] * (1.0 - ab_prev) / (1.0 - ab);
  return mean + std::sqrt(var) * rng.normal_matrix(z_t.rows(), z_t.cols());
}

std::vector<int> step_grid(int T, int steps, const std::string& spacing) {
  if (steps < 1 || steps > T) throw ConfigError("step_grid: steps must be in [1, T]");
  std::vector<int> grid;
  for (int k = steps; k >= 1; --k) {
    const double u = double(k) / double(steps);
    double pos = 0.0;
    if (spacing == "uniform") pos = u * T;
    else if (spacing == "quadratic") pos = u * u * T;
    else throw ConfigError("step_grid: unknown spacing '" + spacing + "'");
    int t = std::max(1, static_cast<int>(std::lround(pos)));
    if (!grid.empty() && t >= grid.back()) t = grid.back() - 1;
    if (t < 1) throw ConfigError("step_grid: too many steps for quadratic spacing");
    grid.push_back(t);
  }
  return grid;
}

}  // namespace mulsmo
