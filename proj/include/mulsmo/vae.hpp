#pragma once

#include "mulsmo/dataset.hpp"
#include "mulsmo/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <vector>

namespace mulsmo {

struct VaeConfig {
  int feature_dim = 95;
  int max_frames = 40;
  int hidden = 256;
  int n_z = 2;
  int d_z = 16;
  double kl_weight = 1e-4;

  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

// VAE over the whole flattened sequence: two SiLU layers on each side, latent
// reshaped into n_z tokens of width d_z. Shorter sequences are padded with their
// last frame on the way in and trimmed on the way out. Latents exposed by encode()/decode() are divided by latent_scale so the
// diffusion state has roughly unit variance.
class Vae {
 public:
  Vae(const VaeConfig& config, std::uint64_t seed);

  const VaeConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) { latent_scale_ = s; }

  // x: (B*L) x D normalised frames. Returns unscaled posterior mean and log-variance, (B*n_z) x d_z each.
  std::pair<Var, Var> posterior(const Var& x, Eigen::Index batch, Eigen::Index frames) const;
  // z: (B*n_z) x d_z unscaled latent. Returns (B*L) x D normalised frames.
  Var decode_raw(const Var& z, Eigen::Index batch, Eigen::Index frames) const;

  // Scaled-latent interface used downstream.
  Var encode_mean(const Var& x, Eigen::Index batch, Eigen::Index frames) const;
  Var decode(const Var& z_scaled, Eigen::Index batch, Eigen::Index frames) const;
  Mat encode(const Mat& seq) const;                   // L x D -> n_z x d_z
  Mat encode_sample(const Mat& seq, Rng& rng) const;  // reparameterised draw
  Mat decode(const Mat& z, Eigen::Index frames) const;

 private:
  VaeConfig config_;
  ParamStore params_;
  Linear enc1_, enc2_, head_, dec1_, dec2_, out_;
  double latent_scale_ = 1.0;
};

struct VaeTrainConfig {
  int epochs = 40;
  int batch = 32;
  double lr = 3e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static VaeTrainConfig from_json(const nlohmann::json& j);
};

struct VaeTrainResult {
  std::vector<double> recon_curve;  // mean reconstruction MSE per epoch
  std::vector<double> kl_curve;
  double final_recon = 0.0;  // mean-mode reconstruction MSE on the training split after training
};

using EpochLogger = std::function<void(const nlohmann::json&)>;

VaeTrainResult train_vae(Vae& vae, const MotionDataset& data, const VaeTrainConfig& config,
                         const EpochLogger& log = {});

void save_vae(const std::filesystem::path& path, const Vae& vae, const nlohmann::json& meta);
Vae load_vae(const std::filesystem::path& path);

}  // namespace mulsmo
