#pragma once

#include "mulsmo/control_flow.hpp"
#include "mulsmo/dataset.hpp"
#include "mulsmo/style_space.hpp"
#include "mulsmo/vae.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mulsmo {

// Frozen-VAE latents of one split plus the labels and normalised motions they came from.
struct LatentSet {
  Mat z;  // (N*n_z) x d_z, posterior means in the scaled latent space
  Eigen::Index n_z = 0;
  std::vector<std::string> texts;
  std::vector<int> content;
  std::vector<int> style;
  std::vector<Mat> motions;  // normalised, L x D

  std::size_t size() const { return texts.size(); }
  Mat latent(std::size_t i) const { return z.middleRows(static_cast<Eigen::Index>(i) * n_z, n_z); }
};

LatentSet encode_latents(const Vae& vae, const MotionDataset& data, const std::string& split);

struct BaseTrainConfig {
  int epochs = 300;
  int batch = 64;
  double lr = 4e-3;
  double p_null = 0.1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static BaseTrainConfig from_json(const nlohmann::json& j);
};

std::vector<double> train_base_denoiser(Denoiser& den, const LatentSet& data, const BaseTrainConfig& config,
                                        const EpochLogger& log = {});

struct TrainConfig {
  int epochs = 120;
  int batch = 32;
  double lr = 2e-3;
  double lambda_pr = 1.0;
  double mask_fraction = 0.1;
  std::string mask_mode = "random";  // random or contiguous frames
  double p_null = 0.1;
  std::string style_ref = "same_label";  // style reference for the style batch: same_label or self
  std::uint64_t seed = 0;
  Variant variant = Variant::b;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// One denoising batch: clean latents, timesteps, noise, content condition,
// style reference motions (normalised, row-stacked) and their frame mask.
struct TrainBatch {
  Mat z0;
  std::vector<int> ts;
  Mat eps;
  CondBatch cond;
  Mat style_motion;
  Eigen::Index frames = 0;
  std::vector<char> frame_mask;

  std::size_t size() const { return ts.size(); }
};

// Draws t ~ U{1..T} and eps ~ N(0, I); refs[i] is the style reference for items[i].
TrainBatch make_batch(const LatentSet& data, const std::vector<std::size_t>& items,
                      const std::vector<std::size_t>& refs, const NoiseSchedule& schedule, Rng& rng);

// Replaces content conditions with null at rate p_null and masks mask_fraction of every style motion's frames.
void condition_dropout(TrainBatch& batch, Rng& rng, const TrainConfig& config);

// Mean squared error between predicted and true noise.
Var denoising_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& batch);
Var std_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& style_batch);
Var prior_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& content_batch);
Var total_loss(const Var& std_l, const Var& pr_l, double lambda_pr);

struct StyleTrainResult {
  std::vector<double> std_curve, pr_curve, total_curve;
  std::uint64_t base_hash_before = 0;
  std::uint64_t base_hash_after = 0;
};

// Trains the style network, its fusion links and the style motion encoder
// with the generation network frozen. Throws if the base parameters change.
StyleTrainResult train_style_network(const Denoiser& den, StyleNet& net, StyleMotionEncoder& enc,
                                     const LatentSet& style_data, const LatentSet& content_data,
                                     const TrainConfig& config, const EpochLogger& log = {});

void save_style_network(const std::filesystem::path& path, const StyleNet& net, const StyleMotionEncoder& enc,
                        const nlohmann::json& meta);
struct StyleNetBundle {
  StyleNet net;
  StyleMotionEncoder encoder;
};
// Rebuilds the style network against `base`; a variant mismatch with `expected` is an error.
StyleNetBundle load_style_network(const std::filesystem::path& path, const Denoiser& base,
                                  const Variant* expected = nullptr);

}  // namespace mulsmo
