#pragma once

#include "mulsmo/diffusion.hpp"
#include "mulsmo/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mulsmo {

struct DenoiserConfig {
  int n_z = 2;
  int d_z = 16;
  int width = 64;
  int heads = 4;
  int blocks = 4;  // encoder blocks; the decoder mirrors them
  int text_buckets = 256;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

// Per-sample content condition; a null entry selects the learned null embedding.
struct CondBatch {
  std::vector<std::string> texts;
  std::vector<char> null;

  std::size_t size() const { return texts.size(); }
  static CondBatch repeat(const std::string& text, std::size_t n);
  static CondBatch nulls(std::size_t n);
};

// Attachment points for a side network. The hook sees every block input of
// the generation network and may replace it; encoder outputs pass through
// encoder_output so post-block fusion is possible too.
class BlockHook {
 public:
  virtual ~BlockHook() = default;
  virtual void begin(const Var& input_tokens, const Var& time_tokens) = 0;
  virtual Var encoder_input(int block, const Var& h) = 0;
  virtual Var encoder_output(int block, const Var& h) = 0;
  virtual Var middle_input(const Var& h) = 0;
  virtual Var decoder_input(int block, const Var& h) = 0;
};

// Hashed bag-of-words features (B x buckets), mean over tokens.
Mat bag_of_words(const std::vector<std::string>& texts, int buckets);

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Eigen::Index tokens() const { return 1 + config_.n_z; }

  // z_t: (B*n_z) x d_z, one timestep per sample. Returns eps_hat with z_t's shape.
  Var forward(const Var& z_t, const std::vector<int>& ts, const CondBatch& cond, BlockHook* hook = nullptr) const;
  Mat predict(const Mat& z_t, int t, const CondBatch& cond) const;

  const TransformerBlock& encoder_block(int i) const { return enc_.at(static_cast<std::size_t>(i)); }

 private:
  Var content_embedding(const CondBatch& cond) const;

  DenoiserConfig config_;
  NoiseSchedule schedule_;
  ParamStore params_;
  Mlp time_mlp_;
  Linear text_proj_, in_proj_, out_proj_;
  LayerNorm out_norm_;
  Var null_emb_, pos_;
  std::vector<TransformerBlock> enc_, dec_;
  TransformerBlock mid_;
  std::vector<Linear> skip_;
};

// Deterministic DDIM inversion on the content-only network: maps a clean
// latent to the noise latent that the same step grid denoises back to it.
// refine_iters > 0 adds fixed-point corrections per step.
Mat ddim_invert(const Denoiser& den, const Mat& z0, int steps, const CondBatch& cond, int refine_iters = 0,
                const std::string& spacing = "uniform");
// Plain DDIM sampling on the content-only network (no guidance).
Mat ddim_denoise(const Denoiser& den, const Mat& z_T, int steps, const CondBatch& cond,
                 const std::string& spacing = "uniform");

void save_denoiser(const std::filesystem::path& path, const Denoiser& den, const nlohmann::json& meta);
Denoiser load_denoiser(const std::filesystem::path& path);

}  // namespace mulsmo
