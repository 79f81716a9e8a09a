#pragma once

#include "mulsmo/autodiff.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mulsmo {

using ad::Mat;
using ad::Var;
using RowVecD = Eigen::RowVectorXd;

// Error kinds surfaced to the CLI as distinct exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingDependency : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

// Explicit RNG stream. Child streams are derived from (seed, stream id) so
// results do not depend on scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  Rng fork(std::uint64_t stream) const;
  std::uint64_t seed() const { return seed_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  int uniform_int(int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Named parameter collection owning the leaf variables of one model.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
  };

  Var add(const std::string& name, Mat init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  // Frozen parameters never receive gradients.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }
  void zero_grad();

  std::size_t scalar_count() const;
  std::uint64_t hash() const;

 private:
  std::vector<Entry> entries_;
  bool frozen_ = false;
};

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
         bool zero_init = false);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width);
  Var operator()(const Var& x) const;
};

// Pre-norm transformer encoder block operating on row-stacked token batches.
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear q, k, v, o, fc1, fc2;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, Eigen::Index width, int heads,
                   Eigen::Index ff_width, Rng& rng);
  Var operator()(const Var& x, Eigen::Index tokens) const;
};

// Two-layer MLP with SiLU.
struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden,
      Eigen::Index out, Rng& rng);
  Var operator()(const Var& x) const;
};

// Sinusoidal features for a column of scalar positions (n x 1 -> n x width).
Mat sinusoidal_embedding(const Eigen::VectorXd& positions, Eigen::Index width);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class AdamW {
 public:
  AdamW(ParamStore& store, AdamWConfig config);
  // Applies one update from the gradients currently held by the store.
  void step();
  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParamStore& store_;
  AdamWConfig config_;
  std::vector<Mat> m_, v_;
  long steps_ = 0;
};

Var mse(const Var& a, const Var& b);

}  // namespace mulsmo
