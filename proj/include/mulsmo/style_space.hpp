#pragma once

#include "mulsmo/dataset.hpp"
#include "mulsmo/nn.hpp"
#include "mulsmo/vae.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mulsmo {

struct ClassifierConfig {
  int feature_dim = 95;
  int hidden = 32;
  int d_f = 16;
  int kernel = 5;
  int n_classes = 2;
  std::string target = "style";  // "style" or "content"

  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

// Temporal-convolution classifier over raw motion features. The input
// normalisation is part of the model, so features can be taken directly from
// denormalised decoder output.
class MotionClassifier {
 public:
  MotionClassifier(const ClassifierConfig& config, const NormStats& stats, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const NormStats& stats() const { return stats_; }

  // x_raw: (B*L) x D. Penultimate features, B x d_f.
  Var features(const Var& x_raw, Eigen::Index batch, Eigen::Index frames) const;
  // Final linear layer on features, B x K.
  Var head(const Var& features) const;

  RowVecD feature(const Mat& seq_raw) const;
  int classify(const Mat& seq_raw) const;
  std::vector<int> classify_batch(const std::vector<Mat>& seqs_raw) const;
  Mat feature_batch(const std::vector<Mat>& seqs_raw) const;  // N x d_f

 private:
  ClassifierConfig config_;
  NormStats stats_;
  ParamStore params_;
  Linear conv1_, conv2_, proj_, head_;
};

struct ClassifierTrainConfig {
  int epochs = 40;
  int batch = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ClassifierTrainConfig from_json(const nlohmann::json& j);
};

struct ClassifierTrainResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> loss_curve;
};

ClassifierTrainResult train_classifier(MotionClassifier& clf, const MotionDataset& data,
                                       const ClassifierTrainConfig& config, const EpochLogger& log = {});

void save_classifier(const std::filesystem::path& path, const MotionClassifier& clf, const nlohmann::json& meta);
MotionClassifier load_classifier(const std::filesystem::path& path);

struct StyleEncoderConfig {
  int feature_dim = 95;
  int max_frames = 40;
  int patch = 4;
  int width = 32;
  int heads = 2;
  int d_f = 16;

  nlohmann::json to_json() const;
  static StyleEncoderConfig from_json(const nlohmann::json& j);
};

// Single transformer block over patched, normalised motion with a learned
// token substituted for masked frames; mean-pooled to a d_f embedding.
class StyleMotionEncoder {
 public:
  StyleMotionEncoder(const StyleEncoderConfig& config, std::uint64_t seed);

  const StyleEncoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x: (B*L) x D normalised; frame_mask (optional) has B*L entries, 1 = masked.
  Var encode(const Var& x, Eigen::Index batch, Eigen::Index frames, const std::vector<char>* frame_mask = nullptr) const;
  RowVecD encode(const Mat& seq_norm) const;

 private:
  StyleEncoderConfig config_;
  ParamStore params_;
  Var mask_token_, pos_;
  Linear patch_in_, out_;
  TransformerBlock block_;
};

// Text-anchored InfoNCE with cosine similarity; positives on the diagonal.
// symmetric adds the style-anchored direction and averages.
Var infonce_loss(const Var& anchors, const Var& targets, double temperature, bool symmetric = false);

struct SemanticEmbedding {
  std::string id;
  std::string modality;  // "text" or "image"
  RowVecD values;
};

// Deterministic stand-in for an external encoder: each label maps to a column
// of a seeded random orthogonal matrix; image embeddings add a small seeded perturbation.
std::vector<SemanticEmbedding> deterministic_embeddings(const std::vector<std::string>& labels, int dim,
                                                        std::uint64_t seed, bool with_images = true);
void write_embeddings(const std::filesystem::path& path, const std::vector<SemanticEmbedding>& embeddings);
std::vector<SemanticEmbedding> read_embeddings(const std::filesystem::path& path);
const SemanticEmbedding& find_embedding(const std::vector<SemanticEmbedding>& all, const std::string& id,
                                        const std::string& modality = "text");

struct AdaptorConfig {
  int d_e = 32;
  int hidden = 64;
  int d_f = 16;
  double temperature = 0.07;
  bool symmetric = false;

  nlohmann::json to_json() const;
  static AdaptorConfig from_json(const nlohmann::json& j);
};

class Adaptor {
 public:
  Adaptor(const AdaptorConfig& config, std::uint64_t seed);

  const AdaptorConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Var forward(const Var& e) const;  // B x d_e -> B x d_f
  RowVecD adapt(const SemanticEmbedding& e) const;

 private:
  AdaptorConfig config_;
  ParamStore params_;
  Mlp mlp_;
};

struct AdaptorTrainConfig {
  int epochs = 500;
  int samples_per_label = 4;  // batches per epoch, each holding one motion per label
  double lr = 2e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static AdaptorTrainConfig from_json(const nlohmann::json& j);
};

struct AdaptorTrainResult {
  double top1 = 0.0;  // text-to-style retrieval accuracy over training labels, percent
  std::vector<double> loss_curve;
};

// label_embeddings[k] pairs with the style-motion embeddings in style_embeddings[k].
AdaptorTrainResult train_adaptor(Adaptor& adaptor, const std::vector<RowVecD>& label_embeddings,
                                 const std::vector<std::vector<RowVecD>>& style_embeddings,
                                 const AdaptorTrainConfig& config, const EpochLogger& log = {});

void save_adaptor(const std::filesystem::path& path, const Adaptor& adaptor, const nlohmann::json& meta);
Adaptor load_adaptor(const std::filesystem::path& path);

}  // namespace mulsmo
