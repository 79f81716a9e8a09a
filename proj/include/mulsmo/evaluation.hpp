#pragma once

#include "mulsmo/guidance.hpp"
#include "mulsmo/motion.hpp"
#include "mulsmo/style_space.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace mulsmo {

// Percentage of positions where predicted equals intended.
double recognition_accuracy(const std::vector<int>& predicted, const std::vector<int>& intended);
double sra(const MotionClassifier& style_clf, const std::vector<Mat>& motions, const std::vector<int>& intended);
double cra(const MotionClassifier& content_clf, const std::vector<Mat>& motions, const std::vector<int>& intended);

// Frechet distance between Gaussian fits of two feature sets (rows are samples).
// Covariances are shrunk toward their diagonal mean when a set has no more rows than columns.
double fid(const Mat& a, const Mat& b);
// Principal square root of a symmetric positive semi-definite matrix.
Mat sqrtm_psd(const Mat& m);

double diversity(const Mat& features, int n_pairs, Rng& rng);
double diversity_all_pairs(const Mat& features);

struct RetrievalConfig {
  int embed_dim = 16;
  int hidden = 32;
  int text_buckets = 256;
  double temperature = 0.1;
  int epochs = 40;
  int batch = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static RetrievalConfig from_json(const nlohmann::json& j);
};

// Joint text/motion embedding used by MM Dist and R-precision.
class RetrievalModel {
 public:
  RetrievalModel(const RetrievalConfig& config, int feature_dim, const NormStats& stats, std::uint64_t seed);

  const RetrievalConfig& config() const { return config_; }
  Var embed_text(const std::vector<std::string>& texts) const;
  Var embed_motion(const Var& x_raw, Eigen::Index batch, Eigen::Index frames) const;
  Mat text_embeddings(const std::vector<std::string>& texts) const;
  Mat motion_embeddings(const std::vector<Mat>& motions_raw) const;

  std::vector<ParamStore*> stores() { return {&text_params_, &motion_.params()}; }
  std::vector<const ParamStore*> stores() const { return {&text_params_, &motion_.params()}; }
  int feature_dim() const { return motion_.config().feature_dim; }
  const NormStats& stats() const { return motion_.stats(); }

 private:
  RetrievalConfig config_;
  ParamStore text_params_;
  Mlp text_;
  MotionClassifier motion_;
};

std::vector<double> train_retrieval_model(RetrievalModel& model, const MotionDataset& data, const EpochLogger& log = {});
void save_retrieval_model(const std::filesystem::path& path, const RetrievalModel& model, const nlohmann::json& meta);
RetrievalModel load_retrieval_model(const std::filesystem::path& path);

double mm_dist(const Mat& text_emb, const Mat& motion_emb);

// Top-1/2/3 retrieval accuracy (percent). For each motion the pool holds its
// own text plus pool-1 distractor texts drawn from samples whose group id
// differs (pass the content labels; equal ids never serve as distractors).
std::array<double, 3> r_precision(const Mat& text_emb, const Mat& motion_emb, const std::vector<int>& groups,
                                  int pool, Rng& rng);

struct FootSkateConfig {
  double h_contact = 0.05;  // m above the lowest foot point of the sequence
  double v_skate = 0.5;     // m/s
};

double foot_skate_ratio(const JointTrajectory& traj, const Skeleton& skel, const FootSkateConfig& cfg = {});

struct EvalConfig {
  int n_samples = 96;
  std::uint64_t seed = 0;
  std::string style_source = "motion";  // motion, text, image or none
  bool exclude_act = true;
  int diversity_pairs = 300;
  int r_pool = 32;
  FootSkateConfig foot;
  GuidanceConfig guidance;

  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct EvalAssets {
  const MotionDataset* data = nullptr;
  const MotionClassifier* style_clf = nullptr;
  const MotionClassifier* content_clf = nullptr;
  const RetrievalModel* retrieval = nullptr;
  const StyleMotionEncoder* encoder = nullptr;
  const Adaptor* adaptor = nullptr;
  const std::vector<SemanticEmbedding>* embeddings = nullptr;
};

struct EvalReport {
  double sra = 0.0;
  double cra = 0.0;
  double fid = 0.0;
  double diversity = 0.0;
  double real_diversity = 0.0;
  double mm_dist = 0.0;
  std::array<double, 3> r_precision{};
  double foot_skate_ratio = 0.0;
  int samples = 0;
  std::string config_hash;
  nlohmann::json details;

  nlohmann::json to_json() const;
};

// Planned evaluation requests: intended labels, texts and style references.
struct EvalPlan {
  std::vector<int> style, content;
  std::vector<std::string> texts;
  std::vector<std::size_t> style_refs;  // dataset indices of reference motions
};
EvalPlan plan_evaluation(const MotionDataset& data, const EvalConfig& cfg);

// Style signal for each planned sample according to cfg.style_source.
StyleSignalBatch style_signals(const EvalPlan& plan, const EvalAssets& assets, const EvalConfig& cfg);

// Samples and decodes all planned motions; each sample draws z_T from its own stream.
std::vector<Mat> generate_plan(const ModelBundle& m, const EvalPlan& plan, const StyleSignalBatch& style,
                               const GuidanceConfig& guidance, std::uint64_t seed);

EvalReport evaluate(const ModelBundle& m, const EvalAssets& assets, const EvalConfig& cfg);
EvalReport score_motions(const std::vector<Mat>& motions, const EvalPlan& plan, const EvalAssets& assets,
                         const EvalConfig& cfg);

}  // namespace mulsmo
