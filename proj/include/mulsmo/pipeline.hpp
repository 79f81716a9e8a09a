#pragma once

// Stage runners shared by the CLI and the acceptance suite. Each stage reads
// and writes a working directory:
//   data/                     dataset manifest and motion files
//   ckpt/*.ckpt               model checkpoints
//   embeddings.jsonl          semantic label embeddings
//   logs/*.jsonl              per-epoch training logs
//   manifests/<command>.json  inputs, outputs, hashes and wall-clock timing

#include "mulsmo/evaluation.hpp"
#include "mulsmo/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mulsmo {

struct PipelineConfig {
  SynthConfig data;
  VaeConfig vae;
  VaeTrainConfig vae_train;
  DenoiserConfig denoiser;
  BaseTrainConfig base_train;
  ClassifierConfig classifier;  // feature_dim and n_classes are filled from the dataset
  ClassifierTrainConfig classifier_train;
  RetrievalConfig retrieval;
  StyleEncoderConfig style_encoder;
  StyleNetConfig style_net;
  TrainConfig style_train;
  AdaptorConfig adaptor;
  AdaptorTrainConfig adaptor_train;
  EvalConfig eval;
  GuidanceConfig generation;
  GuidanceConfig transfer;
  std::uint64_t seed = 0;

  // Mini desk-scale defaults.
  static PipelineConfig mini();
  nlohmann::json to_json() const;
  // Sections override the mini defaults; unknown sections are rejected.
  static PipelineConfig from_json(const nlohmann::json& j);
  // Derives every stage seed from one master seed.
  void set_seed(std::uint64_t seed);
};

// Built-in guidance profiles: "generation" and "transfer" carry the published
// weights; "mini" is the classifier-free setting used to evaluate mini-scale models.
GuidanceConfig guidance_profile(const std::string& name);

class Workdir {
 public:
  explicit Workdir(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data() const { return root_ / "data"; }
  std::filesystem::path ckpt(const std::string& name) const { return root_ / "ckpt" / (name + ".ckpt"); }
  std::filesystem::path embeddings() const { return root_ / "embeddings.jsonl"; }
  std::filesystem::path log(const std::string& name) const { return root_ / "logs" / (name + ".jsonl"); }
  std::filesystem::path manifest(const std::string& command) const { return root_ / "manifests" / (command + ".json"); }

 private:
  std::filesystem::path root_;
};

// Records the inputs and outputs of one command and writes its manifest.
class RunRecord {
 public:
  RunRecord(std::string command, const PipelineConfig& cfg);
  void input(const std::filesystem::path& p);
  void output(const std::filesystem::path& p);
  void note(const std::string& key, nlohmann::json value);
  void write(const Workdir& dir, double seconds) const;

 private:
  std::string command_;
  nlohmann::json doc_;
};

void run_synth_data(const PipelineConfig& cfg, const Workdir& dir);
VaeTrainResult run_train_vae(const PipelineConfig& cfg, const Workdir& dir);
std::vector<double> run_train_base(const PipelineConfig& cfg, const Workdir& dir);
// Style classifier, content classifier and the text/motion retrieval model.
nlohmann::json run_train_classifier(const PipelineConfig& cfg, const Workdir& dir);
StyleTrainResult run_train_style(const PipelineConfig& cfg, const Workdir& dir, Variant v);
AdaptorTrainResult run_train_adaptor(const PipelineConfig& cfg, const Workdir& dir, Variant v);

// Loaded, frozen models of a working directory.
struct LoadedModels {
  MotionDataset data;
  Vae vae;
  Denoiser den;
  std::optional<StyleNetBundle> style;
  std::optional<MotionClassifier> style_clf, content_clf;
  std::optional<RetrievalModel> retrieval;
  std::optional<Adaptor> adaptor;
  std::vector<SemanticEmbedding> embeddings;

  ModelBundle bundle() const;
  EvalAssets assets() const;
};

struct LoadOptions {
  std::optional<Variant> variant;  // style network to attach
  bool zero_init = false;          // attach a freshly initialised style network instead of a trained one
  bool evaluators = false;         // classifiers and retrieval model
  bool adaptor = false;
};
LoadedModels load_models(const PipelineConfig& cfg, const Workdir& dir, const LoadOptions& opt);

struct GenerateRequest {
  std::string content;
  std::optional<std::filesystem::path> style_motion;
  std::optional<std::string> style_text;
  std::optional<std::string> style_image;
  std::optional<std::filesystem::path> style_embedding;
  Variant variant = Variant::b;
  int count = 1;
  std::filesystem::path out;
};
std::vector<std::filesystem::path> run_generate(const PipelineConfig& cfg, const Workdir& dir,
                                                const GenerateRequest& req);

struct TransferRequest {
  std::filesystem::path content_motion;
  std::string content;  // optional text for the inversion and denoising passes
  std::optional<std::filesystem::path> style_motion;
  std::optional<std::string> style_text;
  Variant variant = Variant::b;
  int refine_iters = 5;
  std::filesystem::path out;
};
std::filesystem::path run_transfer(const PipelineConfig& cfg, const Workdir& dir, const TransferRequest& req);

struct EvaluateRequest {
  std::optional<Variant> variant;  // none evaluates the base model without a style branch
  bool zero_init = false;
  std::filesystem::path out;
};
EvalReport run_evaluate(const PipelineConfig& cfg, const Workdir& dir, const EvaluateRequest& req);

// Trains and evaluates variants a-d with one seed and writes ablation.json / ablation.md to out,
// plus one eval_report.json per model under out/<variant|zero-init|base>.
nlohmann::json run_ablate(const PipelineConfig& cfg, const Workdir& dir, const std::filesystem::path& out,
                          bool retrain = true);

// Mean wall-clock seconds per single-sentence generation, model load excluded.
nlohmann::json run_report_timing(const PipelineConfig& cfg, const Workdir& dir, Variant v, int repeats);

// Exports: skeleton keypoints as JSON and a top-down trajectory plot as SVG.
nlohmann::json keypoints_json(const Mat& motion_raw, const Skeleton& skel);
std::string trajectory_svg(const Mat& motion_raw, const Skeleton& skel);

}  // namespace mulsmo
