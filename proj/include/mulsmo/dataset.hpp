#pragma once

#include "mulsmo/motion.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mulsmo {

struct StyleLabel {
  std::string name;
  std::string group;  // CHAR, PER, EMO, ACT, MOT, OBJ
};

struct ManifestEntry {
  std::string motion;  // path relative to the manifest directory
  int content = 0;
  std::string text;
  int style = 0;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  int schema = 1;
  std::string skeleton;
  int joints = 0;
  int frames = 0;
  std::vector<std::string> content_taxonomy;
  std::vector<StyleLabel> style_taxonomy;
  std::vector<ManifestEntry> entries;
  NormStats stats;
  nlohmann::json generator;  // config that produced the data, if synthetic

  int feature_dim() const { return feature_dim_for_joints(joints); }
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Manifest plus the raw (unnormalised) motion matrices, index-aligned with entries.
struct MotionDataset {
  DatasetManifest manifest;
  std::vector<Mat> motions;

  std::vector<std::size_t> split_indices(const std::string& split) const;
  Mat normalized(std::size_t i) const;
};

MotionDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const MotionDataset& ds);

struct SynthConfig {
  int n_content = 4;
  int n_style = 6;
  int samples_per_pair = 25;
  int frames = 40;
  int joints = 8;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// Catalogue sizes available to the generator.
int synth_content_count();
int synth_style_count();
const std::vector<StyleLabel>& synth_style_catalogue();
std::vector<std::string> content_templates(int content);

// One procedural sample: world joint trajectory (J from the skeleton) and contacts.
struct SynthSample {
  JointTrajectory trajectory;
  Mat contacts;  // L x 4
};
SynthSample synth_motion(int content, int style, int frames, const Skeleton& skel, Rng& rng);

// Generates the dataset in memory; deterministic given the config.
MotionDataset synth_dataset(const SynthConfig& config);

// Tokenises free text into lowercase alphanumeric words.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace mulsmo
