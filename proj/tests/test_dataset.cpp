#include "mulsmo/checkpoint.hpp"
#include "mulsmo/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace mulsmo;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_content = 2;
  c.n_style = 3;
  c.samples_per_pair = 4;
  c.frames = 20;
  return c;
}

// Variance over frames of the wrist heights, summed over both wrists.
double arm_variance(const SynthSample& s, const Skeleton& skel) {
  double total = 0.0;
  for (int w : skel.wrist_joints) {
    Eigen::VectorXd y(s.trajectory.length());
    for (Eigen::Index t = 0; t < y.size(); ++t) y(t) = s.trajectory.at(t, w).y();
    total += (y.array() - y.mean()).square().mean();
  }
  return total;
}

}  // namespace

TEST(Dataset, MiniConfigCounts) {
  const auto ds = synth_dataset(SynthConfig{});
  EXPECT_EQ(ds.manifest.entries.size(), 600u);
  EXPECT_EQ(ds.motions.size(), 600u);
  EXPECT_EQ(ds.manifest.content_taxonomy.size(), 4u);
  EXPECT_EQ(ds.manifest.style_taxonomy.size(), 6u);
  EXPECT_EQ(ds.split_indices("train").size() + ds.split_indices("test").size(), 600u);
  EXPECT_EQ(ds.split_indices("test").size(), 120u);
  for (const auto& m : ds.motions) {
    ASSERT_EQ(m.rows(), 40);
    ASSERT_EQ(m.cols(), 95);
    ASSERT_TRUE(validate_motion(MotionSequence{m}, 8).ok());
  }
}

TEST(Dataset, EveryPairIsInBothSplits) {
  const auto ds = synth_dataset(SynthConfig{});
  std::set<std::pair<int, int>> train, test;
  for (const auto& e : ds.manifest.entries) (e.split == "train" ? train : test).insert({e.content, e.style});
  EXPECT_EQ(train.size(), 24u);
  EXPECT_EQ(test.size(), 24u);
}

TEST(Dataset, SameSeedGivesIdenticalFiles) {
  const fs::path a = fs::temp_directory_path() / "mulsmo_ds_a";
  const fs::path b = fs::temp_directory_path() / "mulsmo_ds_b";
  fs::remove_all(a);
  fs::remove_all(b);
  save_dataset(a, synth_dataset(small_config()));
  save_dataset(b, synth_dataset(small_config()));
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    const auto other = b / rel;
    ASSERT_TRUE(fs::exists(other)) << rel;
    EXPECT_EQ(read_text(entry.path()), read_text(other)) << rel;
    ++files;
  }
  EXPECT_GT(files, 24u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, DifferentSeedsDiffer) {
  auto c = small_config();
  const auto a = synth_dataset(c);
  c.seed = 1;
  const auto b = synth_dataset(c);
  EXPECT_NE(a.motions[0], b.motions[0]);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "mulsmo_ds_rt";
  fs::remove_all(dir);
  const auto ds = synth_dataset(small_config());
  save_dataset(dir, ds);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.motions.size(), ds.motions.size());
  EXPECT_EQ(back.manifest.entries[3].text, ds.manifest.entries[3].text);
  EXPECT_EQ(back.manifest.entries[3].style, ds.manifest.entries[3].style);
  EXPECT_LT((back.motions[3] - ds.motions[3]).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_EQ(back.manifest.stats.clamped, ds.manifest.stats.clamped);
  fs::remove_all(dir);
}

TEST(Dataset, RejectsInvalidConfig) {
  auto c = small_config();
  c.n_content = 1;
  EXPECT_THROW(synth_dataset(c), ConfigError);
  c = small_config();
  c.n_style = synth_style_count() + 1;
  EXPECT_THROW(synth_dataset(c), ConfigError);
}

TEST(Dataset, StyleGroupsComeFromTaxonomy) {
  const std::set<std::string> known{"CHAR", "PER", "EMO", "ACT", "MOT", "OBJ"};
  std::set<std::string> groups;
  for (const auto& s : synth_style_catalogue()) {
    EXPECT_TRUE(known.count(s.group)) << s.name << " " << s.group;
    groups.insert(s.group);
  }
  // The mini label set spans several groups, and ACT exists so its exclusion is exercised.
  EXPECT_GE(groups.size(), 5u);
  EXPECT_TRUE(groups.count("ACT"));
}

TEST(Dataset, FlappingMovesArmsMoreThanLean) {
  const Skeleton skel = Skeleton::mini8();
  const auto& cat = synth_style_catalogue();
  int flapping = -1, lean = -1;
  for (std::size_t i = 0; i < cat.size(); ++i) {
    if (cat[i].name == "flapping") flapping = static_cast<int>(i);
    if (cat[i].name == "leanleft") lean = static_cast<int>(i);
  }
  ASSERT_GE(flapping, 0);
  ASSERT_GE(lean, 0);
  for (int content = 0; content < 4; ++content) {
    Rng r1(10 + content), r2(10 + content);
    const double vf = arm_variance(synth_motion(content, flapping, 40, skel, r1), skel);
    const double vl = arm_variance(synth_motion(content, lean, 40, skel, r2), skel);
    EXPECT_GE(vf, 2.0 * vl) << "content " << content << ": " << vf << " vs " << vl;
  }
}

TEST(Dataset, TokenizeLowercasesWords) {
  const auto t = tokenize("A person, WALKS-forward!");
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0], "a");
  EXPECT_EQ(t[2], "walks");
  EXPECT_EQ(t[3], "forward");
}
