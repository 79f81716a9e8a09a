#include "mulsmo/checkpoint.hpp"
#include "mulsmo/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

using namespace mulsmo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path tiny_config_path() { return fs::path(MULSMO_SOURCE_DIR) / "configs" / "tiny.json"; }

PipelineConfig tiny_config() { return PipelineConfig::from_json(read_json(tiny_config_path())); }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mulsmo_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MULSMO_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

}  // namespace

TEST(PipelineConfig, JsonRoundTrip) {
  const PipelineConfig c = PipelineConfig::mini();
  EXPECT_EQ(PipelineConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(PipelineConfig, SectionsOverrideDefaults) {
  const PipelineConfig c = PipelineConfig::from_json({{"vae", {{"hidden", 24}}}});
  EXPECT_EQ(c.vae.hidden, 24);
  EXPECT_EQ(c.denoiser.width, PipelineConfig::mini().denoiser.width);
}

TEST(PipelineConfig, UnknownSectionRejected) {
  EXPECT_THROW(PipelineConfig::from_json({{"optimizer", json::object()}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json::array()), ConfigError);
}

TEST(PipelineConfig, MasterSeedReachesEveryStage) {
  PipelineConfig c = PipelineConfig::mini();
  c.set_seed(40);
  EXPECT_EQ(c.data.seed, 40u);
  EXPECT_NE(c.vae_train.seed, c.base_train.seed);
  EXPECT_EQ(c.eval.seed, 47u);
}

TEST(GuidanceProfiles, PublishedAndMini) {
  const auto gen = guidance_profile("generation");
  EXPECT_EQ(gen.w_c, 15.0);
  EXPECT_EQ(gen.w_s, 1.6);
  EXPECT_EQ(gen.tau, -0.2);
  EXPECT_EQ(gen.steps, 50);
  const auto tr = guidance_profile("transfer");
  EXPECT_EQ(tr.steps, 30);
  EXPECT_EQ(tr.w_s, 6.5);
  EXPECT_EQ(tr.tau, -0.4);
  const auto mini = guidance_profile("mini");
  EXPECT_FALSE(mini.classifier);
  EXPECT_EQ(mini.w_c, 2.5);
  EXPECT_THROW(guidance_profile("fast"), ConfigError);
}

TEST(GuidanceProfiles, ShippedFilesMatchBuiltIns) {
  for (const char* name : {"generation", "transfer", "mini"}) {
    const fs::path p = fs::path(MULSMO_SOURCE_DIR) / "profiles" / (std::string(name) + ".json");
    EXPECT_EQ(GuidanceConfig::from_json(read_json(p)).to_json(), guidance_profile(name).to_json()) << name;
  }
}

TEST(Pipeline, TinyEndToEnd) {
  const PipelineConfig cfg = tiny_config();
  const Workdir dir(fresh_dir("tiny"));
  run_synth_data(cfg, dir);
  run_train_vae(cfg, dir);
  const auto base_curve = run_train_base(cfg, dir);
  EXPECT_FALSE(base_curve.empty());
  run_train_classifier(cfg, dir);
  const auto base_hash = file_hash(dir.ckpt("base"));
  const auto style = run_train_style(cfg, dir, Variant::b);
  EXPECT_EQ(style.base_hash_before, style.base_hash_after);
  EXPECT_EQ(base_hash, file_hash(dir.ckpt("base")));
  run_train_adaptor(cfg, dir, Variant::b);

  GenerateRequest g;
  g.content = "a person walks forward";
  g.style_text = "flapping";
  g.count = 2;
  g.out = dir.root() / "gen";
  const auto files = run_generate(cfg, dir, g);
  EXPECT_FALSE(files.empty());
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;

  const MotionDataset data = load_dataset(dir.data());
  TransferRequest t;
  t.content_motion = dir.data() / data.manifest.entries.front().motion;
  t.style_text = "old";
  t.out = dir.root() / "transfer";
  EXPECT_TRUE(fs::exists(run_transfer(cfg, dir, t)));

  const EvalReport rep = run_evaluate(cfg, dir, {Variant::b, false, dir.root() / "eval"});
  EXPECT_GE(rep.sra, 0.0);
  EXPECT_LE(rep.sra, 100.0);
  EXPECT_LE(rep.r_precision[0], rep.r_precision[1]);
  EXPECT_LE(rep.r_precision[1], rep.r_precision[2]);
  EXPECT_TRUE(fs::exists(dir.root() / "eval" / "eval_report.json"));
  EXPECT_TRUE(fs::exists(dir.manifest("train-style-b")));
  fs::remove_all(dir.root());
}

TEST(Pipeline, MissingCheckpointIsMissingDependency) {
  const PipelineConfig cfg = tiny_config();
  const Workdir dir(fresh_dir("missing"));
  run_synth_data(cfg, dir);
  EXPECT_THROW(run_train_base(cfg, dir), MissingDependency);
  fs::remove_all(dir.root());
}

TEST(Cli, ExitCodes) {
  const fs::path wd = fresh_dir("cli");
  const std::string common = " --workdir \"" + wd.string() + "\" --config \"" + tiny_config_path().string() + "\"";
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("generate --help"), 0);
  EXPECT_EQ(cli("train-vae --bogus-flag"), 2);
  EXPECT_EQ(cli("train-style --variant z" + common), 2);
  write_text(wd / "bad.json", R"({"vae": {"hidden": "wide"}})");
  EXPECT_EQ(cli("synth-data --workdir \"" + wd.string() + "\" --config \"" + (wd / "bad.json").string() + "\""), 2);
  EXPECT_EQ(cli("train-vae" + common), 3);  // no dataset yet
  EXPECT_EQ(cli("synth-data" + common), 0);
  EXPECT_EQ(cli("train-base" + common), 3);  // no VAE yet
  EXPECT_TRUE(fs::exists(wd / "data" / "manifest.json"));
  fs::remove_all(wd);
}
