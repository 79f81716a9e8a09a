#include "mulsmo/checkpoint.hpp"
#include "mulsmo/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

using namespace mulsmo;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string workdir;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--workdir", c.workdir, "Working directory (default: $MULSMO_DATA_DIR or ./mulsmo-work)");
  cmd->add_option("--config", c.config, "Pipeline config JSON; sections override the mini defaults");
  cmd->add_option("--seed", c.seed, "Master seed");
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig::mini() : PipelineConfig::from_json(read_json(c.config));
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

GuidanceConfig load_profile(const std::string& profile) {
  if (fs::exists(profile)) return GuidanceConfig::from_json(read_json(profile));
  return guidance_profile(profile);
}

Workdir workdir(const Common& c) {
  if (!c.workdir.empty()) return Workdir(c.workdir);
  if (const char* env = std::getenv("MULSMO_DATA_DIR"); env != nullptr && *env != '\0') return Workdir(env);
  return Workdir("mulsmo-work");
}

fs::path out_or(const std::string& out, const Workdir& dir, const std::string& sub) {
  return out.empty() ? dir.root() / "outputs" / sub : fs::path(out);
}

Variant variant_of(const std::string& s) { return parse_variant(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mulsmo: multimodal stylized motion generation"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic motion dataset");
  add_common(synth, common);
  auto* tvae = app.add_subcommand("train-vae", "Train the motion VAE");
  add_common(tvae, common);
  auto* tbase = app.add_subcommand("train-base", "Train the text-conditioned latent denoiser");
  add_common(tbase, common);
  auto* tclf = app.add_subcommand("train-classifier", "Train the style/content classifiers and the retrieval model");
  add_common(tclf, common);

  std::string variant = "b";
  auto* tstyle = app.add_subcommand("train-style", "Train the style network with the base frozen");
  add_common(tstyle, common);
  tstyle->add_option("--variant", variant, "Fusion variant a|b|c|d")->capture_default_str();

  auto* tadapt = app.add_subcommand("train-adaptor", "Align label embeddings with the style space");
  add_common(tadapt, common);
  tadapt->add_option("--variant", variant, "Style network variant")->capture_default_str();

  std::string content, style_text, style_image, style_motion, style_embedding, out;
  int count = 1;
  auto* gen = app.add_subcommand("generate", "Generate stylized motions");
  add_common(gen, common);
  gen->add_option("--content", content, "Content text")->required();
  gen->add_option("--style-motion", style_motion, "Reference style motion (.mot)");
  gen->add_option("--style-text", style_text, "Style label looked up in the text embeddings");
  gen->add_option("--style-image", style_image, "Style label looked up in the image embeddings");
  gen->add_option("--style-embedding", style_embedding, "JSON file holding a raw semantic embedding");
  gen->add_option("--variant", variant, "Style network variant")->capture_default_str();
  gen->add_option("--count", count, "Number of samples")->capture_default_str();
  gen->add_option("--out", out, "Output directory");
  gen->add_option("--profile", common.profile, "Guidance profile: generation, transfer, mini, or a JSON file");

  std::string content_motion;
  std::optional<int> steps;
  int refine = TransferRequest{}.refine_iters;
  auto* trans = app.add_subcommand("transfer", "Restyle an existing motion via DDIM inversion");
  add_common(trans, common);
  trans->add_option("--content-motion", content_motion, "Motion to restyle (.mot)")->required();
  trans->add_option("--content", content, "Optional content text");
  trans->add_option("--style-motion", style_motion, "Reference style motion (.mot)");
  trans->add_option("--style-text", style_text, "Style label");
  trans->add_option("--variant", variant, "Style network variant")->capture_default_str();
  trans->add_option("--steps", steps, "Inversion and denoising steps (default from the profile)");
  trans->add_option("--refine", refine, "Fixed-point refinements per inversion step")->capture_default_str();
  trans->add_option("--out", out, "Output directory");
  trans->add_option("--profile", common.profile, "Guidance profile: generation, transfer, mini, or a JSON file");

  std::string style_source;
  std::optional<int> samples;
  bool zero_init = false;
  auto* eval = app.add_subcommand("evaluate", "Generate and score an evaluation set");
  add_common(eval, common);
  eval->add_option("--variant", variant, "a|b|c|d, or base for the model without a style branch")->capture_default_str();
  eval->add_flag("--zero-init", zero_init, "Use a freshly initialised style network");
  eval->add_option("--style-source", style_source, "motion|text|image|none");
  eval->add_option("--samples", samples, "Number of generated samples");
  eval->add_option("--out", out, "Output directory for eval_report.json");
  eval->add_option("--profile", common.profile, "Guidance profile: generation, transfer, mini, or a JSON file");

  bool no_retrain = false;
  auto* abl = app.add_subcommand("ablate", "Train and evaluate fusion variants a-d");
  add_common(abl, common);
  abl->add_option("--out", out, "Output directory for the comparison table");
  abl->add_flag("--no-retrain", no_retrain, "Reuse existing style network checkpoints");

  int repeats = 10;
  auto* timing = app.add_subcommand("report-timing", "Average inference time per sentence");
  add_common(timing, common);
  timing->add_option("--variant", variant, "Style network variant")->capture_default_str();
  timing->add_option("--repeats", repeats, "Generations to time")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = load_config(common);
    const Workdir dir = workdir(common);
    if (synth->parsed()) {
      run_synth_data(cfg, dir);
      std::cout << "dataset written to " << dir.data() << "\n";
    } else if (tvae->parsed()) {
      const auto r = run_train_vae(cfg, dir);
      std::cout << "vae reconstruction mse " << r.final_recon << "\n";
    } else if (tbase->parsed()) {
      const auto c = run_train_base(cfg, dir);
      std::cout << "base denoiser final loss " << (c.empty() ? 0.0 : c.back()) << "\n";
    } else if (tclf->parsed()) {
      std::cout << run_train_classifier(cfg, dir).dump(2) << "\n";
    } else if (tstyle->parsed()) {
      const auto r = run_train_style(cfg, dir, variant_of(variant));
      std::cout << "style network " << variant << " final loss " << (r.total_curve.empty() ? 0.0 : r.total_curve.back())
                << ", base hash " << hex64(r.base_hash_before) << " -> " << hex64(r.base_hash_after) << "\n";
    } else if (tadapt->parsed()) {
      const auto r = run_train_adaptor(cfg, dir, variant_of(variant));
      std::cout << "adaptor retrieval top-1 " << r.top1 << "%\n";
    } else if (gen->parsed()) {
      if (!common.profile.empty()) cfg.generation = load_profile(common.profile);
      GenerateRequest req;
      req.content = content;
      if (!style_motion.empty()) req.style_motion = style_motion;
      if (!style_text.empty()) req.style_text = style_text;
      if (!style_image.empty()) req.style_image = style_image;
      if (!style_embedding.empty()) req.style_embedding = style_embedding;
      req.variant = variant_of(variant);
      req.count = count;
      req.out = out_or(out, dir, "generate");
      for (const auto& p : run_generate(cfg, dir, req)) std::cout << p.string() << "\n";
    } else if (trans->parsed()) {
      if (!common.profile.empty()) cfg.transfer = load_profile(common.profile);
      if (steps) cfg.transfer.steps = *steps;
      TransferRequest req;
      req.content_motion = content_motion;
      req.content = content;
      if (!style_motion.empty()) req.style_motion = style_motion;
      if (!style_text.empty()) req.style_text = style_text;
      req.variant = variant_of(variant);
      req.refine_iters = refine;
      req.out = out_or(out, dir, "transfer");
      std::cout << run_transfer(cfg, dir, req).string() << "\n";
    } else if (eval->parsed()) {
      if (!common.profile.empty()) cfg.eval.guidance = load_profile(common.profile);
      if (!style_source.empty()) cfg.eval = EvalConfig::from_json([&] {
        auto j = cfg.eval.to_json();
        j["style_source"] = style_source;
        return j;
      }());
      if (samples) cfg.eval.n_samples = *samples;
      EvaluateRequest req;
      if (variant != "base") req.variant = variant_of(variant);
      req.zero_init = zero_init;
      req.out = out_or(out, dir, "evaluate");
      std::cout << run_evaluate(cfg, dir, req).to_json().dump(2) << "\n";
    } else if (abl->parsed()) {
      const auto r = run_ablate(cfg, dir, out_or(out, dir, "ablate"), !no_retrain);
      std::cout << read_text(out_or(out, dir, "ablate") / "ablation.md");
      (void)r;
    } else if (timing->parsed()) {
      std::cout << run_report_timing(cfg, dir, variant_of(variant), repeats).dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingDependency& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
