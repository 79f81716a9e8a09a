// Acceptance suite: prints one PASS/FAIL line per criterion.
//
// Criteria 1, 3 (algebra), 5 and 8 are self-contained. The others drive the
// CLI through the full mini pipeline in <workdir>/mini and inspect its
// artifacts; criterion 10 runs every command twice on the tiny config.
//
// Exit status is 0 when the suite ran to completion, whatever the verdicts,
// unless --strict is given; harness failures exit 1.

#include "mulsmo/checkpoint.hpp"
#include "mulsmo/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace mulsmo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tolerances and thresholds, pinned.
constexpr int kIdentityInputs = 100;
constexpr double kIdentityBudgetSeconds = 60.0;
constexpr double kRoundTripExact = 1e-6;
constexpr double kInversionLinf = 1e-2;
constexpr int kInversionSeeds = 20;
constexpr int kGradTrials = 5;
constexpr double kGradRtol = 1e-3;
constexpr double kGradStep = 1e-5;
constexpr int kDescentTrials = 20;
constexpr double kDescentRate = 0.70;
constexpr double kInfoNceTol = 1e-6;
constexpr double kStyledSra = 70.0;
constexpr double kChanceSigmas = 3.0;
constexpr double kRetrievalDrop = 15.0;
constexpr double kTextGap = 15.0;
constexpr double kAblationBudgetSeconds = 30.0 * 60.0;
constexpr double kFidRel = 0.01;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Suite {
  std::vector<std::pair<int, std::string>> lines;
  json report = json::object();
  int failures = 0;

  void record(int id, const std::string& name, const Verdict& v, double seconds) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << (v.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << ": " << v.detail << " (" << seconds
      << " s)";
    std::cout << s.str() << std::endl;
    lines.emplace_back(id, s.str());
    report[std::to_string(id)] = {{"name", name}, {"pass", v.pass}, {"detail", v.detail}, {"seconds", seconds}};
    if (!v.pass) ++failures;
  }
};

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

class Cli {
 public:
  Cli(fs::path exe, fs::path logs) : exe_(std::move(exe)), logs_(std::move(logs)) { fs::create_directories(logs_); }

  // Runs one CLI command; returns the exit status.
  int run(const std::string& args, const std::string& log_name) const {
    const fs::path log = logs_ / (log_name + ".log");
    const std::string cmd = "\"" + exe_.string() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : 128;
  }
  void must(const std::string& args, const std::string& log_name) const {
    const int rc = run(args, log_name);
    if (rc != 0) {
      throw std::runtime_error("command failed (exit " + std::to_string(rc) + "): mulsmo " + args + "\n" +
                               read_text(logs_ / (log_name + ".log")));
    }
  }

 private:
  fs::path exe_, logs_;
};

// ---------------------------------------------------------------- criterion 1

Verdict zero_init_identity(const PipelineConfig& cfg) {
  DenoiserConfig dc = cfg.denoiser;
  dc.n_z = cfg.vae.n_z;
  dc.d_z = cfg.vae.d_z;
  const Denoiser den(dc, 1);
  double worst = 0.0;
  int checked = 0;
  for (Variant v : {Variant::a, Variant::b, Variant::c, Variant::d}) {
    StyleNetConfig sc = cfg.style_net;
    sc.variant = v;
    const StyleNet net(sc, den, 2);
    for (int i = 0; i < kIdentityInputs; ++i) {
      Rng rng(1000 * static_cast<std::uint64_t>(v) + static_cast<std::uint64_t>(i));
      const int b = rng.uniform_int(1, 4);
      const Mat z = rng.normal_matrix(b * dc.n_z, dc.d_z);
      std::vector<int> ts;
      CondBatch cond;
      for (int k = 0; k < b; ++k) {
        ts.push_back(rng.uniform_int(1, dc.T));
        cond.texts.push_back(content_templates(rng.uniform_int(0, 3))[0]);
        cond.null.push_back(static_cast<char>(rng.bernoulli(0.2)));
      }
      const Var style = ad::constant(rng.normal_matrix(b, sc.d_f));
      const Mat base = den.forward(ad::constant(z), ts, cond).value();
      const Mat styled = predict_eps(den, &net, ad::constant(z), ts, cond, &style).value();
      worst = std::max(worst, (base - styled).cwiseAbs().maxCoeff());
      ++checked;
    }
  }
  return {worst == 0.0, "max |styled - base| = " + fmt(worst, 17) + " over " + std::to_string(checked) +
                            " inputs (4 variants x " + std::to_string(kIdentityInputs) + ")"};
}

// ---------------------------------------------------------------- criterion 5

Verdict infonce_checks() {
  double worst_uniform = 0.0;
  for (int n : {2, 8, 32}) {
    const Mat same = Mat::Ones(n, 5);
    const double l = infonce_loss(ad::constant(same), ad::constant(same), 0.07).scalar();
    worst_uniform = std::max(worst_uniform, std::abs(l - std::log(double(n))));
  }
  double worst_oracle = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int n = rng.uniform_int(2, 16);
    const Mat a = rng.normal_matrix(n, 6);
    const Mat b = rng.normal_matrix(n, 6);
    const double temp = 0.05 + rng.uniform();
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      double denom = 0.0, pos = 0.0;
      for (int j = 0; j < n; ++j) {
        const double l = a.row(i).normalized().dot(b.row(j).normalized()) / temp;
        denom += std::exp(l);
        if (i == j) pos = l;
      }
      oracle += std::log(denom) - pos;
    }
    oracle /= n;
    const double got = infonce_loss(ad::constant(a), ad::constant(b), temp).scalar();
    worst_oracle = std::max(worst_oracle, std::abs(got - oracle));
  }
  return {worst_uniform <= kInfoNceTol && worst_oracle <= kInfoNceTol,
          "|loss - ln N| max " + fmt(worst_uniform, 12) + ", |loss - softmax CE| max " + fmt(worst_oracle, 12) +
              " over 20 random batches (tol 1e-6)"};
}

// ---------------------------------------------------------------- criterion 8 (self-contained part)

Verdict metric_self_tests(std::string& extra) {
  // Exact-moment sets: sample mean and unbiased covariance equal the target exactly.
  auto exact = [](Eigen::Index n, Eigen::Index d, double s, std::uint64_t seed) {
    Rng rng(seed);
    Mat x = rng.normal_matrix(n, d);
    x.rowwise() -= x.colwise().mean();
    const Eigen::LLT<Mat> llt(Mat(x.transpose() * x / double(n - 1)));
    return Mat(Mat(llt.matrixL().solve(x.transpose())).transpose() * s);
  };
  const int d = 16;
  const Mat a = exact(400, d, 1.0, 1);
  const Mat b = exact(400, d, 2.0, 2);
  const double same = fid(a, a);
  const double scaled = fid(a, b);

  const Skeleton skel = Skeleton::mini8();
  auto feet = [&](double speed) {
    JointTrajectory t;
    t.joints = 8;
    t.positions = Mat::Zero(30, 24);
    for (Eigen::Index f = 0; f < 30; ++f) {
      for (int j = 0; j < 8; ++j) {
        Eigen::Vector3d p = skel.rest_offsets.row(j).transpose();
        if (j == 3 || j == 4) p.y() = 0.0;
        p.x() += speed * kDt * double(f);
        t.set(f, j, p);
      }
    }
    return t;
  };
  const double fs_static = foot_skate_ratio(feet(0.0), skel);
  const double fs_slide = foot_skate_ratio(feet(1.0), skel);

  Rng rng(3);
  std::vector<int> groups(256);
  for (int i = 0; i < 256; ++i) groups[static_cast<std::size_t>(i)] = i;
  const auto r = r_precision(rng.normal_matrix(256, 8), rng.normal_matrix(256, 8), groups, 32, rng);
  const bool mono = r[0] <= r[1] && r[1] <= r[2];
  extra = "fid(A,A)=" + fmt(same, 9) + ", fid(N(0,I),N(0,4I)) d=16: " + fmt(scaled, 4) + "; foot skate static " +
          fmt(fs_static, 3) + ", sliding " + fmt(fs_slide, 3);
  return {std::abs(same) <= 1e-6 && std::abs(scaled - d) <= kFidRel * d && fs_static == 0.0 && fs_slide == 1.0 && mono,
          extra};
}

// ---------------------------------------------------------------- pipeline helpers

struct Mini {
  fs::path root;
  PipelineConfig cfg = PipelineConfig::mini();
  Workdir dir() const { return Workdir(root); }
};

double manifest_seconds(const Workdir& dir, const std::string& command) {
  const fs::path p = dir.manifest(command);
  if (!fs::exists(p)) return 0.0;
  return read_json(p).value("wall_seconds", 0.0);
}

void run_mini_pipeline(const Cli& cli, const Mini& mini, bool reuse) {
  const std::string wd = "--workdir \"" + mini.root.string() + "\"";
  const Workdir dir = mini.dir();
  auto stage = [&](const std::string& args, const std::string& log, const fs::path& product) {
    if (reuse && fs::exists(product)) {
      std::cout << "  reuse  " << log << std::endl;
      return;
    }
    const double t0 = now();
    cli.must(args + " " + wd, log);
    std::cout << "  ran    " << log << " (" << fmt(now() - t0, 1) << " s)" << std::endl;
  };
  stage("synth-data", "synth-data", dir.data() / "manifest.json");
  stage("train-vae", "train-vae", dir.ckpt("vae"));
  stage("train-base", "train-base", dir.ckpt("base"));
  stage("train-classifier", "train-classifier", dir.ckpt("retrieval"));
  stage("ablate --out \"" + (mini.root / "ablation").string() + "\"", "ablate", mini.root / "ablation" / "ablation.json");
  stage("train-adaptor --variant b", "train-adaptor", dir.ckpt("adaptor_b"));
  stage("evaluate --variant b --style-source text --out \"" + (mini.root / "eval-text").string() + "\"",
        "evaluate-text", mini.root / "eval-text" / "eval_report.json");
  // Informational: the published guidance weights, classifier guidance included.
  stage("evaluate --variant b --profile generation --out \"" + (mini.root / "eval-full-guidance").string() + "\"",
        "evaluate-full-guidance", mini.root / "eval-full-guidance" / "eval_report.json");
}

// ---------------------------------------------------------------- criterion 2

Verdict inversion_round_trip(const Mini& mini) {
  // Algebra part: exact round trip of q_sample / predict_clean.
  const auto sched = make_schedule(mini.cfg.denoiser.T, "linear", mini.cfg.denoiser.beta_start, mini.cfg.denoiser.beta_end);
  double algebra = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int t = rng.uniform_int(1, sched.T);
    const Mat z0 = rng.normal_matrix(4, 16);
    const Mat eps = rng.normal_matrix(4, 16);
    algebra = std::max(algebra, (predict_clean(q_sample(z0, t, eps, sched), t, eps, sched) - z0).cwiseAbs().maxCoeff());
  }
  // Model part: invert test-set latents with their texts, then denoise on the same grid.
  LoadOptions opt;
  const LoadedModels m = load_models(mini.cfg, mini.dir(), opt);
  const auto test = m.data.split_indices("test");
  const int steps = mini.cfg.transfer.steps;
  const int refine = TransferRequest{}.refine_iters;
  double worst = 0.0;
  for (int s = 0; s < kInversionSeeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(s));
    const std::size_t i = test[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(test.size()) - 1))];
    const Mat z0 = m.vae.encode(m.data.normalized(i));
    const CondBatch cond = CondBatch::repeat(m.data.manifest.entries[i].text, 1);
    const Mat zT = ddim_invert(m.den, z0, steps, cond, refine, mini.cfg.transfer.spacing);
    const Mat back = ddim_denoise(m.den, zT, steps, cond, mini.cfg.transfer.spacing);
    worst = std::max(worst, (back - z0).cwiseAbs().maxCoeff());
  }
  return {algebra <= kRoundTripExact && worst < kInversionLinf,
          "q_sample/predict_clean max err " + fmt(algebra, 12) + "; invert->denoise L_inf max " + fmt(worst, 5) +
              " over " + std::to_string(kInversionSeeds) + " seeds (" + std::to_string(steps) + " steps, " +
              std::to_string(refine) + " refinements, limit 1e-2)"};
}

// ---------------------------------------------------------------- criterion 3

Verdict guidance_checks(const Mini& mini) {
  // Exact identities.
  Rng rng(11);
  const Mat x = rng.normal_matrix(4, 16);
  const Mat uu = rng.normal_matrix(4, 16), cu = rng.normal_matrix(4, 16), cs = rng.normal_matrix(4, 16);
  const bool ident = cfg_combine(x, x, x, 15.0, 1.6) == x && cfg_combine(uu, cu, cs, 1.0, 1.0) == cs &&
                     apply_classifier_guidance(cs, uu, 0.0, 0.0, true, 2) == cs;

  // Gradient of G against central differences on the trained model.
  LoadOptions opt;
  opt.variant = Variant::b;
  opt.evaluators = true;
  const LoadedModels m = load_models(mini.cfg, mini.dir(), opt);
  const ModelBundle mb = m.bundle();
  EvalConfig ec = mini.cfg.eval;
  ec.n_samples = 2;
  GuidanceConfig g = guidance_profile("generation");
  double worst = 0.0;
  for (int trial = 0; trial < kGradTrials; ++trial) {
    Rng r(static_cast<std::uint64_t>(100 + trial));
    ec.seed = static_cast<std::uint64_t>(trial);
    const EvalPlan plan = plan_evaluation(m.data, ec);
    const StyleSignalBatch style = style_signals(plan, m.assets(), ec);
    CondBatch cond;
    cond.texts = plan.texts;
    cond.null.assign(plan.texts.size(), 0);
    const int t = r.uniform_int(20, mini.cfg.denoiser.T);
    const Mat z = r.normal_matrix(static_cast<Eigen::Index>(plan.texts.size()) * m.den.config().n_z, m.den.config().d_z);
    const Mat eps = cfg_eps(mb, ad::constant(z), t, cond, style, g).value();
    const StyleDistance sd = style_distance(mb, z, t, eps, style.ref_features, g, &cond, &style);
    Mat fd(z.rows(), z.cols());
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      Mat zp = z, zm = z;
      zp.data()[k] += kGradStep;
      zm.data()[k] -= kGradStep;
      fd.data()[k] = (style_distance(mb, zp, t, eps, style.ref_features, g, &cond, &style).G.sum() -
                      style_distance(mb, zm, t, eps, style.ref_features, g, &cond, &style).G.sum()) /
                     (2.0 * kGradStep);
    }
    // allclose: |a - b| <= atol + rtol |b|, with atol = rtol * max |b|
    const double atol = kGradRtol * fd.cwiseAbs().maxCoeff();
    const Mat bound = (kGradRtol * fd.cwiseAbs()).array() + atol;
    worst = std::max(worst, ((sd.grad - fd).cwiseAbs().array() / bound.array()).maxCoeff());
  }
  return {ident && worst <= 1.0,
          std::string("identities ") + (ident ? "exact" : "VIOLATED") + "; grad G vs central differences: max |a-b|/(atol+rtol|b|) " +
              fmt(worst, 4) + " over " + std::to_string(kGradTrials) + " random (z_t, t) (rtol 1e-3, must be <= 1)"};
}

// ---------------------------------------------------------------- criterion 4

Verdict descent_property(const Mini& mini) {
  LoadOptions opt;
  opt.variant = Variant::b;
  opt.evaluators = true;
  const LoadedModels m = load_models(mini.cfg, mini.dir(), opt);
  const ModelBundle mb = m.bundle();
  const auto& sched = m.den.schedule();
  GuidanceConfig guided = mini.cfg.eval.guidance;
  guided.classifier = true;
  guided.tau = -0.2;
  GuidanceConfig plain = guided;
  plain.tau = 0.0;
  plain.full_grad = false;  // only G's value is read from plain
  const auto grid = step_grid(sched.T, guided.steps, guided.spacing);
  EvalConfig ec = mini.cfg.eval;
  ec.n_samples = 4;
  GuidanceConfig literal = guided;
  literal.grad_space = "zt";
  GuidanceConfig truncated = guided;
  truncated.full_grad = false;
  int wins = 0, literal_wins = 0, truncated_wins = 0;
  for (int trial = 0; trial < kDescentTrials; ++trial) {
    Rng r(static_cast<std::uint64_t>(500 + trial));
    ec.seed = static_cast<std::uint64_t>(trial);
    const EvalPlan plan = plan_evaluation(m.data, ec);
    const StyleSignalBatch style = style_signals(plan, m.assets(), ec);
    CondBatch cond;
    cond.texts = plan.texts;
    cond.null.assign(plan.texts.size(), 0);
    const std::size_t k = static_cast<std::size_t>(r.uniform_int(0, static_cast<int>(grid.size()) - 2));
    const int t = grid[k], t_prev = grid[k + 1];
    const Mat z = r.normal_matrix(static_cast<Eigen::Index>(plan.texts.size()) * m.den.config().n_z, m.den.config().d_z);
    auto after_step = [&](const GuidanceConfig& gc) {
      const Mat zp = ddim_step(z, t, t_prev, guided_eps(mb, z, t, cond, style, gc), sched);
      const Mat e = cfg_eps(mb, ad::constant(zp), t_prev, cond, style, plain).value();
      return style_distance(mb, zp, t_prev, e, style.ref_features, plain).G.mean();
    };
    const double g_plain = after_step(plain);
    if (after_step(guided) < g_plain) ++wins;
    if (after_step(literal) < g_plain) ++literal_wins;
    if (after_step(truncated) < g_plain) ++truncated_wins;
  }
  const double rate = double(wins) / kDescentTrials;
  return {rate >= kDescentRate, "guided step lowered mean G in " + std::to_string(wins) + "/" +
                                    std::to_string(kDescentTrials) + " trials (need >= 70%); info: unscaled dG/dz_t " +
                                    std::to_string(literal_wins) + "/" + std::to_string(kDescentTrials) +
                                    ", eps held constant in the gradient " + std::to_string(truncated_wins) + "/" +
                                    std::to_string(kDescentTrials)};
}

// ---------------------------------------------------------------- criteria 6, 7, 8 (runs), 9

json report_of(const fs::path& p) { return read_json(p); }

Verdict ablation_checks(const Mini& mini, std::string& info) {
  const json abl = read_json(mini.root / "ablation" / "ablation.json");
  std::map<std::string, json> rows;
  for (const auto& r : abl.at("rows")) rows[r.at("variant").get<std::string>()] = r;
  const json zero = abl.at("reference").at(0);
  const json base = abl.at("reference").at(1);
  const auto& b = rows.at("b");
  const auto& a = rows.at("a");

  // Intended styles cycle evenly over the eligible labels, so any style-blind
  // generator scores 100/K in expectation; the band is a binomial 3-sigma interval.
  const json plan_cfg = abl.at("eval");
  const int n = plan_cfg.at("n_samples").get<int>();
  const MotionDataset data = load_dataset(mini.dir().data());
  int k = 0;
  for (const auto& s : data.manifest.style_taxonomy) k += (plan_cfg.at("exclude_act").get<bool>() && s.group == "ACT") ? 0 : 1;
  const double chance = 100.0 / k;
  const double band = kChanceSigmas * 100.0 * std::sqrt((1.0 / k) * (1.0 - 1.0 / k) / n);

  const double b_sra = b.at("sra").get<double>(), a_sra = a.at("sra").get<double>();
  const double b_fid = b.at("fid").get<double>(), a_fid = a.at("fid").get<double>();
  const double z_sra = zero.at("sra").get<double>();
  const double drop = base.at("r_precision_top3").get<double>() - b.at("r_precision_top3").get<double>();

  const bool i_ok = b_sra >= kStyledSra && std::abs(z_sra - chance) <= band;
  const bool ii_ok = b_sra >= a_sra && b_fid <= a_fid;
  const bool iii_ok = drop <= kRetrievalDrop;

  const Workdir dir = mini.dir();
  double total = 0.0;
  for (const char* c : {"synth-data", "train-vae", "train-base", "train-classifier", "ablate"}) total += manifest_seconds(dir, c);
  const bool time_ok = total <= kAblationBudgetSeconds;

  std::ostringstream rows_txt;
  for (const char* v : {"a", "b", "c", "d"}) {
    rows_txt << v << ": SRA " << fmt(rows.at(v).at("sra").get<double>(), 1) << " FID " << fmt(rows.at(v).at("fid").get<double>(), 1)
             << " skate " << fmt(rows.at(v).at("foot_skate_ratio").get<double>(), 3) << "; ";
  }
  info = rows_txt.str() + "zero-init SRA " + fmt(z_sra, 1) + ", base top-3 " + fmt(base.at("r_precision_top3").get<double>(), 1);
  return {i_ok && ii_ok && iii_ok && time_ok,
          std::string("(i) ") + (i_ok ? "ok" : "NO") + ": b SRA " + fmt(b_sra, 1) + " >= 70, zero-init SRA " + fmt(z_sra, 1) +
              " vs chance " + fmt(chance, 1) + " +/- " + fmt(band, 1) + "; (ii) " + (ii_ok ? "ok" : "NO") + ": b SRA " +
              fmt(b_sra, 1) + " vs a " + fmt(a_sra, 1) + ", b FID " + fmt(b_fid, 1) + " vs a " + fmt(a_fid, 1) + "; (iii) " +
              (iii_ok ? "ok" : "NO") + ": top-3 drop " + fmt(drop, 1) + " <= 15; pipeline " + fmt(total / 60.0, 1) +
              " min <= 30"};
}

Verdict multimodal_checks(const Mini& mini) {
  const json text = report_of(mini.root / "eval-text" / "eval_report.json");
  const json motion = report_of(mini.root / "ablation" / "b" / "eval_report.json");
  const double t = text.at("sra").get<double>(), mo = motion.at("sra").get<double>();
  return {mo - t <= kTextGap, "text-conditioned SRA " + fmt(t, 1) + " vs motion-conditioned " + fmt(mo, 1) +
                                  " (gap " + fmt(mo - t, 1) + " <= 15)"};
}

Verdict rprecision_runs(const Mini& mini, int& runs) {
  runs = 0;
  bool ok = true;
  for (const auto& entry : fs::recursive_directory_iterator(mini.root)) {
    if (entry.path().filename() != "eval_report.json") continue;
    const json r = read_json(entry.path()).at("r_precision");
    const double t1 = r.at("top1").get<double>(), t2 = r.at("top2").get<double>(), t3 = r.at("top3").get<double>();
    ok = ok && t1 <= t2 && t2 <= t3;
    ++runs;
  }
  return {ok && runs > 0, std::to_string(runs) + " evaluation runs"};
}

Verdict freeze_checks(const Mini& mini) {
  const Workdir dir = mini.dir();
  const std::string base_file = hex64(file_hash(dir.ckpt("base")));
  const std::string vae_file = hex64(file_hash(dir.ckpt("vae")));
  int runs = 0;
  bool ok = true;
  for (const char* v : {"a", "b", "c", "d"}) {
    const fs::path p = dir.manifest(std::string("train-style-") + v);
    if (!fs::exists(p)) continue;
    const json m = read_json(p);
    const json f = m.at("notes").at("freeze");
    ok = ok && f.at("base_before") == f.at("base_after") && f.at("vae_before") == f.at("vae_after");
    // Checkpoint files read by the run are the ones still on disk.
    for (const auto& in : m.at("inputs")) {
      const std::string path = in.at("path").get<std::string>();
      if (path == dir.ckpt("base").string()) ok = ok && in.at("hash").get<std::string>() == base_file;
      if (path == dir.ckpt("vae").string()) ok = ok && in.at("hash").get<std::string>() == vae_file;
    }
    ++runs;
  }
  return {ok && runs == 4, "parameter hashes identical before/after in " + std::to_string(runs) +
                               " style-training runs; base/vae checkpoint files unchanged"};
}

// ---------------------------------------------------------------- criterion 10

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root);
    if (*rel.begin() == "manifests") continue;  // timing is confined to manifests
    files[rel.string()] = hex64(file_hash(e.path()));
  }
  return files;
}

Verdict determinism(const Cli& cli, const fs::path& root, const fs::path& tiny_config) {
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth-data", "synth-data"},
      {"train-vae", "train-vae"},
      {"train-base", "train-base"},
      {"train-classifier", "train-classifier"},
      {"train-style --variant b", "train-style"},
      {"train-adaptor --variant b", "train-adaptor"},
      {"generate --content \"a person walks forward\" --style-text flapping --count 2", "generate-text"},
      {"generate --content \"a person runs\" --style-motion @MOTION@ --out @ROOT@/outputs/generate-motion", "generate-motion"},
      {"transfer --content-motion @MOTION@ --style-text old", "transfer"},
      {"evaluate --variant b", "evaluate"},
      {"ablate --no-retrain", "ablate"},
      {"report-timing --repeats 2", "report-timing"},
  };
  std::vector<std::map<std::string, std::string>> snaps;
  for (const char* run : {"run1", "run2"}) {
    const fs::path wd = root / run;
    fs::remove_all(wd);
    for (const auto& [args, name] : commands) {
      std::string a = args;
      if (a.find("@MOTION@") != std::string::npos) {
        const json man = read_json(wd / "data" / "manifest.json");
        const std::string first = (wd / "data" / man.at("entries").at(0).at("motion").get<std::string>()).string();
        a.replace(a.find("@MOTION@"), 8, "\"" + first + "\"");
      }
      if (a.find("@ROOT@") != std::string::npos) a.replace(a.find("@ROOT@"), 6, wd.string());
      cli.must(a + " --seed 7 --workdir \"" + wd.string() + "\" --config \"" + tiny_config.string() + "\"",
               std::string(run) + "-" + name);
    }
    snaps.push_back(snapshot(wd));
  }
  int differing = 0;
  std::string first_diff;
  for (const auto& [file, hash] : snaps[0]) {
    const auto it = snaps[1].find(file);
    if (it == snaps[1].end() || it->second != hash) {
      if (differing++ == 0) first_diff = file;
    }
  }
  if (snaps[0].size() != snaps[1].size() && differing == 0) differing = 1, first_diff = "(file sets differ)";
  return {differing == 0, std::to_string(commands.size()) + " commands x 2 runs, " + std::to_string(snaps[0].size()) +
                              " artifacts compared byte-for-byte (manifests excluded)" +
                              (differing ? ", " + std::to_string(differing) + " differ, first: " + first_diff : "")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mulsmo acceptance suite"};
  std::string cli_path, workdir = "acceptance-work", tiny;
  bool reuse = false, strict = false;
  std::vector<int> only;
  app.add_option("--cli", cli_path, "Path to the mulsmo executable")->required();
  app.add_option("--workdir", workdir, "Scratch directory")->capture_default_str();
  app.add_option("--tiny-config", tiny, "Tiny pipeline config for the determinism check (default: <source>/configs/tiny.json)");
  app.add_flag("--reuse", reuse, "Reuse mini pipeline artifacts already in the workdir");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  if (tiny.empty()) tiny = (fs::path(MULSMO_SOURCE_DIR) / "configs" / "tiny.json").string();

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  Suite suite;
  const fs::path root = fs::absolute(workdir);
  fs::create_directories(root);
  const Cli cli(fs::absolute(cli_path), root / "cli-logs");
  Mini mini;
  mini.root = root / "mini";

  auto timed = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const double t0 = now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    suite.record(id, name, v, now() - t0);
  };

  try {
    timed(1, "zero-init identity", [&] {
      const double t0 = now();
      Verdict v = zero_init_identity(mini.cfg);
      const double secs = now() - t0;
      v.pass = v.pass && secs < kIdentityBudgetSeconds;
      return v;
    });
    timed(5, "InfoNCE oracles", infonce_checks);

    const bool need_pipeline = wanted(2) || wanted(3) || wanted(4) || wanted(6) || wanted(7) || wanted(8) || wanted(9);
    if (need_pipeline) {
      std::cout << "mini pipeline in " << mini.root << std::endl;
      run_mini_pipeline(cli, mini, reuse);
    }
    timed(2, "diffusion algebra and DDIM inversion", [&] { return inversion_round_trip(mini); });
    timed(3, "guidance algebra and gradient", [&] { return guidance_checks(mini); });
    timed(4, "classifier-guidance descent", [&] { return descent_property(mini); });
    std::string ablation_info;
    timed(6, "mini ablation", [&] { return ablation_checks(mini, ablation_info); });
    if (!ablation_info.empty()) std::cout << "      ablation rows: " << ablation_info << std::endl;
    if (wanted(6) && fs::exists(mini.root / "eval-full-guidance" / "eval_report.json")) {
      const json fg = read_json(mini.root / "eval-full-guidance" / "eval_report.json");
      std::cout << "      info: variant b with the published guidance weights (classifier guidance on): SRA "
                << fmt(fg.at("sra").get<double>(), 1) << ", FID " << fmt(fg.at("fid").get<double>(), 1) << ", CRA "
                << fmt(fg.at("cra").get<double>(), 1) << std::endl;
    }
    timed(7, "multimodal control", [&] { return multimodal_checks(mini); });
    timed(8, "metric self-tests", [&] {
      std::string extra;
      Verdict v = metric_self_tests(extra);
      int runs = 0;
      const Verdict r = rprecision_runs(mini, runs);
      return Verdict{v.pass && r.pass, v.detail + "; r-precision top1<=top2<=top3 in " + r.detail};
    });
    timed(9, "freeze contract", [&] { return freeze_checks(mini); });
    timed(10, "CLI determinism", [&] { return determinism(cli, root / "determinism", tiny); });
  } catch (const std::exception& e) {
    std::cerr << "acceptance harness error: " << e.what() << "\n";
    return 1;
  }

  write_json(root / "acceptance_report.json", suite.report);
  std::cout << "summary: " << (suite.lines.size() - static_cast<std::size_t>(suite.failures)) << "/" << suite.lines.size()
            << " criteria pass" << std::endl;
  return strict && suite.failures > 0 ? 2 : 0;
}
