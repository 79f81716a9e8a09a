#include "mulsmo/pipeline.hpp"

#include "mulsmo/checkpoint.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

namespace mulsmo {

namespace fs = std::filesystem;
using nlohmann::json;

PipelineConfig PipelineConfig::mini() {
  PipelineConfig c;
  c.generation = guidance_profile("generation");
  c.transfer = guidance_profile("transfer");
  c.eval.guidance = guidance_profile("mini");
  c.set_seed(0);
  return c;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  vae_train.seed = s + 1;
  base_train.seed = s + 2;
  classifier_train.seed = s + 3;
  retrieval.seed = s + 4;
  style_train.seed = s + 5;
  adaptor_train.seed = s + 6;
  eval.seed = s + 7;
}

json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"data", data.to_json()},
          {"vae", vae.to_json()},
          {"vae_train", vae_train.to_json()},
          {"denoiser", denoiser.to_json()},
          {"base_train", base_train.to_json()},
          {"classifier", classifier.to_json()},
          {"classifier_train", classifier_train.to_json()},
          {"retrieval", retrieval.to_json()},
          {"style_encoder", style_encoder.to_json()},
          {"style_net", style_net.to_json()},
          {"style_train", style_train.to_json()},
          {"adaptor", adaptor.to_json()},
          {"adaptor_train", adaptor_train.to_json()},
          {"eval", eval.to_json()},
          {"generation", generation.to_json()},
          {"transfer", transfer.to_json()}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  PipelineConfig base = mini();
  if (j.contains("seed")) base.set_seed(j.at("seed").get<std::uint64_t>());
  json doc = base.to_json();
  for (const auto& [key, value] : j.items()) {
    if (key == "seed" || key == "description") continue;
    if (!doc.contains(key)) throw ConfigError("config: unknown section '" + key + "'");
    if (!value.is_object()) throw ConfigError("config: section '" + key + "' must be an object");
    doc[key].merge_patch(value);
  }
  PipelineConfig c;
  c.seed = doc.at("seed").get<std::uint64_t>();
  c.data = SynthConfig::from_json(doc.at("data"));
  c.vae = VaeConfig::from_json(doc.at("vae"));
  c.vae_train = VaeTrainConfig::from_json(doc.at("vae_train"));
  c.denoiser = DenoiserConfig::from_json(doc.at("denoiser"));
  c.base_train = BaseTrainConfig::from_json(doc.at("base_train"));
  c.classifier = ClassifierConfig::from_json(doc.at("classifier"));
  c.classifier_train = ClassifierTrainConfig::from_json(doc.at("classifier_train"));
  c.retrieval = RetrievalConfig::from_json(doc.at("retrieval"));
  c.style_encoder = StyleEncoderConfig::from_json(doc.at("style_encoder"));
  c.style_net = StyleNetConfig::from_json(doc.at("style_net"));
  c.style_train = TrainConfig::from_json(doc.at("style_train"));
  c.adaptor = AdaptorConfig::from_json(doc.at("adaptor"));
  c.adaptor_train = AdaptorTrainConfig::from_json(doc.at("adaptor_train"));
  c.eval = EvalConfig::from_json(doc.at("eval"));
  c.generation = GuidanceConfig::from_json(doc.at("generation"));
  c.transfer = GuidanceConfig::from_json(doc.at("transfer"));
  return c;
}

GuidanceConfig guidance_profile(const std::string& name) {
  GuidanceConfig g;
  if (name == "generation") return g;
  if (name == "transfer") {
    g.steps = 30;
    g.w_s = 6.5;
    g.tau = -0.4;
    return g;
  }
  if (name == "mini") {
    // Classifier-free only, with a content weight the mini-scale models tolerate.
    g.w_c = 2.5;
    g.classifier = false;
    return g;
  }
  throw ConfigError("unknown guidance profile '" + name + "' (expected generation, transfer or mini)");
}

Workdir::Workdir(fs::path root) : root_(std::move(root)) {}

RunRecord::RunRecord(std::string command, const PipelineConfig& cfg) : command_(std::move(command)) {
  doc_ = {{"command", command_}, {"config", cfg.to_json()}, {"inputs", json::array()}, {"outputs", json::array()},
          {"notes", json::object()}};
}

void RunRecord::input(const fs::path& p) { doc_["inputs"].push_back({{"path", p.string()}, {"hash", hex64(file_hash(p))}}); }

void RunRecord::output(const fs::path& p) {
  doc_["outputs"].push_back({{"path", p.string()}, {"hash", hex64(file_hash(p))}});
}

void RunRecord::note(const std::string& key, json value) { doc_["notes"][key] = std::move(value); }

void RunRecord::write(const Workdir& dir, double seconds) const {
  json d = doc_;
  d["wall_seconds"] = seconds;
  fs::create_directories(dir.manifest(command_).parent_path());
  write_json(dir.manifest(command_), d);
}

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

EpochLogger file_logger(const fs::path& path) {
  fs::create_directories(path.parent_path());
  auto out = std::make_shared<std::ofstream>(path, std::ios::trunc);
  if (!*out) throw ConfigError("cannot write log " + path.string());
  return [out](const json& j) { *out << j.dump() << "\n" << std::flush; };
}

MotionDataset require_data(const Workdir& dir) { return load_dataset(dir.data()); }

Vae require_vae(const Workdir& dir) {
  if (!fs::exists(dir.ckpt("vae"))) throw MissingDependency("VAE checkpoint missing: run `mulsmo train-vae` first");
  Vae v = load_vae(dir.ckpt("vae"));
  v.params().set_frozen(true);
  return v;
}

Denoiser require_base(const Workdir& dir) {
  if (!fs::exists(dir.ckpt("base"))) throw MissingDependency("base denoiser checkpoint missing: run `mulsmo train-base` first");
  Denoiser d = load_denoiser(dir.ckpt("base"));
  d.params().set_frozen(true);
  return d;
}

std::string stylenet_name(Variant v) { return "stylenet_" + to_string(v); }
std::string adaptor_name(Variant v) { return "adaptor_" + to_string(v); }

std::vector<std::string> style_labels(const MotionDataset& data) {
  std::vector<std::string> out;
  for (const auto& s : data.manifest.style_taxonomy) out.push_back(s.name);
  return out;
}

StyleEncoderConfig encoder_config(const PipelineConfig& cfg, const MotionDataset& data) {
  StyleEncoderConfig e = cfg.style_encoder;
  e.feature_dim = data.manifest.feature_dim();
  e.max_frames = data.manifest.frames;
  e.d_f = cfg.style_net.d_f;
  return e;
}

}  // namespace

void run_synth_data(const PipelineConfig& cfg, const Workdir& dir) {
  Stopwatch sw;
  RunRecord rec("synth-data", cfg);
  const MotionDataset ds = synth_dataset(cfg.data);
  save_dataset(dir.data(), ds);
  rec.output(dir.data() / "manifest.json");
  rec.note("samples", ds.motions.size());
  rec.write(dir, sw.seconds());
}

VaeTrainResult run_train_vae(const PipelineConfig& cfg, const Workdir& dir) {
  Stopwatch sw;
  RunRecord rec("train-vae", cfg);
  const MotionDataset data = require_data(dir);
  rec.input(dir.data() / "manifest.json");
  VaeConfig vc = cfg.vae;
  vc.feature_dim = data.manifest.feature_dim();
  vc.max_frames = data.manifest.frames;
  Vae vae(vc, cfg.seed * 7919 + 11);
  const auto res = train_vae(vae, data, cfg.vae_train, file_logger(dir.log("train-vae")));
  save_vae(dir.ckpt("vae"), vae, {{"final_recon", res.final_recon}, {"seed", cfg.vae_train.seed}});
  rec.output(dir.ckpt("vae"));
  rec.note("final_recon", res.final_recon);
  rec.write(dir, sw.seconds());
  return res;
}

std::vector<double> run_train_base(const PipelineConfig& cfg, const Workdir& dir) {
  Stopwatch sw;
  RunRecord rec("train-base", cfg);
  const MotionDataset data = require_data(dir);
  const Vae vae = require_vae(dir);
  rec.input(dir.data() / "manifest.json");
  rec.input(dir.ckpt("vae"));
  DenoiserConfig dc = cfg.denoiser;
  dc.n_z = vae.config().n_z;
  dc.d_z = vae.config().d_z;
  Denoiser den(dc, cfg.seed * 7919 + 13);
  const LatentSet latents = encode_latents(vae, data, "train");
  const auto curve = train_base_denoiser(den, latents, cfg.base_train, file_logger(dir.log("train-base")));
  save_denoiser(dir.ckpt("base"), den, {{"final_loss", curve.empty() ? 0.0 : curve.back()}, {"vae_hash", hex64(vae.params().hash())}});
  rec.output(dir.ckpt("base"));
  rec.write(dir, sw.seconds());
  return curve;
}

json run_train_classifier(const PipelineConfig& cfg, const Workdir& dir) {
  Stopwatch sw;
  RunRecord rec("train-classifier", cfg);
  const MotionDataset data = require_data(dir);
  rec.input(dir.data() / "manifest.json");
  json summary;
  for (const std::string target : {"style", "content"}) {
    ClassifierConfig cc = cfg.classifier;
    cc.feature_dim = data.manifest.feature_dim();
    cc.target = target;
    cc.n_classes = static_cast<int>(target == "style" ? data.manifest.style_taxonomy.size()
                                                      : data.manifest.content_taxonomy.size());
    MotionClassifier clf(cc, data.manifest.stats, cfg.seed * 7919 + (target == "style" ? 17 : 19));
    ClassifierTrainConfig tc = cfg.classifier_train;
    if (target == "content") tc.seed += 100;
    const auto res = train_classifier(clf, data, tc, file_logger(dir.log("train-" + target + "-classifier")));
    const std::string name = target == "style" ? "styleclf" : "contentclf";
    save_classifier(dir.ckpt(name), clf, {{"train_accuracy", res.train_accuracy}, {"test_accuracy", res.test_accuracy}});
    rec.output(dir.ckpt(name));
    summary[target] = {{"train_accuracy", res.train_accuracy}, {"test_accuracy", res.test_accuracy}};
  }
  RetrievalModel rm(cfg.retrieval, data.manifest.feature_dim(), data.manifest.stats, cfg.seed * 7919 + 23);
  const auto curve = train_retrieval_model(rm, data, file_logger(dir.log("train-retrieval")));
  save_retrieval_model(dir.ckpt("retrieval"), rm, {{"final_loss", curve.empty() ? 0.0 : curve.back()}});
  rec.output(dir.ckpt("retrieval"));
  summary["retrieval_final_loss"] = curve.empty() ? 0.0 : curve.back();
  rec.note("summary", summary);
  rec.write(dir, sw.seconds());
  return summary;
}

StyleTrainResult run_train_style(const PipelineConfig& cfg, const Workdir& dir, Variant v) {
  Stopwatch sw;
  const std::string command = "train-style-" + to_string(v);
  RunRecord rec(command, cfg);
  const MotionDataset data = require_data(dir);
  const Vae vae = require_vae(dir);
  const Denoiser den = require_base(dir);
  rec.input(dir.data() / "manifest.json");
  rec.input(dir.ckpt("vae"));
  rec.input(dir.ckpt("base"));
  const auto vae_before = vae.params().hash();
  StyleNetConfig sc = cfg.style_net;
  sc.variant = v;
  StyleNet net(sc, den, cfg.seed * 7919 + 29);
  StyleMotionEncoder enc(encoder_config(cfg, data), cfg.seed * 7919 + 31);
  const LatentSet latents = encode_latents(vae, data, "train");
  TrainConfig tc = cfg.style_train;
  tc.variant = v;
  const auto res = train_style_network(den, net, enc, latents, latents, tc, file_logger(dir.log(command)));
  const auto vae_after = vae.params().hash();
  if (vae_after != vae_before) throw NumericError("train-style: VAE parameters changed during style training");
  const json hashes = {{"base_before", hex64(res.base_hash_before)}, {"base_after", hex64(res.base_hash_after)},
                       {"vae_before", hex64(vae_before)}, {"vae_after", hex64(vae_after)}};
  save_style_network(dir.ckpt(stylenet_name(v)), net, enc, {{"freeze", hashes}});
  rec.output(dir.ckpt(stylenet_name(v)));
  rec.note("freeze", hashes);
  rec.write(dir, sw.seconds());
  return res;
}

AdaptorTrainResult run_train_adaptor(const PipelineConfig& cfg, const Workdir& dir, Variant v) {
  Stopwatch sw;
  RunRecord rec("train-adaptor", cfg);
  const MotionDataset data = require_data(dir);
  const Denoiser den = require_base(dir);
  if (!fs::exists(dir.ckpt(stylenet_name(v)))) {
    throw MissingDependency("style network for variant " + to_string(v) + " missing: run `mulsmo train-style --variant " +
                            to_string(v) + "` first");
  }
  const StyleNetBundle sn = load_style_network(dir.ckpt(stylenet_name(v)), den, &v);
  rec.input(dir.ckpt(stylenet_name(v)));
  const auto labels = style_labels(data);
  if (!fs::exists(dir.embeddings())) {
    write_embeddings(dir.embeddings(), deterministic_embeddings(labels, cfg.adaptor.d_e, cfg.seed + 1000, true));
  }
  const auto emb = read_embeddings(dir.embeddings());
  rec.input(dir.embeddings());
  std::vector<RowVecD> label_emb;
  std::vector<std::vector<RowVecD>> style_emb;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::vector<RowVecD> motions;
    for (auto i : data.split_indices("train")) {
      if (data.manifest.entries[i].style == static_cast<int>(k)) motions.push_back(sn.encoder.encode(data.normalized(i)));
    }
    if (motions.empty()) continue;
    label_emb.push_back(find_embedding(emb, labels[k], "text").values);
    style_emb.push_back(std::move(motions));
  }
  AdaptorConfig ac = cfg.adaptor;
  ac.d_f = sn.encoder.config().d_f;
  Adaptor adaptor(ac, cfg.seed * 7919 + 37);
  const auto res = train_adaptor(adaptor, label_emb, style_emb, cfg.adaptor_train, file_logger(dir.log("train-adaptor")));
  save_adaptor(dir.ckpt(adaptor_name(v)), adaptor, {{"top1", res.top1}, {"variant", to_string(v)}});
  rec.output(dir.ckpt(adaptor_name(v)));
  rec.note("top1", res.top1);
  rec.write(dir, sw.seconds());
  return res;
}

ModelBundle LoadedModels::bundle() const {
  ModelBundle b;
  b.vae = &vae;
  b.den = &den;
  b.net = style ? &style->net : nullptr;
  b.extractor = style_clf ? &*style_clf : nullptr;
  b.stats = &data.manifest.stats;
  b.frames = data.manifest.frames;
  return b;
}

EvalAssets LoadedModels::assets() const {
  EvalAssets a;
  a.data = &data;
  a.style_clf = style_clf ? &*style_clf : nullptr;
  a.content_clf = content_clf ? &*content_clf : nullptr;
  a.retrieval = retrieval ? &*retrieval : nullptr;
  a.encoder = style ? &style->encoder : nullptr;
  a.adaptor = adaptor ? &*adaptor : nullptr;
  a.embeddings = embeddings.empty() ? nullptr : &embeddings;
  return a;
}

LoadedModels load_models(const PipelineConfig& cfg, const Workdir& dir, const LoadOptions& opt) {
  LoadedModels m{require_data(dir), require_vae(dir), require_base(dir), {}, {}, {}, {}, {}, {}};
  if (opt.variant) {
    if (opt.zero_init) {
      StyleNetConfig sc = cfg.style_net;
      sc.variant = *opt.variant;
      m.style.emplace(StyleNetBundle{StyleNet(sc, m.den, cfg.seed * 7919 + 29),
                                     StyleMotionEncoder(encoder_config(cfg, m.data), cfg.seed * 7919 + 31)});
    } else {
      const auto path = dir.ckpt(stylenet_name(*opt.variant));
      if (!fs::exists(path)) {
        throw MissingDependency("style network for variant " + to_string(*opt.variant) +
                                " missing: run `mulsmo train-style --variant " + to_string(*opt.variant) + "` first");
      }
      m.style.emplace(load_style_network(path, m.den, &*opt.variant));
    }
    m.style->net.params().set_frozen(true);
    m.style->encoder.params().set_frozen(true);
  }
  if (opt.evaluators) {
    for (const char* name : {"styleclf", "contentclf", "retrieval"}) {
      if (!fs::exists(dir.ckpt(name))) throw MissingDependency(std::string(name) + " checkpoint missing: run `mulsmo train-classifier` first");
    }
    m.style_clf.emplace(load_classifier(dir.ckpt("styleclf")));
    m.content_clf.emplace(load_classifier(dir.ckpt("contentclf")));
    m.retrieval.emplace(load_retrieval_model(dir.ckpt("retrieval")));
    m.style_clf->params().set_frozen(true);
    m.content_clf->params().set_frozen(true);
  }
  if (opt.adaptor) {
    const Variant v = opt.variant.value_or(Variant::b);
    if (!fs::exists(dir.ckpt(adaptor_name(v))) || !fs::exists(dir.embeddings())) {
      throw MissingDependency("adaptor for variant " + to_string(v) + " missing: run `mulsmo train-adaptor --variant " +
                              to_string(v) + "` first");
    }
    m.adaptor.emplace(load_adaptor(dir.ckpt(adaptor_name(v))));
    m.adaptor->params().set_frozen(true);
    m.embeddings = read_embeddings(dir.embeddings());
  }
  return m;
}

json keypoints_json(const Mat& motion_raw, const Skeleton& skel) {
  const JointTrajectory traj = recover_joints(MotionSequence{motion_raw}, skel);
  json frames = json::array();
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    json f = json::array();
    for (int j = 0; j < traj.joints; ++j) {
      const Eigen::Vector3d p = traj.at(t, j);
      f.push_back({p.x(), p.y(), p.z()});
    }
    frames.push_back(std::move(f));
  }
  return {{"skeleton", skel.name}, {"fps", kFps}, {"joints", skel.joints}, {"parents", skel.parents}, {"frames", frames}};
}

std::string trajectory_svg(const Mat& motion_raw, const Skeleton& skel) {
  const JointTrajectory traj = recover_joints(MotionSequence{motion_raw}, skel);
  const std::vector<std::pair<int, const char*>> tracks = {
      {0, "#222222"}, {skel.foot_joints[0], "#1f77b4"}, {skel.foot_joints[2], "#d62728"}};
  double lo_x = 1e9, hi_x = -1e9, lo_z = 1e9, hi_z = -1e9;
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    for (const auto& [j, colour] : tracks) {
      const Eigen::Vector3d p = traj.at(t, j);
      lo_x = std::min(lo_x, p.x());
      hi_x = std::max(hi_x, p.x());
      lo_z = std::min(lo_z, p.z());
      hi_z = std::max(hi_z, p.z());
    }
  }
  const double span = std::max({hi_x - lo_x, hi_z - lo_z, 0.5});
  const double size = 400.0, pad = 20.0;
  auto px = [&](double v, double lo) { return pad + (v - lo) / span * (size - 2 * pad); };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& [j, colour] : tracks) {
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index t = 0; t < traj.length(); ++t) {
      const Eigen::Vector3d p = traj.at(t, j);
      s << px(p.x(), lo_x) << "," << px(p.z(), lo_z) << (t + 1 < traj.length() ? " " : "");
    }
    s << "\"/>\n";
  }
  s << "<text x=\"" << pad << "\" y=\"" << size - 5 << "\" font-size=\"10\">top view (x, z): root black, left foot blue, right foot red</text>\n";
  s << "</svg>\n";
  return s.str();
}

namespace {

RowVecD read_embedding_file(const fs::path& p) {
  const json j = read_json(p);
  std::vector<double> v;
  if (j.is_array()) v = j.get<std::vector<double>>();
  else if (j.is_object() && j.contains("values")) v = j.at("values").get<std::vector<double>>();
  else throw ConfigError(p.string() + ": expected a JSON array or an object with \"values\"");
  return Eigen::Map<const RowVecD>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Style signal of a single request repeated count times.
StyleSignalBatch single_style(const LoadedModels& m, const std::optional<fs::path>& motion,
                              const std::optional<std::string>& text, const std::optional<std::string>& image,
                              const std::optional<fs::path>& embedding, std::size_t count) {
  StyleSignalBatch s;
  const auto n = static_cast<Eigen::Index>(count);
  const int sources = int(motion.has_value()) + int(text.has_value()) + int(image.has_value()) + int(embedding.has_value());
  if (sources > 1) throw ConfigError("give at most one of --style-motion, --style-text, --style-image, --style-embedding");
  if (sources == 0) return s;
  if (motion) {
    int joints = 0;
    const MotionSequence seq = load_motion(*motion, &joints);
    if (joints != m.data.manifest.joints || seq.length() != m.data.manifest.frames) {
      throw ConfigError(motion->string() + ": style motion must have " + std::to_string(m.data.manifest.joints) +
                        " joints and " + std::to_string(m.data.manifest.frames) + " frames");
    }
    const RowVecD e = m.style->encoder.encode(normalize(seq, m.data.manifest.stats).frames);
    s.embeddings = e.replicate(n, 1);
    if (m.style_clf) {
      s.ref_features = m.style_clf->feature(seq.frames).replicate(n, 1);
      s.has_ref.assign(count, 1);
    } else {
      s.ref_features = Mat::Zero(n, 1);
      s.has_ref.assign(count, 0);
    }
    return s;
  }
  RowVecD raw;
  if (embedding) raw = read_embedding_file(*embedding);
  else raw = find_embedding(m.embeddings, text ? *text : *image, text ? "text" : "image").values;
  if (raw.size() != m.adaptor->config().d_e) throw ConfigError("style embedding has the wrong dimension");
  const RowVecD e = m.adaptor->forward(ad::constant(raw)).value().row(0);
  s.embeddings = e.replicate(n, 1);
  s.ref_features = Mat::Zero(n, 1);
  s.has_ref.assign(count, 0);
  return s;
}

void write_motion_outputs(const fs::path& stem, const Mat& motion, const Skeleton& skel, int joints, RunRecord& rec) {
  const fs::path mot = fs::path(stem.string() + ".mot");
  save_motion(mot, MotionSequence{motion}, joints);
  write_json(fs::path(stem.string() + ".keypoints.json"), keypoints_json(motion, skel));
  write_text(fs::path(stem.string() + ".svg"), trajectory_svg(motion, skel));
  rec.output(mot);
}

}  // namespace

std::vector<fs::path> run_generate(const PipelineConfig& cfg, const Workdir& dir, const GenerateRequest& req) {
  Stopwatch sw;
  RunRecord rec("generate", cfg);
  if (req.count < 1) throw ConfigError("generate: --count must be >= 1");
  if (req.content.empty()) throw ConfigError("generate: --content is required");
  const bool styled = req.style_motion || req.style_text || req.style_image || req.style_embedding;
  LoadOptions opt;
  if (styled) opt.variant = req.variant;
  opt.adaptor = req.style_text || req.style_image || req.style_embedding;
  opt.evaluators = req.style_motion.has_value() && cfg.generation.classifier && cfg.generation.tau != 0.0;
  const LoadedModels m = load_models(cfg, dir, opt);
  const auto count = static_cast<std::size_t>(req.count);
  const StyleSignalBatch style = single_style(m, req.style_motion, req.style_text, req.style_image, req.style_embedding, count);
  EvalPlan plan;
  plan.texts.assign(count, req.content);
  const auto motions = generate_plan(m.bundle(), plan, style, cfg.generation, cfg.seed);
  fs::create_directories(req.out);
  const Skeleton skel = Skeleton::for_joint_count(m.data.manifest.joints);
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < motions.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    write_motion_outputs(req.out / name, motions[i], skel, m.data.manifest.joints, rec);
    out.push_back(req.out / (std::string(name) + ".mot"));
  }
  rec.note("content", req.content);
  rec.write(dir, sw.seconds());
  return out;
}

fs::path run_transfer(const PipelineConfig& cfg, const Workdir& dir, const TransferRequest& req) {
  Stopwatch sw;
  RunRecord rec("transfer", cfg);
  LoadOptions opt;
  const bool styled = req.style_motion || req.style_text;
  if (styled) opt.variant = req.variant;
  opt.adaptor = req.style_text.has_value();
  opt.evaluators = req.style_motion.has_value() && cfg.transfer.classifier && cfg.transfer.tau != 0.0;
  const LoadedModels m = load_models(cfg, dir, opt);
  int joints = 0;
  const MotionSequence content = load_motion(req.content_motion, &joints);
  if (joints != m.data.manifest.joints || content.length() != m.data.manifest.frames) {
    throw ConfigError(req.content_motion.string() + ": content motion must have " + std::to_string(m.data.manifest.joints) +
                      " joints and " + std::to_string(m.data.manifest.frames) + " frames");
  }
  rec.input(req.content_motion);
  const StyleSignalBatch style = single_style(m, req.style_motion, req.style_text, std::nullopt, std::nullopt, 1);
  CondBatch cond = req.content.empty() ? CondBatch::nulls(1) : CondBatch::repeat(req.content, 1);
  const Mat z0 = m.vae.encode(normalize(content, m.data.manifest.stats).frames);
  const Mat z_T = ddim_invert(m.den, z0, cfg.transfer.steps, cond, req.refine_iters, cfg.transfer.spacing);
  Rng rng(cfg.seed);
  const Mat z = sample_latents(m.bundle(), cond, style, cfg.transfer, rng, &z_T);
  const auto motions = decode_motions(m.bundle(), z, m.data.manifest.frames);
  fs::create_directories(req.out);
  const Skeleton skel = Skeleton::for_joint_count(m.data.manifest.joints);
  write_motion_outputs(req.out / "transfer", motions[0], skel, m.data.manifest.joints, rec);
  rec.note("inversion_steps", cfg.transfer.steps);
  rec.write(dir, sw.seconds());
  return req.out / "transfer.mot";
}

EvalReport run_evaluate(const PipelineConfig& cfg, const Workdir& dir, const EvaluateRequest& req) {
  Stopwatch sw;
  const std::string tag = req.variant ? (req.zero_init ? "zero-init-" : "") + to_string(*req.variant) : "base";
  RunRecord rec("evaluate-" + tag + "-" + cfg.eval.style_source, cfg);
  LoadOptions opt;
  opt.variant = req.variant;
  opt.zero_init = req.zero_init;
  opt.evaluators = true;
  opt.adaptor = cfg.eval.style_source == "text" || cfg.eval.style_source == "image";
  const LoadedModels m = load_models(cfg, dir, opt);
  EvalConfig ec = cfg.eval;
  if (!req.variant) ec.style_source = "none";
  // The style signal is still planned so SRA compares against the intended labels.
  const EvalPlan plan = plan_evaluation(m.data, ec);
  StyleSignalBatch style = style_signals(plan, m.assets(), ec);
  const auto motions = generate_plan(m.bundle(), plan, style, ec.guidance, ec.seed);
  EvalReport rep = score_motions(motions, plan, m.assets(), ec);
  rep.details["model"] = tag;
  json hashes = {{"vae", hex64(file_hash(dir.ckpt("vae")))},
                 {"base", hex64(file_hash(dir.ckpt("base")))},
                 {"styleclf", hex64(file_hash(dir.ckpt("styleclf")))},
                 {"contentclf", hex64(file_hash(dir.ckpt("contentclf")))},
                 {"retrieval", hex64(file_hash(dir.ckpt("retrieval")))}};
  if (req.variant && !req.zero_init) hashes["stylenet"] = hex64(file_hash(dir.ckpt(stylenet_name(*req.variant))));
  if (opt.adaptor) hashes["adaptor"] = hex64(file_hash(dir.ckpt(adaptor_name(*req.variant))));
  rep.details["checkpoints"] = hashes;
  if (!req.out.empty()) {
    fs::create_directories(req.out);
    write_json(req.out / "eval_report.json", rep.to_json());
    rec.output(req.out / "eval_report.json");
  }
  rec.write(dir, sw.seconds());
  return rep;
}

json run_ablate(const PipelineConfig& cfg, const Workdir& dir, const fs::path& out, bool retrain) {
  Stopwatch sw;
  RunRecord rec("ablate", cfg);
  json rows = json::array();
  for (Variant v : {Variant::a, Variant::b, Variant::c, Variant::d}) {
    if (retrain || !fs::exists(dir.ckpt(stylenet_name(v)))) run_train_style(cfg, dir, v);
    const EvalReport r = run_evaluate(cfg, dir, {v, false, out / to_string(v)});
    rows.push_back({{"variant", to_string(v)},
                    {"sra", r.sra},
                    {"fid", r.fid},
                    {"foot_skate_ratio", r.foot_skate_ratio},
                    {"cra", r.cra},
                    {"r_precision_top3", r.r_precision[2]}});
  }
  const EvalReport zero = run_evaluate(cfg, dir, {Variant::b, true, out / "zero-init"});
  const EvalReport base = run_evaluate(cfg, dir, {std::nullopt, false, out / "base"});
  auto ref_row = [](const std::string& name, const EvalReport& r) {
    return json{{"model", name}, {"sra", r.sra}, {"fid", r.fid}, {"foot_skate_ratio", r.foot_skate_ratio},
                {"cra", r.cra}, {"r_precision_top3", r.r_precision[2]}};
  };
  const json result = {{"rows", rows},
                       {"reference", {ref_row("zero-init", zero), ref_row("base", base)}},
                       {"seed", cfg.seed},
                       {"eval", cfg.eval.to_json()}};
  fs::create_directories(out);
  write_json(out / "ablation.json", result);
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(3);
  md << "| Variant | SRA | FID | Foot skate |\n|---|---|---|---|\n";
  for (const auto& r : rows) {
    md << "| " << r.at("variant").get<std::string>() << " | " << r.at("sra").get<double>() << " | "
       << r.at("fid").get<double>() << " | " << r.at("foot_skate_ratio").get<double>() << " |\n";
  }
  write_text(out / "ablation.md", md.str());
  rec.output(out / "ablation.json");
  rec.output(out / "ablation.md");
  rec.write(dir, sw.seconds());
  return result;
}

json run_report_timing(const PipelineConfig& cfg, const Workdir& dir, Variant v, int repeats) {
  if (repeats < 1) throw ConfigError("report-timing: --repeats must be >= 1");
  Stopwatch total;
  RunRecord rec("report-timing", cfg);
  LoadOptions opt;
  opt.variant = v;
  opt.evaluators = true;
  const LoadedModels m = load_models(cfg, dir, opt);
  EvalConfig ec = cfg.eval;
  ec.n_samples = repeats;
  const EvalPlan plan = plan_evaluation(m.data, ec);
  const StyleSignalBatch all = style_signals(plan, m.assets(), ec);
  std::vector<double> secs;
  for (int i = 0; i < repeats; ++i) {
    EvalPlan one;
    one.texts = {plan.texts[static_cast<std::size_t>(i)]};
    StyleSignalBatch s;
    s.embeddings = all.embeddings.row(i);
    s.ref_features = all.ref_features.row(i);
    s.has_ref = {all.has_ref[static_cast<std::size_t>(i)]};
    Stopwatch sw;
    generate_plan(m.bundle(), one, s, cfg.generation, cfg.seed + static_cast<std::uint64_t>(i));
    secs.push_back(sw.seconds());
  }
  double mean = 0.0;
  for (double s : secs) mean += s;
  mean /= double(secs.size());
  double var = 0.0;
  for (double s : secs) var += (s - mean) * (s - mean);
  const json result = {{"aits_seconds", mean},
                       {"std_seconds", secs.size() > 1 ? std::sqrt(var / double(secs.size() - 1)) : 0.0},
                       {"repeats", repeats},
                       {"variant", to_string(v)},
                       {"steps", cfg.generation.steps},
                       {"batch_size", 1}};
  rec.note("timing", result);
  rec.write(dir, total.seconds());
  return result;
}

}  // namespace mulsmo
