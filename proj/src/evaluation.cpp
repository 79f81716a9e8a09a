#include "mulsmo/evaluation.hpp"

#include "mulsmo/checkpoint.hpp"
#include "mulsmo/denoiser.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <set>

namespace mulsmo {

double recognition_accuracy(const std::vector<int>& predicted, const std::vector<int>& intended) {
  if (predicted.size() != intended.size()) throw ConfigError("accuracy: prediction and label counts differ");
  if (predicted.empty()) throw ConfigError("accuracy: no samples");
  int hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == intended[i] ? 1 : 0;
  return 100.0 * hit / double(predicted.size());
}

namespace {

double accuracy_with(const MotionClassifier& clf, const std::vector<Mat>& motions, const std::vector<int>& intended) {
  for (int y : intended) {
    if (y < 0 || y >= clf.config().n_classes) throw ConfigError("accuracy: label outside the classifier taxonomy");
  }
  return recognition_accuracy(clf.classify_batch(motions), intended);
}

}  // namespace

double sra(const MotionClassifier& style_clf, const std::vector<Mat>& motions, const std::vector<int>& intended) {
  return accuracy_with(style_clf, motions, intended);
}

double cra(const MotionClassifier& content_clf, const std::vector<Mat>& motions, const std::vector<int>& intended) {
  return accuracy_with(content_clf, motions, intended);
}

Mat sqrtm_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) std::cerr << "warning: sqrtm clipped eigenvalue " << ev(i) << "\n";
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void moments(const Mat& x, RowVecD& mu, Mat& cov) {
  const auto n = x.rows();
  mu = x.colwise().mean();
  const Mat c = x.rowwise() - mu;
  cov = n > 1 ? Mat(c.transpose() * c / double(n - 1)) : Mat(Mat::Zero(x.cols(), x.cols()));
  if (n <= x.cols()) {
    constexpr double kShrink = 0.1;
    const double avg = cov.trace() / double(x.cols());
    cov = (1.0 - kShrink) * cov + kShrink * avg * Mat::Identity(x.cols(), x.cols());
  }
}

}  // namespace

double fid(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw ConfigError("fid: feature dimensions differ");
  if (a.rows() < 1 || b.rows() < 1) throw ConfigError("fid: empty feature set");
  if (!a.allFinite() || !b.allFinite()) throw NumericError("fid: non-finite features");
  RowVecD mu_a, mu_b;
  Mat cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);
  const Mat sa = sqrtm_psd(cov_a);
  const Mat cross = sqrtm_psd(sa * cov_b * sa);
  const double v = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
  return std::max(0.0, v);
}

double diversity(const Mat& features, int n_pairs, Rng& rng) {
  const auto n = static_cast<int>(features.rows());
  if (n < 2) throw ConfigError("diversity: need at least 2 samples");
  if (n_pairs < 1) throw ConfigError("diversity: need at least one pair");
  double sum = 0.0;
  for (int k = 0; k < n_pairs; ++k) {
    const int i = rng.uniform_int(0, n - 1);
    int j = rng.uniform_int(0, n - 2);
    if (j >= i) ++j;
    sum += (features.row(i) - features.row(j)).norm();
  }
  return sum / n_pairs;
}

double diversity_all_pairs(const Mat& features) {
  const auto n = features.rows();
  if (n < 2) throw ConfigError("diversity: need at least 2 samples");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) sum += (features.row(i) - features.row(j)).norm();
  }
  return sum / (0.5 * double(n) * double(n - 1));
}

nlohmann::json RetrievalConfig::to_json() const {
  return {{"embed_dim", embed_dim}, {"hidden", hidden}, {"text_buckets", text_buckets},
          {"temperature", temperature}, {"epochs", epochs}, {"batch", batch},
          {"lr", lr}, {"seed", seed}};
}

RetrievalConfig RetrievalConfig::from_json(const nlohmann::json& j) {
  RetrievalConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.text_buckets = j.value("text_buckets", c.text_buckets);
  c.temperature = j.value("temperature", c.temperature);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  if (!(c.temperature > 0) || c.batch < 2 || c.epochs < 0) throw ConfigError("retrieval config: invalid values");
  return c;
}

namespace {

ClassifierConfig retrieval_motion_config(const RetrievalConfig& c, int feature_dim) {
  ClassifierConfig cc;
  cc.feature_dim = feature_dim;
  cc.hidden = c.hidden;
  cc.d_f = c.embed_dim;
  cc.n_classes = 2;  // head unused
  cc.target = "content";
  return cc;
}

}  // namespace

RetrievalModel::RetrievalModel(const RetrievalConfig& config, int feature_dim, const NormStats& stats,
                               std::uint64_t seed)
    : config_(config), motion_(retrieval_motion_config(config, feature_dim), stats, seed + 1) {
  Rng rng(seed);
  text_ = Mlp(text_params_, "text", config.text_buckets, config.hidden, config.embed_dim, rng);
}

Var RetrievalModel::embed_text(const std::vector<std::string>& texts) const {
  return text_(ad::constant(bag_of_words(texts, config_.text_buckets)));
}

Var RetrievalModel::embed_motion(const Var& x_raw, Eigen::Index batch, Eigen::Index frames) const {
  return motion_.features(x_raw, batch, frames);
}

Mat RetrievalModel::text_embeddings(const std::vector<std::string>& texts) const { return embed_text(texts).value(); }

Mat RetrievalModel::motion_embeddings(const std::vector<Mat>& motions_raw) const {
  Mat out(static_cast<Eigen::Index>(motions_raw.size()), config_.embed_dim);
  for (std::size_t i = 0; i < motions_raw.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        embed_motion(ad::constant(motions_raw[i]), 1, motions_raw[i].rows()).value().row(0);
  }
  return out;
}

std::vector<double> train_retrieval_model(RetrievalModel& model, const MotionDataset& data, const EpochLogger& log) {
  const auto train = data.split_indices("train");
  if (train.size() < 2) throw ConfigError("train_retrieval_model: need paired training data");
  const auto& cfg = model.config();
  const Eigen::Index frames = data.manifest.frames;
  Rng rng(cfg.seed);
  auto stores = model.stores();
  std::vector<AdamW> opts;
  for (auto* s : stores) opts.emplace_back(*s, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  std::vector<std::size_t> order = train;
  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double progress = cfg.epochs > 1 ? double(epoch) / double(cfg.epochs - 1) : 1.0;
    for (auto& o : opts) o.set_lr(cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress))));
    rng.shuffle(order);
    double sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      if (end - start < 2) break;
      std::vector<std::string> texts;
      Mat x(static_cast<Eigen::Index>(end - start) * frames, data.manifest.feature_dim());
      for (std::size_t k = start; k < end; ++k) {
        texts.push_back(data.manifest.entries[order[k]].text);
        x.middleRows(static_cast<Eigen::Index>(k - start) * frames, frames) = data.motions[order[k]];
      }
      Var loss = infonce_loss(model.embed_motion(ad::constant(x), static_cast<Eigen::Index>(end - start), frames),
                              model.embed_text(texts), cfg.temperature, true);
      ad::backward(loss);
      for (auto& o : opts) o.step();
      sum += loss.scalar();
      ++steps;
    }
    curve.push_back(sum / std::max(steps, 1));
    if (!std::isfinite(curve.back())) throw NumericError("train_retrieval_model: non-finite loss");
    if (log) log({{"epoch", epoch}, {"loss", curve.back()}});
  }
  return curve;
}

void save_retrieval_model(const std::filesystem::path& path, const RetrievalModel& model, const nlohmann::json& meta) {
  nlohmann::json config = model.config().to_json();
  config["feature_dim"] = model.feature_dim();
  const auto& s = model.stats();
  config["stats"] = {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                     {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
  write_checkpoint(path, "retrieval-ckpt", config, meta, model.stores());
}

RetrievalModel load_retrieval_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "retrieval-ckpt");
  const auto& c = ckpt.config();
  NormStats stats;
  const auto mean = c.at("stats").at("mean").get<std::vector<double>>();
  const auto sd = c.at("stats").at("std").get<std::vector<double>>();
  stats.mean = Eigen::Map<const RowVecD>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  stats.std = Eigen::Map<const RowVecD>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  RetrievalModel model(RetrievalConfig::from_json(c), c.at("feature_dim").get<int>(), stats, 0);
  for (auto* s : model.stores()) load_params(*s, ckpt);
  return model;
}

double mm_dist(const Mat& text_emb, const Mat& motion_emb) {
  if (text_emb.rows() != motion_emb.rows() || text_emb.cols() != motion_emb.cols() || text_emb.rows() == 0) {
    throw ConfigError("mm_dist: embeddings must be matched and non-empty");
  }
  return (text_emb - motion_emb).rowwise().norm().mean();
}

std::array<double, 3> r_precision(const Mat& text_emb, const Mat& motion_emb, const std::vector<int>& groups, int pool,
                                  Rng& rng) {
  const auto n = static_cast<int>(text_emb.rows());
  if (motion_emb.rows() != n || static_cast<int>(groups.size()) != n) throw ConfigError("r_precision: size mismatch");
  std::array<int, 3> hits{0, 0, 0};
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> others;
    for (int j = 0; j < n; ++j) {
      if (groups[static_cast<std::size_t>(j)] != groups[static_cast<std::size_t>(i)]) others.push_back(j);
    }
    if (others.empty()) continue;
    int size = pool;
    if (static_cast<int>(others.size()) < pool - 1) {
      size = static_cast<int>(others.size()) + 1;
      if (i == 0) std::cerr << "warning: r_precision pool reduced to " << size << "\n";
    }
    rng.shuffle(others);
    const double own = (motion_emb.row(i) - text_emb.row(i)).norm();
    int rank = 1;
    for (int k = 0; k < size - 1; ++k) {
      if ((motion_emb.row(i) - text_emb.row(others[static_cast<std::size_t>(k)])).norm() < own) ++rank;
    }
    for (int k = 0; k < 3; ++k) hits[static_cast<std::size_t>(k)] += rank <= k + 1 ? 1 : 0;
    ++counted;
  }
  if (counted == 0) throw ConfigError("r_precision: no sample has distractors");
  return {100.0 * hits[0] / counted, 100.0 * hits[1] / counted, 100.0 * hits[2] / counted};
}

double foot_skate_ratio(const JointTrajectory& traj, const Skeleton& skel, const FootSkateConfig& cfg) {
  const auto len = traj.length();
  if (len < 2) throw ConfigError("foot_skate_ratio: need at least 2 frames");
  std::set<int> feet(skel.foot_joints.begin(), skel.foot_joints.end());
  double floor = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < len; ++t) {
    for (int j : feet) floor = std::min(floor, traj.at(t, j).y());
  }
  int skating = 0;
  for (Eigen::Index t = 0; t + 1 < len; ++t) {
    bool any = false;
    for (int j : feet) {
      const Eigen::Vector3d p = traj.at(t, j);
      const Eigen::Vector3d q = traj.at(t + 1, j);
      const double speed = std::hypot(q.x() - p.x(), q.z() - p.z()) / kDt;
      if (p.y() - floor < cfg.h_contact && speed > cfg.v_skate) any = true;
    }
    skating += any ? 1 : 0;
  }
  return double(skating) / double(len - 1);
}

nlohmann::json EvalConfig::to_json() const {
  return {{"n_samples", n_samples},
          {"seed", seed},
          {"style_source", style_source},
          {"exclude_act", exclude_act},
          {"diversity_pairs", diversity_pairs},
          {"r_pool", r_pool},
          {"h_contact", foot.h_contact},
          {"v_skate", foot.v_skate},
          {"guidance", guidance.to_json()}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.n_samples = j.value("n_samples", c.n_samples);
  c.seed = j.value("seed", c.seed);
  c.style_source = j.value("style_source", c.style_source);
  c.exclude_act = j.value("exclude_act", c.exclude_act);
  c.diversity_pairs = j.value("diversity_pairs", c.diversity_pairs);
  c.r_pool = j.value("r_pool", c.r_pool);
  c.foot.h_contact = j.value("h_contact", c.foot.h_contact);
  c.foot.v_skate = j.value("v_skate", c.foot.v_skate);
  if (j.contains("guidance")) c.guidance = GuidanceConfig::from_json(j.at("guidance"));
  if (c.n_samples < 1) throw ConfigError("eval config: n_samples must be >= 1");
  if (c.style_source != "motion" && c.style_source != "text" && c.style_source != "image" && c.style_source != "none") {
    throw ConfigError("eval config: style_source must be motion, text, image or none");
  }
  return c;
}

nlohmann::json EvalReport::to_json() const {
  return {{"sra", sra},
          {"cra", cra},
          {"fid", fid},
          {"diversity", diversity},
          {"real_diversity", real_diversity},
          {"mm_dist", mm_dist},
          {"r_precision", {{"top1", r_precision[0]}, {"top2", r_precision[1]}, {"top3", r_precision[2]}}},
          {"foot_skate_ratio", foot_skate_ratio},
          {"samples", samples},
          {"config_hash", config_hash},
          {"details", details}};
}

EvalPlan plan_evaluation(const MotionDataset& data, const EvalConfig& cfg) {
  if (cfg.n_samples < 1) throw ConfigError("evaluate: n_samples must be >= 1");
  auto pool = data.split_indices("test");
  if (pool.empty()) pool = data.split_indices("");
  const auto& m = data.manifest;
  std::vector<int> styles;
  for (int s = 0; s < static_cast<int>(m.style_taxonomy.size()); ++s) {
    if (cfg.exclude_act && m.style_taxonomy[static_cast<std::size_t>(s)].group == "ACT") continue;
    bool present = false;
    for (auto i : pool) present = present || m.entries[i].style == s;
    if (present) styles.push_back(s);
  }
  std::vector<int> contents;
  for (int c = 0; c < static_cast<int>(m.content_taxonomy.size()); ++c) {
    bool present = false;
    for (auto i : pool) present = present || m.entries[i].content == c;
    if (present) contents.push_back(c);
  }
  if (styles.empty() || contents.empty()) throw ConfigError("evaluate: no eligible styles or contents");
  Rng rng = Rng(cfg.seed).fork(100);
  EvalPlan plan;
  auto pick = [&](auto pred) {
    std::vector<std::size_t> c;
    for (auto i : pool) {
      if (pred(m.entries[i])) c.push_back(i);
    }
    return c[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(c.size()) - 1))];
  };
  for (int i = 0; i < cfg.n_samples; ++i) {
    const int s = styles[static_cast<std::size_t>(i) % styles.size()];
    const int c = contents[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(contents.size()) - 1))];
    plan.style.push_back(s);
    plan.content.push_back(c);
    plan.texts.push_back(m.entries[pick([&](const ManifestEntry& e) { return e.content == c; })].text);
    plan.style_refs.push_back(pick([&](const ManifestEntry& e) { return e.style == s; }));
  }
  return plan;
}

StyleSignalBatch style_signals(const EvalPlan& plan, const EvalAssets& assets, const EvalConfig& cfg) {
  StyleSignalBatch out;
  const auto n = static_cast<Eigen::Index>(plan.style.size());
  if (cfg.style_source == "none") return out;
  const auto& m = assets.data->manifest;
  if (cfg.style_source == "motion") {
    if (assets.encoder == nullptr) throw MissingDependency("style motion encoder not available (run `mulsmo train-style`)");
    out.embeddings.resize(n, assets.encoder->config().d_f);
    const bool guide = assets.style_clf != nullptr;
    out.ref_features = Mat::Zero(n, guide ? assets.style_clf->config().d_f : 1);
    out.has_ref.assign(static_cast<std::size_t>(n), guide ? 1 : 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ref = plan.style_refs[static_cast<std::size_t>(i)];
      out.embeddings.row(i) = assets.encoder->encode(assets.data->normalized(ref));
      if (guide) out.ref_features.row(i) = assets.style_clf->feature(assets.data->motions[ref]);
    }
    return out;
  }
  if (assets.adaptor == nullptr || assets.embeddings == nullptr) {
    throw MissingDependency("adaptor or embeddings not available (run `mulsmo train-adaptor`)");
  }
  out.embeddings.resize(n, assets.adaptor->config().d_f);
  out.ref_features = Mat::Zero(n, 1);
  out.has_ref.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& name = m.style_taxonomy[static_cast<std::size_t>(plan.style[static_cast<std::size_t>(i)])].name;
    out.embeddings.row(i) = assets.adaptor->adapt(find_embedding(*assets.embeddings, name, cfg.style_source));
  }
  return out;
}

std::vector<Mat> generate_plan(const ModelBundle& m, const EvalPlan& plan, const StyleSignalBatch& style,
                               const GuidanceConfig& guidance, std::uint64_t seed) {
  const auto n = plan.texts.size();
  const Eigen::Index n_z = m.den->config().n_z;
  Mat z_T(static_cast<Eigen::Index>(n) * n_z, m.den->config().d_z);
  const Rng master(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = master.fork(1000 + i);
    z_T.middleRows(static_cast<Eigen::Index>(i) * n_z, n_z) = r.normal_matrix(n_z, z_T.cols());
  }
  CondBatch cond;
  cond.texts = plan.texts;
  cond.null.assign(n, 0);
  Rng sampler_rng = master.fork(999);
  const Mat z0 = sample_latents(m, cond, style, guidance, sampler_rng, &z_T);
  return decode_motions(m, z0, m.frames);
}

EvalReport score_motions(const std::vector<Mat>& motions, const EvalPlan& plan, const EvalAssets& assets,
                         const EvalConfig& cfg) {
  if (motions.size() != plan.style.size() || motions.empty()) throw ConfigError("evaluate: motion and plan counts differ");
  const auto& data = *assets.data;
  EvalReport rep;
  rep.samples = static_cast<int>(motions.size());
  rep.sra = sra(*assets.style_clf, motions, plan.style);
  if (assets.content_clf) rep.cra = cra(*assets.content_clf, motions, plan.content);

  std::set<int> eligible(plan.style.begin(), plan.style.end());
  std::vector<Mat> real;
  auto pool = data.split_indices("test");
  if (pool.empty()) pool = data.split_indices("");
  for (auto i : pool) {
    if (eligible.count(data.manifest.entries[i].style)) real.push_back(data.motions[i]);
  }
  const Mat gen_f = assets.style_clf->feature_batch(motions);
  const Mat real_f = assets.style_clf->feature_batch(real);
  rep.fid = fid(gen_f, real_f);
  Rng rng = Rng(cfg.seed).fork(200);
  rep.diversity = motions.size() > 1 ? diversity(gen_f, cfg.diversity_pairs, rng) : 0.0;
  rep.real_diversity = real.size() > 1 ? diversity(real_f, cfg.diversity_pairs, rng) : 0.0;
  if (assets.retrieval) {
    const Mat te = assets.retrieval->text_embeddings(plan.texts);
    const Mat me = assets.retrieval->motion_embeddings(motions);
    rep.mm_dist = mm_dist(te, me);
    rep.r_precision = r_precision(te, me, plan.content, cfg.r_pool, rng);
  }
  const Skeleton skel = Skeleton::for_joint_count(data.manifest.joints);
  double skate = 0.0;
  for (const auto& mo : motions) skate += foot_skate_ratio(recover_joints(MotionSequence{mo}, skel), skel, cfg.foot);
  rep.foot_skate_ratio = skate / double(motions.size());

  nlohmann::json per_style = nlohmann::json::object();
  const auto pred = assets.style_clf->classify_batch(motions);
  for (int s : eligible) {
    int n = 0, hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (plan.style[i] != s) continue;
      ++n;
      hit += pred[i] == s ? 1 : 0;
    }
    per_style[data.manifest.style_taxonomy[static_cast<std::size_t>(s)].name] = 100.0 * hit / std::max(n, 1);
  }
  rep.config_hash = hex64(fnv1a(cfg.to_json().dump()));
  rep.details = {{"per_style_sra", per_style},
                 {"feature_space", "style-classifier penultimate features"},
                 {"h_contact", cfg.foot.h_contact},
                 {"v_skate", cfg.foot.v_skate},
                 {"style_source", cfg.style_source},
                 {"excluded_groups", cfg.exclude_act ? nlohmann::json::array({"ACT"}) : nlohmann::json::array()},
                 {"seed", cfg.seed},
                 {"real_samples", real.size()}};
  return rep;
}

EvalReport evaluate(const ModelBundle& m, const EvalAssets& assets, const EvalConfig& cfg) {
  if (assets.data == nullptr || assets.style_clf == nullptr) throw MissingDependency("evaluate: dataset and style classifier required");
  const EvalPlan plan = plan_evaluation(*assets.data, cfg);
  const StyleSignalBatch style = style_signals(plan, assets, cfg);
  const auto motions = generate_plan(m, plan, style, cfg.guidance, cfg.seed);
  return score_motions(motions, plan, assets, cfg);
}

}  // namespace mulsmo
