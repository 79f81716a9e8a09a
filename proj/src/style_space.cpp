#include "mulsmo/style_space.hpp"

#include "mulsmo/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace mulsmo {

namespace {

Mat stack(const std::vector<const Mat*>& parts) {
  Eigen::Index rows = 0;
  for (const auto* p : parts) rows += p->rows();
  Mat out(rows, parts.front()->cols());
  Eigen::Index r = 0;
  for (const auto* p : parts) {
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

double cosine_lr(double base, int epoch, int epochs) {
  const double progress = epochs > 1 ? double(epoch) / double(epochs - 1) : 1.0;
  return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

nlohmann::json stats_to_json(const NormStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  NormStats s;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  s.mean = Eigen::Map<const RowVecD>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.std = Eigen::Map<const RowVecD>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  return s;
}

}  // namespace

nlohmann::json ClassifierConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"hidden", hidden},       {"d_f", d_f},
          {"kernel", kernel},           {"n_classes", n_classes}, {"target", target}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.d_f = j.value("d_f", c.d_f);
  c.kernel = j.value("kernel", c.kernel);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.target = j.value("target", c.target);
  if (c.n_classes < 2) throw ConfigError("classifier: need at least 2 classes");
  if (c.kernel < 1 || c.kernel % 2 == 0) throw ConfigError("classifier: kernel must be odd");
  if (c.target != "style" && c.target != "content") throw ConfigError("classifier: target must be style or content");
  return c;
}

MotionClassifier::MotionClassifier(const ClassifierConfig& config, const NormStats& stats, std::uint64_t seed)
    : config_(config), stats_(stats) {
  if (config.n_classes < 2) throw ConfigError("classifier: need at least 2 classes");
  if (stats.mean.size() != config.feature_dim || stats.std.size() != config.feature_dim) {
    throw ConfigError("classifier: normalisation stats dimension mismatch");
  }
  Rng rng(seed);
  conv1_ = Linear(params_, "conv1", config.kernel * config.feature_dim, config.hidden, rng);
  conv2_ = Linear(params_, "conv2", config.kernel * config.hidden, config.hidden, rng);
  proj_ = Linear(params_, "proj", config.hidden, config.d_f, rng);
  head_ = Linear(params_, "head", config.d_f, config.n_classes, rng);
}

Var MotionClassifier::features(const Var& x_raw, Eigen::Index batch, Eigen::Index frames) const {
  if (x_raw.cols() != config_.feature_dim || x_raw.rows() != batch * frames) {
    throw ConfigError("classifier: input shape mismatch");
  }
  const RowVecD inv = stats_.std.cwiseInverse();
  const RowVecD shift = -stats_.mean.cwiseProduct(inv);
  Var x = ad::add_row(ad::mul_row(x_raw, ad::constant(inv)), ad::constant(shift));
  Var h = ad::silu(conv1_(ad::temporal_unfold(x, frames, config_.kernel)));
  h = ad::silu(conv2_(ad::temporal_unfold(h, frames, config_.kernel)));
  return ad::silu(proj_(ad::mean_tokens(h, frames)));
}

Var MotionClassifier::head(const Var& features) const { return head_(features); }

RowVecD MotionClassifier::feature(const Mat& seq_raw) const {
  return features(ad::constant(seq_raw), 1, seq_raw.rows()).value().row(0);
}

int MotionClassifier::classify(const Mat& seq_raw) const {
  Mat logits = head(features(ad::constant(seq_raw), 1, seq_raw.rows())).value();
  Eigen::Index arg = 0;
  logits.row(0).maxCoeff(&arg);
  return static_cast<int>(arg);
}

std::vector<int> MotionClassifier::classify_batch(const std::vector<Mat>& seqs_raw) const {
  std::vector<int> out;
  for (const auto& s : seqs_raw) out.push_back(classify(s));
  return out;
}

Mat MotionClassifier::feature_batch(const std::vector<Mat>& seqs_raw) const {
  Mat out(static_cast<Eigen::Index>(seqs_raw.size()), config_.d_f);
  for (std::size_t i = 0; i < seqs_raw.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = feature(seqs_raw[i]);
  return out;
}

nlohmann::json ClassifierTrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"seed", seed}};
}

ClassifierTrainConfig ClassifierTrainConfig::from_json(const nlohmann::json& j) {
  ClassifierTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0 || c.batch < 1 || c.lr < 0) throw ConfigError("classifier train config: invalid values");
  return c;
}

ClassifierTrainResult train_classifier(MotionClassifier& clf, const MotionDataset& data,
                                       const ClassifierTrainConfig& config, const EpochLogger& log) {
  const auto train = data.split_indices("train");
  if (train.empty()) throw ConfigError("train_classifier: empty training split");
  const bool by_style = clf.config().target == "style";
  auto label_of = [&](std::size_t i) {
    return by_style ? data.manifest.entries[i].style : data.manifest.entries[i].content;
  };
  std::vector<int> present(static_cast<std::size_t>(clf.config().n_classes), 0);
  for (auto i : train) {
    const int y = label_of(i);
    if (y < 0 || y >= clf.config().n_classes) throw ConfigError("train_classifier: label outside classifier range");
    present[static_cast<std::size_t>(y)] = 1;
  }
  int distinct = 0;
  for (int p : present) distinct += p;
  if (distinct < 2) throw ConfigError("train_classifier: training data holds a single class");

  const Eigen::Index frames = data.manifest.frames;
  Rng rng(config.seed);
  AdamW opt(clf.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  std::vector<std::size_t> order = train;
  ClassifierTrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(cosine_lr(config.lr, epoch, config.epochs));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const Mat*> parts;
      Mat onehot = Mat::Zero(static_cast<Eigen::Index>(end - start), clf.config().n_classes);
      for (std::size_t k = start; k < end; ++k) {
        parts.push_back(&data.motions[order[k]]);
        onehot(static_cast<Eigen::Index>(k - start), label_of(order[k])) = 1.0;
      }
      const auto b = static_cast<Eigen::Index>(parts.size());
      Var logp = ad::log_softmax_rows(clf.head(clf.features(ad::constant(stack(parts)), b, frames)));
      Var loss = ad::scale(ad::sum(ad::mul(logp, ad::constant(onehot))), -1.0 / double(b));
      ad::backward(loss);
      opt.step();
      loss_sum += loss.scalar() * double(b);
    }
    result.loss_curve.push_back(loss_sum / double(order.size()));
    if (!std::isfinite(result.loss_curve.back())) throw NumericError("train_classifier: non-finite loss");
    if (log) log({{"epoch", epoch}, {"loss", result.loss_curve.back()}, {"lr", opt.config().lr}});
  }
  auto accuracy = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    int hit = 0;
    for (auto i : idx) hit += clf.classify(data.motions[i]) == label_of(i) ? 1 : 0;
    return 100.0 * hit / double(idx.size());
  };
  result.train_accuracy = accuracy(train);
  result.test_accuracy = accuracy(data.split_indices("test"));
  return result;
}

void save_classifier(const std::filesystem::path& path, const MotionClassifier& clf, const nlohmann::json& meta) {
  nlohmann::json config = clf.config().to_json();
  config["stats"] = stats_to_json(clf.stats());
  write_checkpoint(path, "styleclf-ckpt", config, meta, {&clf.params()});
}

MotionClassifier load_classifier(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "styleclf-ckpt");
  MotionClassifier clf(ClassifierConfig::from_json(ckpt.config()), stats_from_json(ckpt.config().at("stats")), 0);
  load_params(clf.params(), ckpt);
  return clf;
}

nlohmann::json StyleEncoderConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"max_frames", max_frames}, {"patch", patch},
          {"width", width},             {"heads", heads},           {"d_f", d_f}};
}

StyleEncoderConfig StyleEncoderConfig::from_json(const nlohmann::json& j) {
  StyleEncoderConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.patch = j.value("patch", c.patch);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.d_f = j.value("d_f", c.d_f);
  if (c.patch < 1 || c.width % c.heads != 0) throw ConfigError("style encoder config: invalid sizes");
  return c;
}

StyleMotionEncoder::StyleMotionEncoder(const StyleEncoderConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  const Eigen::Index n_tok = (config.max_frames + config.patch - 1) / config.patch;
  mask_token_ = params_.add("mask_token", Mat::Zero(1, config.feature_dim));
  patch_in_ = Linear(params_, "patch_in", config.patch * config.feature_dim, config.width, rng);
  pos_ = params_.add("pos", rng.normal_matrix(n_tok, config.width, 0.1));
  block_ = TransformerBlock(params_, "block", config.width, config.heads, 2 * config.width, rng);
  out_ = Linear(params_, "out", config.width, config.d_f, rng);
}

Var StyleMotionEncoder::encode(const Var& x, Eigen::Index batch, Eigen::Index frames,
                               const std::vector<char>* frame_mask) const {
  if (x.cols() != config_.feature_dim || x.rows() != batch * frames) throw ConfigError("style encoder: input shape mismatch");
  if (frames < 1 || frames > config_.max_frames) throw ConfigError("style encoder: frame count outside [1, max_frames]");
  Var h = x;
  if (frame_mask != nullptr) {
    if (static_cast<Eigen::Index>(frame_mask->size()) != x.rows()) throw ConfigError("style encoder: mask size mismatch");
    Mat keep(x.rows(), 1), masked(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const bool m = (*frame_mask)[static_cast<std::size_t>(r)] != 0;
      keep(r, 0) = m ? 0.0 : 1.0;
      masked(r, 0) = m ? 1.0 : 0.0;
    }
    h = ad::add(ad::mul_col(x, ad::constant(keep)), ad::matmul(ad::constant(masked), mask_token_));
  }
  const Eigen::Index n = (frames + config_.patch - 1) / config_.patch;
  const Eigen::Index padded = n * config_.patch;
  if (padded != frames) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index f = 0; f < padded; ++f) idx.push_back(b * frames + std::min(f, frames - 1));
    }
    h = ad::gather_rows(h, idx);
  }
  h = patch_in_(ad::reshape(h, batch * n, config_.patch * config_.feature_dim));
  h = ad::add_tokenwise(h, ad::slice_rows(pos_, 0, n), n);
  h = block_(h, n);
  return out_(ad::mean_tokens(h, n));
}

RowVecD StyleMotionEncoder::encode(const Mat& seq_norm) const {
  return encode(ad::constant(seq_norm), 1, seq_norm.rows()).value().row(0);
}

Var infonce_loss(const Var& anchors, const Var& targets, double temperature, bool symmetric) {
  if (!(temperature > 0.0)) throw ConfigError("infonce: temperature must be positive");
  const Eigen::Index n = anchors.rows();
  if (n < 2 || targets.rows() != n || anchors.cols() != targets.cols()) {
    throw ConfigError("infonce: need matched batches of at least 2");
  }
  if ((anchors.value().rowwise().norm().array() == 0.0).any() || (targets.value().rowwise().norm().array() == 0.0).any()) {
    throw NumericError("infonce: zero-norm embedding");
  }
  Var logits = ad::scale(ad::matmul(ad::l2_normalize_rows(anchors), ad::transpose(ad::l2_normalize_rows(targets))),
                         1.0 / temperature);
  Var eye = ad::constant(Mat::Identity(n, n));
  Var loss = ad::scale(ad::sum(ad::mul(ad::log_softmax_rows(logits), eye)), -1.0 / double(n));
  if (!symmetric) return loss;
  Var other = ad::scale(ad::sum(ad::mul(ad::log_softmax_rows(ad::transpose(logits)), eye)), -1.0 / double(n));
  return ad::scale(ad::add(loss, other), 0.5);
}

std::vector<SemanticEmbedding> deterministic_embeddings(const std::vector<std::string>& labels, int dim,
                                                        std::uint64_t seed, bool with_images) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (n < 1 || n > dim) throw ConfigError("embedding provider: need 1 <= labels <= dim");
  Rng rng(seed);
  Mat g = rng.normal_matrix(dim, n);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(dim, n);
  std::vector<SemanticEmbedding> out;
  for (Eigen::Index k = 0; k < n; ++k) {
    RowVecD v = q.col(k).transpose();
    out.push_back({labels[static_cast<std::size_t>(k)], "text", v});
  }
  if (with_images) {
    Rng img = rng.fork(7);
    for (Eigen::Index k = 0; k < n; ++k) {
      RowVecD v = q.col(k).transpose() + 0.05 * img.normal_matrix(1, dim);
      out.push_back({labels[static_cast<std::size_t>(k)], "image", v / v.norm()});
    }
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path, const std::vector<SemanticEmbedding>& embeddings) {
  std::string text;
  for (const auto& e : embeddings) {
    nlohmann::json j = {{"id", e.id},
                        {"modality", e.modality},
                        {"dim", e.values.size()},
                        {"values", std::vector<double>(e.values.data(), e.values.data() + e.values.size())}};
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

std::vector<SemanticEmbedding> read_embeddings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingDependency("missing embedding file " + path.string());
  std::ifstream is(path);
  std::vector<SemanticEmbedding> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SemanticEmbedding e;
      e.id = j.at("id").get<std::string>();
      e.modality = j.value("modality", "text");
      const auto values = j.at("values").get<std::vector<double>>();
      if (j.contains("dim") && j.at("dim").get<std::size_t>() != values.size()) {
        throw ConfigError("dim does not match values");
      }
      e.values = Eigen::Map<const RowVecD>(values.data(), static_cast<Eigen::Index>(values.size()));
      if (!e.values.allFinite()) throw ConfigError("non-finite values");
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

const SemanticEmbedding& find_embedding(const std::vector<SemanticEmbedding>& all, const std::string& id,
                                        const std::string& modality) {
  for (const auto& e : all) {
    if (e.id == id && e.modality == modality) return e;
  }
  throw ConfigError("no " + modality + " embedding for '" + id + "'");
}

nlohmann::json AdaptorConfig::to_json() const {
  return {{"d_e", d_e}, {"hidden", hidden}, {"d_f", d_f}, {"temperature", temperature}, {"symmetric", symmetric}};
}

AdaptorConfig AdaptorConfig::from_json(const nlohmann::json& j) {
  AdaptorConfig c;
  c.d_e = j.value("d_e", c.d_e);
  c.hidden = j.value("hidden", c.hidden);
  c.d_f = j.value("d_f", c.d_f);
  c.temperature = j.value("temperature", c.temperature);
  c.symmetric = j.value("symmetric", c.symmetric);
  if (!(c.temperature > 0.0)) throw ConfigError("adaptor: temperature must be positive");
  return c;
}

Adaptor::Adaptor(const AdaptorConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  mlp_ = Mlp(params_, "mlp", config.d_e, config.hidden, config.d_f, rng);
}

Var Adaptor::forward(const Var& e) const {
  if (e.cols() != config_.d_e) throw ConfigError("adaptor: embedding dimension mismatch");
  return mlp_(e);
}

RowVecD Adaptor::adapt(const SemanticEmbedding& e) const {
  if (e.values.size() != config_.d_e) throw ConfigError("adaptor: embedding '" + e.id + "' has wrong dimension");
  return forward(ad::constant(Mat(e.values))).value().row(0);
}

nlohmann::json AdaptorTrainConfig::to_json() const {
  return {{"epochs", epochs}, {"samples_per_label", samples_per_label}, {"lr", lr}, {"seed", seed}};
}

AdaptorTrainConfig AdaptorTrainConfig::from_json(const nlohmann::json& j) {
  AdaptorTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.samples_per_label = j.value("samples_per_label", c.samples_per_label);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0 || c.samples_per_label < 1 || c.lr < 0) throw ConfigError("adaptor train config: invalid values");
  return c;
}

AdaptorTrainResult train_adaptor(Adaptor& adaptor, const std::vector<RowVecD>& label_embeddings,
                                 const std::vector<std::vector<RowVecD>>& style_embeddings,
                                 const AdaptorTrainConfig& config, const EpochLogger& log) {
  const std::size_t k = label_embeddings.size();
  if (k < 2) throw ConfigError("train_adaptor: need at least 2 labels");
  if (style_embeddings.size() != k) throw ConfigError("train_adaptor: label and style lists differ in length");
  for (const auto& s : style_embeddings) {
    if (s.empty()) throw ConfigError("train_adaptor: a label has no style-motion embeddings");
  }
  const Eigen::Index d_f = style_embeddings[0][0].size();
  Mat e(static_cast<Eigen::Index>(k), adaptor.config().d_e);
  for (std::size_t i = 0; i < k; ++i) {
    if (label_embeddings[i].size() != adaptor.config().d_e) throw ConfigError("train_adaptor: embedding dimension mismatch");
    e.row(static_cast<Eigen::Index>(i)) = label_embeddings[i];
  }
  Rng rng(config.seed);
  AdamW opt(adaptor.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 0.0});
  AdaptorTrainResult result;
  const Var anchors_in = ad::constant(e);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(cosine_lr(config.lr, epoch, config.epochs));
    double loss_sum = 0.0;
    for (int rep = 0; rep < config.samples_per_label; ++rep) {
      Mat s(static_cast<Eigen::Index>(k), d_f);
      for (std::size_t i = 0; i < k; ++i) {
        const auto& pool = style_embeddings[i];
        s.row(static_cast<Eigen::Index>(i)) = pool[static_cast<std::size_t>(rng.uniform_int(0, int(pool.size()) - 1))];
      }
      Var loss = infonce_loss(adaptor.forward(anchors_in), ad::constant(s), adaptor.config().temperature,
                              adaptor.config().symmetric);
      ad::backward(loss);
      opt.step();
      loss_sum += loss.scalar();
    }
    result.loss_curve.push_back(loss_sum / config.samples_per_label);
    if (!std::isfinite(result.loss_curve.back())) throw NumericError("train_adaptor: non-finite loss");
    if (log) log({{"epoch", epoch}, {"loss", result.loss_curve.back()}, {"lr", opt.config().lr}});
  }
  // Retrieval against the per-label centroid of normalised style embeddings.
  Mat centroids(static_cast<Eigen::Index>(k), d_f);
  for (std::size_t i = 0; i < k; ++i) {
    RowVecD c = RowVecD::Zero(d_f);
    for (const auto& s : style_embeddings[i]) c += s / std::max(s.norm(), 1e-12);
    centroids.row(static_cast<Eigen::Index>(i)) = c / std::max(c.norm(), 1e-12);
  }
  Mat adapted = adaptor.forward(anchors_in).value();
  int hit = 0;
  for (std::size_t i = 0; i < k; ++i) {
    RowVecD a = adapted.row(static_cast<Eigen::Index>(i));
    a /= std::max(a.norm(), 1e-12);
    Eigen::Index arg = 0;
    (centroids * a.transpose()).maxCoeff(&arg);
    hit += arg == static_cast<Eigen::Index>(i) ? 1 : 0;
  }
  result.top1 = 100.0 * hit / double(k);
  return result;
}

void save_adaptor(const std::filesystem::path& path, const Adaptor& adaptor, const nlohmann::json& meta) {
  write_checkpoint(path, "adaptor-ckpt", adaptor.config().to_json(), meta, {&adaptor.params()});
}

Adaptor load_adaptor(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "adaptor-ckpt");
  Adaptor adaptor(AdaptorConfig::from_json(ckpt.config()), 0);
  load_params(adaptor.params(), ckpt);
  return adaptor;
}

}  // namespace mulsmo
