#include "mulsmo/vae.hpp"

#include "mulsmo/checkpoint.hpp"

#include <cmath>
#include <numbers>

namespace mulsmo {

namespace {

// Row indices that pad each sample from `frames` to `padded` by repeating its last frame.
std::vector<Eigen::Index> pad_indices(Eigen::Index batch, Eigen::Index frames, Eigen::Index padded) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(batch * padded));
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index f = 0; f < padded; ++f) idx.push_back(b * frames + std::min(f, frames - 1));
  }
  return idx;
}

std::vector<Eigen::Index> trim_indices(Eigen::Index batch, Eigen::Index padded, Eigen::Index frames) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(batch * frames));
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index f = 0; f < frames; ++f) idx.push_back(b * padded + f);
  }
  return idx;
}

Mat stack_rows(const std::vector<const Mat*>& parts) {
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

}  // namespace

nlohmann::json VaeConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"max_frames", max_frames}, {"hidden", hidden},
          {"n_z", n_z},                 {"d_z", d_z},               {"kl_weight", kl_weight}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "feature_dim") c.feature_dim = v.get<int>();
    else if (key == "max_frames") c.max_frames = v.get<int>();
    else if (key == "hidden") c.hidden = v.get<int>();
    else if (key == "n_z") c.n_z = v.get<int>();
    else if (key == "d_z") c.d_z = v.get<int>();
    else if (key == "kl_weight") c.kl_weight = v.get<double>();
    else if (key == "latent_scale") continue;
    else throw ConfigError("vae config: unknown key '" + key + "'");
  }
  if (c.feature_dim < 1 || c.max_frames < 1 || c.hidden < 1 || c.n_z < 1 || c.d_z < 1 || c.kl_weight < 0) {
    throw ConfigError("vae config: invalid sizes");
  }
  return c;
}

Vae::Vae(const VaeConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  const Eigen::Index flat = Eigen::Index(config.max_frames) * config.feature_dim;
  const Eigen::Index latent = Eigen::Index(config.n_z) * config.d_z;
  enc1_ = Linear(params_, "enc.fc1", flat, config.hidden, rng);
  enc2_ = Linear(params_, "enc.fc2", config.hidden, config.hidden, rng);
  head_ = Linear(params_, "enc.head", config.hidden, 2 * latent, rng);
  dec1_ = Linear(params_, "dec.fc1", latent, config.hidden, rng);
  dec2_ = Linear(params_, "dec.fc2", config.hidden, config.hidden, rng);
  out_ = Linear(params_, "dec.out", config.hidden, flat, rng);
}

std::pair<Var, Var> Vae::posterior(const Var& x, Eigen::Index batch, Eigen::Index frames) const {
  if (x.cols() != config_.feature_dim || x.rows() != batch * frames) throw ConfigError("vae: input shape mismatch");
  if (frames < 1 || frames > config_.max_frames) throw ConfigError("vae: frame count outside [1, max_frames]");
  const Eigen::Index padded = config_.max_frames;
  Var xp = padded == frames ? x : ad::gather_rows(x, pad_indices(batch, frames, padded));
  Var h = ad::silu(enc1_(ad::reshape(xp, batch, padded * config_.feature_dim)));
  h = ad::silu(enc2_(h));
  Var stats = ad::reshape(head_(h), batch * config_.n_z, 2 * config_.d_z);
  return {ad::slice_cols(stats, 0, config_.d_z), ad::slice_cols(stats, config_.d_z, config_.d_z)};
}

Var Vae::decode_raw(const Var& z, Eigen::Index batch, Eigen::Index frames) const {
  if (z.rows() != batch * config_.n_z || z.cols() != config_.d_z) throw ConfigError("vae: latent shape mismatch");
  if (frames < 1 || frames > config_.max_frames) throw ConfigError("vae: frame count outside [1, max_frames]");
  Var h = ad::silu(dec1_(ad::reshape(z, batch, Eigen::Index(config_.n_z) * config_.d_z)));
  h = ad::silu(dec2_(h));
  const Eigen::Index padded = config_.max_frames;
  Var y = ad::reshape(out_(h), batch * padded, config_.feature_dim);
  if (padded != frames) y = ad::gather_rows(y, trim_indices(batch, padded, frames));
  return y;
}

Var Vae::encode_mean(const Var& x, Eigen::Index batch, Eigen::Index frames) const {
  return ad::scale(posterior(x, batch, frames).first, 1.0 / latent_scale_);
}

Var Vae::decode(const Var& z_scaled, Eigen::Index batch, Eigen::Index frames) const {
  return decode_raw(ad::scale(z_scaled, latent_scale_), batch, frames);
}

Mat Vae::encode(const Mat& seq) const {
  return encode_mean(ad::constant(seq), 1, seq.rows()).value();
}

Mat Vae::encode_sample(const Mat& seq, Rng& rng) const {
  auto [mu, logvar] = posterior(ad::constant(seq), 1, seq.rows());
  Mat eps = rng.normal_matrix(mu.rows(), mu.cols());
  Mat z = mu.value().array() + (0.5 * logvar.value().array()).exp() * eps.array();
  return z / latent_scale_;
}

Mat Vae::decode(const Mat& z, Eigen::Index frames) const {
  return decode(ad::constant(z), 1, frames).value();
}

nlohmann::json VaeTrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"seed", seed}};
}

VaeTrainConfig VaeTrainConfig::from_json(const nlohmann::json& j) {
  VaeTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0 || c.batch < 1 || c.lr < 0) throw ConfigError("vae train config: invalid values");
  return c;
}

VaeTrainResult train_vae(Vae& vae, const MotionDataset& data, const VaeTrainConfig& config, const EpochLogger& log) {
  const auto train = data.split_indices("train");
  if (train.empty()) throw ConfigError("train_vae: empty training split");
  const Eigen::Index frames = data.manifest.frames;
  std::vector<Mat> norm;
  for (auto i : train) norm.push_back(data.normalized(i));

  Rng rng(config.seed);
  Rng shuffle_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);
  AdamW opt(vae.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  const double beta = vae.config().kl_weight;
  VaeTrainResult result;
  std::vector<std::size_t> order(norm.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Cosine decay to 10% of the base rate.
    const double progress = config.epochs > 1 ? double(epoch) / double(config.epochs - 1) : 1.0;
    opt.set_lr(config.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    shuffle_rng.shuffle(order);
    double recon_sum = 0.0, kl_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const Mat*> parts;
      for (std::size_t k = start; k < end; ++k) parts.push_back(&norm[order[k]]);
      const auto b = static_cast<Eigen::Index>(parts.size());
      Var x = ad::constant(stack_rows(parts));
      auto [mu, logvar] = vae.posterior(x, b, frames);
      Var eps = ad::constant(noise_rng.normal_matrix(mu.rows(), mu.cols()));
      Var z = ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), eps));
      Var recon = mse(vae.decode_raw(z, b, frames), x);
      Var kl = ad::scale(ad::mean(ad::sub(ad::add(ad::exp(logvar), ad::square(mu)), ad::add_scalar(logvar, 1.0))), 0.5);
      Var loss = ad::add(recon, ad::scale(kl, beta));
      ad::backward(loss);
      opt.step();
      recon_sum += recon.scalar() * double(b);
      kl_sum += kl.scalar() * double(b);
      seen += parts.size();
    }
    result.recon_curve.push_back(recon_sum / double(seen));
    result.kl_curve.push_back(kl_sum / double(seen));
    if (!std::isfinite(result.recon_curve.back())) throw NumericError("train_vae: non-finite loss");
    if (log) {
      log({{"epoch", epoch},
           {"recon", result.recon_curve.back()},
           {"kl", result.kl_curve.back()},
           {"lr", opt.config().lr}});
    }
  }

  // Latent scale from the posterior means of the training split; reconstruction in mean mode.
  vae.set_latent_scale(1.0);
  double sq = 0.0, recon = 0.0;
  Eigen::Index count = 0;
  for (const auto& m : norm) {
    Mat mu = vae.posterior(ad::constant(m), 1, frames).first.value();
    sq += mu.squaredNorm();
    count += mu.size();
    recon += (vae.decode_raw(ad::constant(mu), 1, frames).value() - m).squaredNorm() / double(m.size());
  }
  vae.set_latent_scale(std::max(std::sqrt(sq / double(count)), 1e-6));
  result.final_recon = recon / double(norm.size());
  return result;
}

void save_vae(const std::filesystem::path& path, const Vae& vae, const nlohmann::json& meta) {
  nlohmann::json config = vae.config().to_json();
  config["latent_scale"] = vae.latent_scale();
  write_checkpoint(path, "vae-ckpt", config, meta, {&vae.params()});
}

Vae load_vae(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "vae-ckpt");
  Vae vae(VaeConfig::from_json(ckpt.config()), 0);
  load_params(vae.params(), ckpt);
  vae.set_latent_scale(ckpt.config().at("latent_scale").get<double>());
  return vae;
}

}  // namespace mulsmo
