#include "mulsmo/training.hpp"

#include "mulsmo/checkpoint.hpp"

#include <cmath>
#include <map>

namespace mulsmo {

LatentSet encode_latents(const Vae& vae, const MotionDataset& data, const std::string& split) {
  const auto idx = data.split_indices(split);
  if (idx.empty()) throw ConfigError("encode_latents: split '" + split + "' is empty");
  LatentSet out;
  out.n_z = vae.config().n_z;
  out.z.resize(static_cast<Eigen::Index>(idx.size()) * out.n_z, vae.config().d_z);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto i = idx[k];
    Mat norm = data.normalized(i);
    out.z.middleRows(static_cast<Eigen::Index>(k) * out.n_z, out.n_z) = vae.encode(norm);
    out.texts.push_back(data.manifest.entries[i].text);
    out.content.push_back(data.manifest.entries[i].content);
    out.style.push_back(data.manifest.entries[i].style);
    out.motions.push_back(std::move(norm));
  }
  return out;
}

nlohmann::json BaseTrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"p_null", p_null}, {"seed", seed}};
}

BaseTrainConfig BaseTrainConfig::from_json(const nlohmann::json& j) {
  BaseTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.p_null = j.value("p_null", c.p_null);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0 || c.batch < 1 || c.lr < 0 || c.p_null < 0 || c.p_null > 1) {
    throw ConfigError("base train config: invalid values");
  }
  return c;
}

namespace {

double cosine_lr(double base, int epoch, int epochs) {
  const double progress = epochs > 1 ? double(epoch) / double(epochs - 1) : 1.0;
  return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)));
}

Mat gather_latents(const LatentSet& data, const std::vector<std::size_t>& items) {
  Mat z(static_cast<Eigen::Index>(items.size()) * data.n_z, data.z.cols());
  for (std::size_t k = 0; k < items.size(); ++k) z.middleRows(static_cast<Eigen::Index>(k) * data.n_z, data.n_z) = data.latent(items[k]);
  return z;
}

}  // namespace

std::vector<double> train_base_denoiser(Denoiser& den, const LatentSet& data, const BaseTrainConfig& config,
                                        const EpochLogger& log) {
  if (data.size() == 0) throw ConfigError("train_base_denoiser: empty dataset");
  Rng rng(config.seed);
  AdamW opt(den.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> curve;
  const auto& sched = den.schedule();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(cosine_lr(config.lr, epoch, config.epochs));
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      const Mat z0 = gather_latents(data, items);
      std::vector<int> ts;
      CondBatch cond;
      for (auto i : items) {
        ts.push_back(rng.uniform_int(1, sched.T));
        cond.texts.push_back(data.texts[i]);
        cond.null.push_back(rng.bernoulli(config.p_null) ? 1 : 0);
      }
      const Mat eps = rng.normal_matrix(z0.rows(), z0.cols());
      const Mat zt = q_sample(z0, ts, data.n_z, eps, sched);
      Var loss = mse(den.forward(ad::constant(zt), ts, cond), ad::constant(eps));
      ad::backward(loss);
      opt.step();
      sum += loss.scalar() * double(items.size());
    }
    curve.push_back(sum / double(order.size()));
    if (!std::isfinite(curve.back())) throw NumericError("train_base_denoiser: non-finite loss");
    if (log) log({{"epoch", epoch}, {"loss", curve.back()}, {"lr", opt.config().lr}});
  }
  return curve;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"lambda_pr", lambda_pr},
          {"mask_fraction", mask_fraction},
          {"mask_mode", mask_mode},
          {"p_null", p_null},
          {"style_ref", style_ref},
          {"seed", seed},
          {"variant", to_string(variant)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lambda_pr = j.value("lambda_pr", c.lambda_pr);
  c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
  c.mask_mode = j.value("mask_mode", c.mask_mode);
  c.p_null = j.value("p_null", c.p_null);
  c.style_ref = j.value("style_ref", c.style_ref);
  c.seed = j.value("seed", c.seed);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (c.p_null < 0 || c.p_null > 1 || c.mask_fraction < 0 || c.mask_fraction > 1) {
    throw ConfigError("train config: probabilities must lie in [0, 1]");
  }
  if (c.lambda_pr < 0) throw ConfigError("train config: lambda_pr must be >= 0");
  if (c.mask_mode != "random" && c.mask_mode != "contiguous") throw ConfigError("train config: mask_mode must be random or contiguous");
  if (c.style_ref != "same_label" && c.style_ref != "self") throw ConfigError("train config: style_ref must be same_label or self");
  if (c.epochs < 0 || c.batch < 1 || c.lr < 0) throw ConfigError("train config: invalid epochs, batch or lr");
  return c;
}

TrainBatch make_batch(const LatentSet& data, const std::vector<std::size_t>& items,
                      const std::vector<std::size_t>& refs, const NoiseSchedule& schedule, Rng& rng) {
  if (items.empty() || items.size() != refs.size()) throw ConfigError("make_batch: items and refs must be non-empty and aligned");
  TrainBatch b;
  b.z0 = gather_latents(data, items);
  for (auto i : items) {
    b.ts.push_back(rng.uniform_int(1, schedule.T));
    b.cond.texts.push_back(data.texts[i]);
    b.cond.null.push_back(0);
  }
  b.eps = rng.normal_matrix(b.z0.rows(), b.z0.cols());
  b.frames = data.motions[refs[0]].rows();
  b.style_motion.resize(static_cast<Eigen::Index>(refs.size()) * b.frames, data.motions[refs[0]].cols());
  for (std::size_t k = 0; k < refs.size(); ++k) {
    b.style_motion.middleRows(static_cast<Eigen::Index>(k) * b.frames, b.frames) = data.motions[refs[k]];
  }
  b.frame_mask.assign(static_cast<std::size_t>(b.style_motion.rows()), 0);
  return b;
}

void condition_dropout(TrainBatch& batch, Rng& rng, const TrainConfig& config) {
  for (auto& n : batch.cond.null) n = rng.bernoulli(config.p_null) ? 1 : 0;
  const auto frames = static_cast<int>(batch.frames);
  const int n_mask = static_cast<int>(std::lround(config.mask_fraction * frames));
  std::fill(batch.frame_mask.begin(), batch.frame_mask.end(), 0);
  if (n_mask == 0) return;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t base = b * static_cast<std::size_t>(frames);
    if (config.mask_mode == "contiguous") {
      const int start = rng.uniform_int(0, frames - n_mask);
      for (int f = start; f < start + n_mask; ++f) batch.frame_mask[base + static_cast<std::size_t>(f)] = 1;
    } else {
      std::vector<int> idx(static_cast<std::size_t>(frames));
      for (int f = 0; f < frames; ++f) idx[static_cast<std::size_t>(f)] = f;
      rng.shuffle(idx);
      for (int k = 0; k < n_mask; ++k) batch.frame_mask[base + static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = 1;
    }
  }
}

Var denoising_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& batch) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const Mat zt = q_sample(batch.z0, batch.ts, den.config().n_z, batch.eps, den.schedule());
  Var s = enc.encode(ad::constant(batch.style_motion), b, batch.frames, &batch.frame_mask);
  Var eps_hat = predict_eps(den, &net, ad::constant(zt), batch.ts, batch.cond, &s);
  return mse(eps_hat, ad::constant(batch.eps));
}

Var std_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& style_batch) {
  return denoising_loss(den, net, enc, style_batch);
}

Var prior_loss(const Denoiser& den, const StyleNet& net, const StyleMotionEncoder& enc, const TrainBatch& content_batch) {
  return denoising_loss(den, net, enc, content_batch);
}

Var total_loss(const Var& std_l, const Var& pr_l, double lambda_pr) {
  if (lambda_pr < 0) throw ConfigError("total_loss: lambda_pr must be >= 0");
  return ad::add(std_l, ad::scale(pr_l, lambda_pr));
}

StyleTrainResult train_style_network(const Denoiser& den, StyleNet& net, StyleMotionEncoder& enc,
                                     const LatentSet& style_data, const LatentSet& content_data,
                                     const TrainConfig& config, const EpochLogger& log) {
  if (style_data.size() == 0 || content_data.size() == 0) throw ConfigError("train_style_network: empty dataset");
  if (!den.params().frozen()) throw ConfigError("train_style_network: the base denoiser must be frozen");
  if (net.config().variant != config.variant) throw ConfigError("train_style_network: variant differs from the style network");
  StyleTrainResult result;
  result.base_hash_before = den.params().hash();

  std::map<int, std::vector<std::size_t>> by_style;
  for (std::size_t i = 0; i < style_data.size(); ++i) by_style[style_data.style[i]].push_back(i);

  Rng rng(config.seed);
  Rng batch_rng = rng.fork(1);
  Rng drop_rng = rng.fork(2);
  AdamW opt_net(net.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  AdamW opt_enc(enc.params(), {config.lr, 0.9, 0.999, 1e-8, 0.0, 1.0});
  std::vector<std::size_t> order(style_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bsz = static_cast<std::size_t>(config.batch);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.lr, epoch, config.epochs);
    opt_net.set_lr(lr);
    opt_enc.set_lr(lr);
    batch_rng.shuffle(order);
    double s_sum = 0.0, p_sum = 0.0, t_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> refs;
      for (auto i : items) {
        if (config.style_ref == "self") {
          refs.push_back(i);
        } else {
          const auto& pool = by_style.at(style_data.style[i]);
          refs.push_back(pool[static_cast<std::size_t>(batch_rng.uniform_int(0, int(pool.size()) - 1))]);
        }
      }
      TrainBatch sb = make_batch(style_data, items, refs, den.schedule(), batch_rng);
      condition_dropout(sb, drop_rng, config);

      std::vector<std::size_t> citems;
      for (std::size_t k = 0; k < items.size(); ++k) {
        citems.push_back(static_cast<std::size_t>(batch_rng.uniform_int(0, int(content_data.size()) - 1)));
      }
      TrainBatch cb = make_batch(content_data, citems, citems, den.schedule(), batch_rng);
      condition_dropout(cb, drop_rng, config);

      Var ls = std_loss(den, net, enc, sb);
      Var lp = config.lambda_pr > 0.0 ? prior_loss(den, net, enc, cb) : ad::constant(Mat::Zero(1, 1));
      Var lt = total_loss(ls, lp, config.lambda_pr);
      ad::backward(lt);
      opt_net.step();
      opt_enc.step();
      s_sum += ls.scalar();
      p_sum += lp.scalar();
      t_sum += lt.scalar();
      ++steps;
    }
    result.std_curve.push_back(s_sum / steps);
    result.pr_curve.push_back(p_sum / steps);
    result.total_curve.push_back(t_sum / steps);
    if (!std::isfinite(result.total_curve.back())) throw NumericError("train_style_network: non-finite loss");
    if (log) {
      log({{"epoch", epoch},
           {"std_loss", result.std_curve.back()},
           {"pr_loss", result.pr_curve.back()},
           {"total", result.total_curve.back()},
           {"lr", lr}});
    }
  }
  result.base_hash_after = den.params().hash();
  if (result.base_hash_after != result.base_hash_before) {
    throw NumericError("train_style_network: base denoiser parameters changed during style training");
  }
  return result;
}

void save_style_network(const std::filesystem::path& path, const StyleNet& net, const StyleMotionEncoder& enc,
                        const nlohmann::json& meta) {
  nlohmann::json config = {{"style_net", net.config().to_json()}, {"encoder", enc.config().to_json()}};
  write_checkpoint(path, "stylenet-ckpt", config, meta, {&net.params(), &enc.params()});
}

StyleNetBundle load_style_network(const std::filesystem::path& path, const Denoiser& base, const Variant* expected) {
  const Checkpoint ckpt = read_checkpoint(path, "stylenet-ckpt");
  StyleNetConfig cfg = StyleNetConfig::from_json(ckpt.config().at("style_net"));
  if (expected != nullptr && cfg.variant != *expected) {
    throw ConfigError(path.string() + ": checkpoint holds variant " + to_string(cfg.variant) + ", expected " +
                      to_string(*expected));
  }
  cfg.init_from_base = false;
  StyleNetBundle out{StyleNet(cfg, base, 0), StyleMotionEncoder(StyleEncoderConfig::from_json(ckpt.config().at("encoder")), 0)};
  load_params(out.net.params(), ckpt);
  load_params(out.encoder.params(), ckpt);
  return out;
}

}  // namespace mulsmo
