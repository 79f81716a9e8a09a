#include "mulsmo/denoiser.hpp"

#include "mulsmo/checkpoint.hpp"
#include "mulsmo/dataset.hpp"

#include <cmath>

namespace mulsmo {

nlohmann::json DenoiserConfig::to_json() const {
  return {{"n_z", n_z},       {"d_z", d_z}, {"width", width},           {"heads", heads},
          {"blocks", blocks}, {"text_buckets", text_buckets}, {"T", T}, {"beta_start", beta_start},
          {"beta_end", beta_end}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.n_z = j.value("n_z", c.n_z);
  c.d_z = j.value("d_z", c.d_z);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.blocks = j.value("blocks", c.blocks);
  c.text_buckets = j.value("text_buckets", c.text_buckets);
  c.T = j.value("T", c.T);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  if (c.blocks < 1 || c.width % c.heads != 0 || c.text_buckets < 1) throw ConfigError("denoiser config: invalid sizes");
  return c;
}

CondBatch CondBatch::repeat(const std::string& text, std::size_t n) {
  CondBatch c;
  c.texts.assign(n, text);
  c.null.assign(n, 0);
  return c;
}

CondBatch CondBatch::nulls(std::size_t n) {
  CondBatch c;
  c.texts.assign(n, "");
  c.null.assign(n, 1);
  return c;
}

Mat bag_of_words(const std::vector<std::string>& texts, int buckets) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(texts.size()), buckets);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto toks = tokenize(texts[i]);
    for (const auto& tok : toks) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(fnv1a(tok) % static_cast<std::uint64_t>(buckets))) +=
          1.0 / double(toks.size());
    }
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed)
    : config_(config), schedule_(make_schedule(config.T, "linear", config.beta_start, config.beta_end)) {
  Rng rng(seed);
  const Eigen::Index w = config.width;
  time_mlp_ = Mlp(params_, "time", w, w, w, rng);
  text_proj_ = Linear(params_, "text", config.text_buckets, w, rng);
  null_emb_ = params_.add("null", rng.normal_matrix(1, w, 0.1));
  in_proj_ = Linear(params_, "in", config.d_z, w, rng);
  pos_ = params_.add("pos", rng.normal_matrix(1 + config.n_z, w, 0.1));
  for (int i = 0; i < config.blocks; ++i) {
    enc_.emplace_back(params_, "enc" + std::to_string(i), w, config.heads, 2 * w, rng);
  }
  mid_ = TransformerBlock(params_, "mid", w, config.heads, 2 * w, rng);
  for (int i = 0; i < config.blocks; ++i) {
    skip_.emplace_back(params_, "skip" + std::to_string(i), 2 * w, w, rng);
    dec_.emplace_back(params_, "dec" + std::to_string(i), w, config.heads, 2 * w, rng);
  }
  out_norm_ = LayerNorm(params_, "out_norm", w);
  out_proj_ = Linear(params_, "out", w, config.d_z, rng);
}

Var Denoiser::content_embedding(const CondBatch& cond) const {
  const auto b = static_cast<Eigen::Index>(cond.size());
  Mat keep(b, 1), drop(b, 1);
  bool any_text = false, any_null = false;
  for (Eigen::Index i = 0; i < b; ++i) {
    const bool is_null = cond.null[static_cast<std::size_t>(i)] != 0;
    keep(i, 0) = is_null ? 0.0 : 1.0;
    drop(i, 0) = is_null ? 1.0 : 0.0;
    any_text = any_text || !is_null;
    any_null = any_null || is_null;
  }
  Var nulls = ad::matmul(ad::constant(Mat::Ones(b, 1)), null_emb_);
  if (!any_text) return nulls;
  Var text = text_proj_(ad::constant(bag_of_words(cond.texts, config_.text_buckets)));
  if (!any_null) return text;
  return ad::add(ad::mul_col(text, ad::constant(keep)), ad::mul_col(nulls, ad::constant(drop)));
}

Var Denoiser::forward(const Var& z_t, const std::vector<int>& ts, const CondBatch& cond, BlockHook* hook) const {
  const auto b = static_cast<Eigen::Index>(ts.size());
  const Eigen::Index n_z = config_.n_z;
  const Eigen::Index t_tok = tokens();
  if (z_t.rows() != b * n_z || z_t.cols() != config_.d_z) throw ConfigError("denoiser: latent shape mismatch");
  if (cond.size() != ts.size() || cond.null.size() != ts.size()) throw ConfigError("denoiser: condition batch mismatch");
  Eigen::VectorXd tv(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const int t = ts[static_cast<std::size_t>(i)];
    if (t < 1 || t > config_.T) throw ConfigError("denoiser: timestep out of range");
    tv(i) = double(t);
  }
  Var temb = time_mlp_(ad::constant(sinusoidal_embedding(tv, config_.width)));
  Var cond_tok = ad::add(temb, content_embedding(cond));
  Var h = ad::concat_tokens(cond_tok, 1, in_proj_(z_t), n_z);
  h = ad::add_tokenwise(h, pos_, t_tok);
  Var trep = ad::repeat_tokens(temb, t_tok);
  if (hook) hook->begin(h, trep);

  std::vector<Var> skips;
  for (int i = 0; i < config_.blocks; ++i) {
    h = ad::add(h, trep);
    if (hook) h = hook->encoder_input(i, h);
    h = enc_[static_cast<std::size_t>(i)](h, t_tok);
    if (hook) h = hook->encoder_output(i, h);
    skips.push_back(h);
  }
  h = ad::add(h, trep);
  if (hook) h = hook->middle_input(h);
  h = mid_(h, t_tok);
  for (int i = 0; i < config_.blocks; ++i) {
    const auto k = static_cast<std::size_t>(i);
    h = skip_[k](ad::concat_cols({h, skips[skips.size() - 1 - k]}));
    h = ad::add(h, trep);
    if (hook) h = hook->decoder_input(i, h);
    h = dec_[k](h, t_tok);
  }
  return out_proj_(out_norm_(ad::slice_tokens(h, t_tok, 1, n_z)));
}

Mat Denoiser::predict(const Mat& z_t, int t, const CondBatch& cond) const {
  const std::vector<int> ts(cond.size(), t);
  return forward(ad::constant(z_t), ts, cond).value();
}

Mat ddim_invert(const Denoiser& den, const Mat& z0, int steps, const CondBatch& cond, int refine_iters,
                const std::string& spacing) {
  if (steps == 0) return z0;
  const auto& s = den.schedule();
  auto grid = step_grid(s.T, steps, spacing);
  std::vector<int> up(grid.rbegin(), grid.rend());
  Mat z = z0;
  int t_cur = 0;
  for (int t_next : up) {
    const double ab_cur = s.ab(t_cur);
    const double ab_next = s.ab(t_next);
    auto advance = [&](const Mat& eps) {
      const Mat x0 = (z - std::sqrt(1.0 - ab_cur) * eps) / std::sqrt(ab_cur);
      return Mat(std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps);
    };
    Mat z_next = advance(den.predict(z, t_next, cond));
    for (int k = 0; k < refine_iters; ++k) z_next = advance(den.predict(z_next, t_next, cond));
    z = z_next;
    t_cur = t_next;
  }
  return z;
}

Mat ddim_denoise(const Denoiser& den, const Mat& z_T, int steps, const CondBatch& cond, const std::string& spacing) {
  if (steps == 0) return z_T;
  const auto grid = step_grid(den.schedule().T, steps, spacing);
  Mat z = z_T;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const int t = grid[k];
    const int t_prev = k + 1 < grid.size() ? grid[k + 1] : 0;
    z = ddim_step(z, t, t_prev, den.predict(z, t, cond), den.schedule());
  }
  return z;
}

void save_denoiser(const std::filesystem::path& path, const Denoiser& den, const nlohmann::json& meta) {
  write_checkpoint(path, "denoiser-ckpt", den.config().to_json(), meta, {&den.params()});
}

Denoiser load_denoiser(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "denoiser-ckpt");
  Denoiser den(DenoiserConfig::from_json(ckpt.config()), 0);
  load_params(den.params(), ckpt);
  return den;
}

}  // namespace mulsmo
