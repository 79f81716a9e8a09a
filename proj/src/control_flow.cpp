#include "mulsmo/control_flow.hpp"

namespace mulsmo {

Variant parse_variant(const std::string& s) {
  if (s == "a") return Variant::a;
  if (s == "b") return Variant::b;
  if (s == "c") return Variant::c;
  if (s == "d") return Variant::d;
  throw ConfigError("unknown variant '" + s + "' (expected a, b, c or d)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::a: return "a";
    case Variant::b: return "b";
    case Variant::c: return "c";
    case Variant::d: return "d";
  }
  return "?";
}

FusionPlacement parse_placement(const std::string& s) {
  if (s == "pre_block") return FusionPlacement::pre_block;
  if (s == "literal") return FusionPlacement::literal;
  throw ConfigError("unknown fusion_placement '" + s + "' (expected pre_block or literal)");
}

std::string to_string(FusionPlacement p) { return p == FusionPlacement::pre_block ? "pre_block" : "literal"; }

nlohmann::json StyleNetConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"fusion_placement", to_string(placement)},
          {"d_f", d_f},
          {"init_from_base", init_from_base}};
}

StyleNetConfig StyleNetConfig::from_json(const nlohmann::json& j) {
  StyleNetConfig c;
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("fusion_placement")) c.placement = parse_placement(j.at("fusion_placement").get<std::string>());
  c.d_f = j.value("d_f", c.d_f);
  c.init_from_base = j.value("init_from_base", c.init_from_base);
  return c;
}

Var fuse_s2c(const Var& f_s_prev, const Var& f_c_prev, const Linear& l) {
  if (f_s_prev.rows() != f_c_prev.rows() || f_s_prev.cols() != f_c_prev.cols()) {
    throw ConfigError("fuse_s2c: feature shapes differ");
  }
  return ad::add(l(f_s_prev), f_c_prev);
}

Var fuse_c2s(const Var& f_c_prev, const Var& f_s_prev, const Linear& l) {
  if (f_s_prev.rows() != f_c_prev.rows() || f_s_prev.cols() != f_c_prev.cols()) {
    throw ConfigError("fuse_c2s: feature shapes differ");
  }
  return ad::add(l(f_c_prev), f_s_prev);
}

namespace {

std::vector<Var> block_vars(const TransformerBlock& b) {
  return {b.ln1.gain, b.ln1.bias, b.ln2.gain, b.ln2.bias, b.q.weight,   b.q.bias,   b.k.weight,   b.k.bias,
          b.v.weight, b.v.bias,   b.o.weight, b.o.bias,   b.fc1.weight, b.fc1.bias, b.fc2.weight, b.fc2.bias};
}

class DualHook : public BlockHook {
 public:
  DualHook(const StyleNet& net, Var style_tokens, DualTrace* trace)
      : net_(net), style_tokens_(std::move(style_tokens)), trace_(trace) {}

  void begin(const Var& input_tokens, const Var& time_tokens) override {
    time_ = time_tokens;
    tokens_ = input_tokens.rows() / style_tokens_.rows();
    h_s_ = ad::add(input_tokens, ad::repeat_tokens(style_tokens_, tokens_));
  }

  Var encoder_input(int i, const Var& h_c) override {
    const auto& f = net_.fusion();
    const auto k = static_cast<std::size_t>(i);
    h_s_ = ad::add(h_s_, time_);
    if (net_.config().placement == FusionPlacement::literal) return h_c;
    Var in_c = fuse_s2c(h_s_, h_c, f.s2c[k]);
    Var in_s = f.variant == Variant::a ? h_s_ : fuse_c2s(h_c, h_s_, f.c2s[k]);
    h_s_ = net_.block(i)(in_s, tokens_);
    if (trace_) trace_->style.push_back(h_s_);
    return in_c;
  }

  Var encoder_output(int i, const Var& cand_c) override {
    if (net_.config().placement == FusionPlacement::pre_block) {
      if (trace_) trace_->content.push_back(cand_c);
      return cand_c;
    }
    const auto& f = net_.fusion();
    const auto k = static_cast<std::size_t>(i);
    Var cand_s = net_.block(i)(h_s_, tokens_);
    Var out_c = fuse_s2c(cand_s, cand_c, f.s2c[k]);
    h_s_ = f.variant == Variant::a ? cand_s : fuse_c2s(cand_c, cand_s, f.c2s[k]);
    if (trace_) {
      trace_->content.push_back(out_c);
      trace_->style.push_back(h_s_);
    }
    return out_c;
  }

  Var middle_input(const Var& h) override {
    const auto& f = net_.fusion();
    if (f.variant == Variant::c) return fuse_s2c(h_s_, h, *f.mid);
    return h;
  }

  Var decoder_input(int i, const Var& h) override {
    const auto& f = net_.fusion();
    if (f.variant == Variant::d) return fuse_s2c(h_s_, h, f.dec[static_cast<std::size_t>(i)]);
    return h;
  }

  const Var& style_state() const { return h_s_; }

 private:
  const StyleNet& net_;
  Var style_tokens_;
  DualTrace* trace_;
  Var time_, h_s_;
  Eigen::Index tokens_ = 1;
};

}  // namespace

StyleNet::StyleNet(const StyleNetConfig& config, const Denoiser& base, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  const auto& bc = base.config();
  const Eigen::Index w = bc.width;
  style_in_ = Linear(params_, "style_in", config.d_f, w, rng);
  for (int i = 0; i < bc.blocks; ++i) {
    blocks_.emplace_back(params_, "style_block" + std::to_string(i), w, bc.heads, 2 * w, rng);
    if (config.init_from_base) {
      auto dst = block_vars(blocks_.back());
      auto src = block_vars(base.encoder_block(i));
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k].mutable_value() = src[k].value();
    }
  }
  fusion_.variant = config.variant;
  for (int i = 0; i < bc.blocks; ++i) {
    fusion_.s2c.emplace_back(params_, "s2c" + std::to_string(i), w, w, rng, true);
    fusion_.c2s.emplace_back(params_, "c2s" + std::to_string(i), w, w, rng, true);
  }
  if (config.variant == Variant::c) fusion_.mid = Linear(params_, "s2c_mid", w, w, rng, true);
  if (config.variant == Variant::d) {
    for (int i = 0; i < bc.blocks; ++i) fusion_.dec.emplace_back(params_, "s2c_dec" + std::to_string(i), w, w, rng, true);
  }
}

Var StyleNet::embed_style(const Var& style) const {
  if (style.cols() != config_.d_f) throw ConfigError("style net: style embedding width mismatch");
  return style_in_(ad::l2_normalize_rows(style));
}

Var predict_eps(const Denoiser& den, const StyleNet* net, const Var& z_t, const std::vector<int>& ts,
                const CondBatch& cond, const Var* style, DualTrace* trace) {
  if (net == nullptr || style == nullptr) return den.forward(z_t, ts, cond);
  if (style->rows() != static_cast<Eigen::Index>(ts.size())) throw ConfigError("predict_eps: style batch mismatch");
  DualHook hook(*net, net->embed_style(*style), trace);
  return den.forward(z_t, ts, cond, &hook);
}

DualEncoderOutput run_dual_encoders(const Denoiser& den, const StyleNet& net, const Var& z_t,
                                    const std::vector<int>& ts, const CondBatch& cond, const Var& style) {
  DualEncoderOutput out;
  DualHook hook(net, net.embed_style(style), &out.trace);
  den.forward(z_t, ts, cond, &hook);
  out.content_out = out.trace.content.back();
  out.style_out = hook.style_state();
  return out;
}

}  // namespace mulsmo
