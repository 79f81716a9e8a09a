#pragma once

#include "mulsmo/denoiser.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mulsmo {

// a: style-to-content only; b: bidirectional encoder fusion; c: b plus a
// middle-block link; d: b plus links into every decoder block.
enum class Variant { a, b, c, d };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

// pre_block fuses block inputs and then runs the block on the fused features;
// literal fuses the candidate block outputs instead.
enum class FusionPlacement { pre_block, literal };
FusionPlacement parse_placement(const std::string& s);
std::string to_string(FusionPlacement p);

struct StyleNetConfig {
  Variant variant = Variant::b;
  FusionPlacement placement = FusionPlacement::pre_block;
  int d_f = 16;             // style embedding width
  bool init_from_base = true;  // style blocks start as copies of the generation encoder blocks

  nlohmann::json to_json() const;
  static StyleNetConfig from_json(const nlohmann::json& j);
};

// Zero-initialised affine links between the two streams.
struct FusionStack {
  Variant variant = Variant::b;
  std::vector<Linear> s2c, c2s;  // one pair per encoder block
  std::optional<Linear> mid;      // variant c
  std::vector<Linear> dec;        // variant d, one per decoder block
};

// F_s2c = L(F_s_prev) + F_c_prev.
Var fuse_s2c(const Var& f_s_prev, const Var& f_c_prev, const Linear& l);
// F_c2s = L(F_c_prev) + F_s_prev.
Var fuse_c2s(const Var& f_c_prev, const Var& f_s_prev, const Linear& l);

class StyleNet {
 public:
  StyleNet(const StyleNetConfig& config, const Denoiser& base, std::uint64_t seed);

  const StyleNetConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  FusionStack& fusion() { return fusion_; }
  const FusionStack& fusion() const { return fusion_; }
  const TransformerBlock& block(int i) const { return blocks_.at(static_cast<std::size_t>(i)); }
  int block_count() const { return static_cast<int>(blocks_.size()); }

  // Style tokens added to every input token of the style stream: B x d_f -> B x W.
  Var embed_style(const Var& style) const;

 private:
  StyleNetConfig config_;
  ParamStore params_;
  Linear style_in_;
  std::vector<TransformerBlock> blocks_;
  FusionStack fusion_;
};

struct DualTrace {
  std::vector<Var> content;  // F_c_i after each encoder block
  std::vector<Var> style;    // F_s_i after each style block
};

// eps prediction with the style branch attached. style is B x d_f; a null
// style or style net reduces to the content-only network.
Var predict_eps(const Denoiser& den, const StyleNet* net, const Var& z_t, const std::vector<int>& ts,
                const CondBatch& cond, const Var* style, DualTrace* trace = nullptr);

struct DualEncoderOutput {
  Var content_out;
  Var style_out;
  DualTrace trace;
};

// Runs the generation network with the style branch and returns the encoder-side features.
DualEncoderOutput run_dual_encoders(const Denoiser& den, const StyleNet& net, const Var& z_t,
                                    const std::vector<int>& ts, const CondBatch& cond, const Var& style);

}  // namespace mulsmo
