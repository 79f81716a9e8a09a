#include "mulsmo/control_flow.hpp"

#include <gtest/gtest.h>

using namespace mulsmo;

namespace {

DenoiserConfig tiny_den() {
  DenoiserConfig c;
  c.n_z = 2;
  c.d_z = 4;
  c.width = 16;
  c.heads = 2;
  c.blocks = 2;
  c.text_buckets = 32;
  c.T = 100;
  return c;
}

StyleNetConfig net_config(Variant v, FusionPlacement p = FusionPlacement::pre_block) {
  StyleNetConfig c;
  c.variant = v;
  c.placement = p;
  c.d_f = 8;
  return c;
}

struct Inputs {
  Mat z;
  std::vector<int> ts;
  CondBatch cond;
  Mat style;
};

Inputs random_inputs(std::uint64_t seed, int batch = 3) {
  Rng rng(seed);
  Inputs in;
  in.z = rng.normal_matrix(2 * batch, 4);
  for (int b = 0; b < batch; ++b) {
    in.ts.push_back(rng.uniform_int(1, 100));
    in.cond.texts.push_back(b % 2 ? "a person runs" : "someone jumps");
    in.cond.null.push_back(static_cast<char>(rng.bernoulli(0.3)));
  }
  in.style = rng.normal_matrix(batch, 8);
  return in;
}

void perturb(FusionStack& f, double v) {
  for (auto* group : {&f.s2c, &f.c2s, &f.dec}) {
    for (auto& l : *group) l.weight.mutable_value().setConstant(v);
  }
  if (f.mid) f.mid->weight.mutable_value().setConstant(v);
}

}  // namespace

TEST(ControlFlow, ParseVariant) {
  EXPECT_EQ(parse_variant("c"), Variant::c);
  EXPECT_EQ(to_string(Variant::d), "d");
  EXPECT_THROW(parse_variant("e"), ConfigError);
  EXPECT_EQ(parse_placement("literal"), FusionPlacement::literal);
}

TEST(ControlFlow, FusionEquations) {
  Rng rng(1);
  ParamStore store;
  Linear l(store, "l", 3, 3, rng);
  const Mat fs = rng.normal_matrix(2, 3);
  const Mat fc = rng.normal_matrix(2, 3);
  const Mat lin_s = (fs * l.weight.value()).rowwise() + RowVecD(l.bias.value().row(0));
  const Mat lin_c = (fc * l.weight.value()).rowwise() + RowVecD(l.bias.value().row(0));
  EXPECT_LT((fuse_s2c(ad::constant(fs), ad::constant(fc), l).value() - (lin_s + fc)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fuse_c2s(ad::constant(fc), ad::constant(fs), l).value() - (lin_c + fs)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ControlFlow, ZeroInitMatchesBaseExactly) {
  const Denoiser den(tiny_den(), 2);
  for (Variant v : {Variant::a, Variant::b, Variant::c, Variant::d}) {
    for (FusionPlacement p : {FusionPlacement::pre_block, FusionPlacement::literal}) {
      const StyleNet net(net_config(v, p), den, 3);
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto in = random_inputs(seed);
        const Var style = ad::constant(in.style);
        const Mat base = den.forward(ad::constant(in.z), in.ts, in.cond).value();
        const Mat styled = predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &style).value();
        ASSERT_EQ((base - styled).cwiseAbs().maxCoeff(), 0.0) << to_string(v) << " " << to_string(p);
      }
    }
  }
}

TEST(ControlFlow, NonZeroLinksChangeOutput) {
  const Denoiser den(tiny_den(), 4);
  const auto in = random_inputs(5);
  const Var style = ad::constant(in.style);
  const Mat base = den.forward(ad::constant(in.z), in.ts, in.cond).value();
  for (Variant v : {Variant::a, Variant::b, Variant::c, Variant::d}) {
    StyleNet net(net_config(v), den, 6);
    perturb(net.fusion(), 0.05);
    const Mat styled = predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &style).value();
    EXPECT_GT((base - styled).cwiseAbs().maxCoeff(), 1e-6) << to_string(v);
  }
}

TEST(ControlFlow, VariantLinkCounts) {
  const Denoiser den(tiny_den(), 7);
  const StyleNet a(net_config(Variant::a), den, 1);
  const StyleNet c(net_config(Variant::c), den, 1);
  const StyleNet d(net_config(Variant::d), den, 1);
  EXPECT_EQ(a.fusion().s2c.size(), 2u);
  EXPECT_FALSE(a.fusion().mid.has_value());
  EXPECT_TRUE(c.fusion().mid.has_value());
  EXPECT_EQ(d.fusion().dec.size(), 2u);
}

TEST(ControlFlow, VariantAIgnoresContentToStyleLinks) {
  // In variant a the style stream never reads the content stream.
  const Denoiser den(tiny_den(), 8);
  StyleNet net(net_config(Variant::a), den, 9);
  const auto in = random_inputs(10);
  const Var style = ad::constant(in.style);
  const Mat before = predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &style).value();
  for (auto& l : net.fusion().c2s) l.weight.mutable_value().setConstant(0.3);
  const Mat after = predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &style).value();
  EXPECT_EQ(before, after);
}

TEST(ControlFlow, StyleBlocksStartFromBase) {
  const Denoiser den(tiny_den(), 11);
  const StyleNet net(net_config(Variant::b), den, 12);
  EXPECT_EQ(net.block(1).fc1.weight.value(), den.encoder_block(1).fc1.weight.value());
  auto cfg = net_config(Variant::b);
  cfg.init_from_base = false;
  const StyleNet fresh(cfg, den, 12);
  EXPECT_NE(fresh.block(1).fc1.weight.value(), den.encoder_block(1).fc1.weight.value());
}

TEST(ControlFlow, ZeroLinksStillReceiveGradient) {
  const Denoiser den(tiny_den(), 13);
  StyleNet net(net_config(Variant::b), den, 14);
  const auto in = random_inputs(15);
  const Var style = ad::constant(in.style);
  ad::backward(ad::sum(ad::square(predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &style))));
  EXPECT_GT(net.fusion().s2c[0].weight.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(ControlFlow, TraceRecordsEveryBlock) {
  const Denoiser den(tiny_den(), 16);
  const StyleNet net(net_config(Variant::b), den, 17);
  const auto in = random_inputs(18);
  const auto out = run_dual_encoders(den, net, ad::constant(in.z), in.ts, in.cond, ad::constant(in.style));
  EXPECT_EQ(out.trace.content.size(), 2u);
  EXPECT_EQ(out.trace.style.size(), 2u);
  EXPECT_EQ(out.style_out.rows(), 3 * den.tokens());
}

TEST(ControlFlow, StyleWidthMismatchThrows) {
  const Denoiser den(tiny_den(), 19);
  const StyleNet net(net_config(Variant::b), den, 20);
  const auto in = random_inputs(21);
  const Var bad = ad::constant(Mat::Ones(3, 5));
  EXPECT_THROW(predict_eps(den, &net, ad::constant(in.z), in.ts, in.cond, &bad), ConfigError);
}
