#include "mulsmo/autodiff.hpp"
#include "mulsmo/nn.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace mulsmo;
using mulsmo::test::expect_grad_matches;

namespace {

Mat randm(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(r, c);
}

}  // namespace

TEST(Autodiff, ElementwiseGradients) {
  const Mat x = randm(3, 4, 1);
  expect_grad_matches([](const Var& v) { return ad::silu(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::tanh(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::exp(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::square(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::softplus(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::log(ad::add_scalar(ad::square(v), 1.0)); }, x);
  expect_grad_matches([](const Var& v) { return ad::sqrt(ad::add_scalar(ad::square(v), 0.5)); }, x);
}

TEST(Autodiff, AbsGradientAwayFromZero) {
  Mat x = randm(2, 5, 2);
  x.array() += x.array().sign() * 0.1;
  expect_grad_matches([](const Var& v) { return ad::abs(v); }, x);
}

TEST(Autodiff, MatmulAndBroadcastGradients) {
  const Mat b = randm(4, 3, 3);
  const Mat row = randm(1, 4, 4);
  const Mat col = randm(5, 1, 5);
  const Mat x = randm(5, 4, 6);
  expect_grad_matches([&](const Var& v) { return ad::matmul(v, ad::constant(b)); }, x);
  expect_grad_matches([&](const Var& v) { return ad::matmul(ad::transpose(v), v); }, x);
  expect_grad_matches([&](const Var& v) { return ad::add_row(v, ad::constant(row)); }, x);
  expect_grad_matches([&](const Var& v) { return ad::mul_row(v, ad::constant(row)); }, x);
  expect_grad_matches([&](const Var& v) { return ad::mul_col(v, ad::constant(col)); }, x);
  // Gradient into the broadcast operand itself.
  expect_grad_matches([&](const Var& r) { return ad::mul_row(ad::constant(x), r); }, row);
  expect_grad_matches([&](const Var& c) { return ad::add_col(ad::constant(x), c); }, col);
}

TEST(Autodiff, ReductionGradients) {
  const Mat x = randm(4, 3, 7);
  expect_grad_matches([](const Var& v) { return ad::mean(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::row_sum(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::col_mean(v); }, x);
}

TEST(Autodiff, NormalisationGradients) {
  const Mat x = randm(4, 6, 8);
  const Mat gain = randm(1, 6, 9);
  const Mat bias = randm(1, 6, 10);
  expect_grad_matches([&](const Var& v) { return ad::layer_norm(v, ad::constant(gain), ad::constant(bias)); }, x,
                      1e-5);
  expect_grad_matches([&](const Var& g) { return ad::layer_norm(ad::constant(x), g, ad::constant(bias)); }, gain);
  expect_grad_matches([](const Var& v) { return ad::log_softmax_rows(v); }, x);
  expect_grad_matches([](const Var& v) { return ad::l2_normalize_rows(v); }, x);
}

TEST(Autodiff, ShapeGradients) {
  const Mat x = randm(6, 4, 11);
  expect_grad_matches([](const Var& v) { return ad::slice_rows(v, 1, 3); }, x);
  expect_grad_matches([](const Var& v) { return ad::slice_cols(v, 2, 2); }, x);
  expect_grad_matches([](const Var& v) { return ad::concat_rows({v, ad::scale(v, 2.0)}); }, x);
  expect_grad_matches([](const Var& v) { return ad::concat_cols({v, ad::neg(v)}); }, x);
  expect_grad_matches([](const Var& v) { return ad::gather_rows(v, {0, 0, 5, 2}); }, x);
  expect_grad_matches([](const Var& v) { return ad::reshape(v, 3, 8); }, x);
}

TEST(Autodiff, ReshapeIsRowMajor) {
  Mat x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const Mat r = ad::reshape(ad::constant(x), 3, 2).value();
  Mat expected(3, 2);
  expected << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(r, expected);
}

TEST(Autodiff, TokenOpGradients) {
  // Two samples of three tokens each.
  const Mat x = randm(6, 4, 12);
  const Mat y = randm(4, 4, 13);  // two samples of two tokens
  const Mat per_token = randm(3, 4, 14);
  expect_grad_matches([&](const Var& v) { return ad::concat_tokens(v, 3, ad::constant(y), 2); }, x);
  expect_grad_matches([](const Var& v) { return ad::slice_tokens(v, 3, 1, 2); }, x);
  expect_grad_matches([](const Var& v) { return ad::mean_tokens(v, 3); }, x);
  expect_grad_matches([](const Var& v) { return ad::repeat_tokens(v, 3); }, randm(2, 4, 15));
  expect_grad_matches([&](const Var& v) { return ad::add_tokenwise(v, ad::constant(per_token), 3); }, x);
  expect_grad_matches([](const Var& v) { return ad::temporal_unfold(v, 3, 3); }, x);
}

TEST(Autodiff, ConcatTokensInterleavesPerSample) {
  Mat a(2, 1), b(4, 1);
  a << 1, 2;
  b << 10, 11, 20, 21;
  const Mat c = ad::concat_tokens(ad::constant(a), 1, ad::constant(b), 2).value();
  Mat expected(6, 1);
  expected << 1, 10, 11, 2, 20, 21;
  EXPECT_EQ(c, expected);
}

TEST(Autodiff, AttentionGradients) {
  const Mat q = randm(6, 4, 16);
  const Mat k = randm(6, 4, 17);
  const Mat v = randm(6, 4, 18);
  expect_grad_matches([&](const Var& x) { return ad::attention(x, ad::constant(k), ad::constant(v), 3, 2); }, q);
  expect_grad_matches([&](const Var& x) { return ad::attention(ad::constant(q), x, ad::constant(v), 3, 2); }, k);
  expect_grad_matches([&](const Var& x) { return ad::attention(ad::constant(q), ad::constant(k), x, 3, 2); }, v);
}

TEST(Autodiff, AttentionStaysWithinSample) {
  // Changing sample 1 must not affect sample 0's output.
  Mat q = randm(4, 2, 19);
  Mat k = randm(4, 2, 20);
  Mat v = randm(4, 2, 21);
  const Mat before = ad::attention(ad::constant(q), ad::constant(k), ad::constant(v), 2, 1).value();
  v.bottomRows(2).setConstant(100.0);
  k.bottomRows(2).setConstant(-3.0);
  const Mat after = ad::attention(ad::constant(q), ad::constant(k), ad::constant(v), 2, 1).value();
  EXPECT_EQ(before.topRows(2), after.topRows(2));
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  Var x = ad::leaf(Mat::Constant(1, 1, 3.0));
  Var y = ad::mul(x, x);  // x used twice
  Var z = ad::add(y, x);
  ad::backward(ad::sum(z));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Var c = ad::constant(Mat::Ones(2, 2));
  Var x = ad::leaf(Mat::Ones(2, 2));
  ad::backward(ad::sum(ad::mul(c, x)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_TRUE(c.grad().isZero());
  EXPECT_EQ(x.grad(), Mat::Ones(2, 2));
}

TEST(Nn, TransformerBlockGradient) {
  Rng rng(3);
  ParamStore store;
  TransformerBlock block(store, "b", 4, 2, 8, rng);
  const Mat x = randm(6, 4, 22);
  expect_grad_matches([&](const Var& v) { return block(v, 3); }, x, 1e-5);
}

TEST(Nn, FrozenStoreBlocksGradients) {
  Rng rng(4);
  ParamStore store;
  Linear lin(store, "l", 3, 2, rng);
  store.set_frozen(true);
  ad::backward(ad::sum(lin(ad::constant(Mat::Ones(2, 3)))));
  EXPECT_FALSE(lin.weight.requires_grad());
  EXPECT_TRUE(lin.weight.grad().isZero());
}

TEST(Nn, ZeroInitLinearOutputsZero) {
  Rng rng(5);
  ParamStore store;
  Linear lin(store, "z", 5, 4, rng, true);
  EXPECT_EQ(lin(ad::constant(randm(3, 5, 23))).value(), Mat::Zero(3, 4));
}

TEST(Nn, AdamWReducesQuadratic) {
  ParamStore store;
  Var w = store.add("w", Mat::Constant(1, 3, 5.0));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  for (int i = 0; i < 300; ++i) {
    store.zero_grad();
    ad::backward(ad::sum(ad::square(w)));
    opt.step();
  }
  EXPECT_LT(w.value().cwiseAbs().maxCoeff(), 0.05);
}

TEST(Nn, ParamHashTracksValues) {
  Rng rng(6);
  ParamStore store;
  Linear lin(store, "l", 3, 2, rng);
  const auto h0 = store.hash();
  EXPECT_EQ(h0, store.hash());
  lin.weight.mutable_value()(0, 0) += 1e-12;
  EXPECT_NE(h0, store.hash());
}

TEST(Nn, RngForksAreIndependentOfParentState) {
  Rng a(42);
  Rng b(42);
  b.normal();
  b.normal();
  Rng fa = a.fork(7);
  Rng fb = b.fork(7);
  EXPECT_EQ(fa.normal_matrix(2, 2), fb.normal_matrix(2, 2));
  EXPECT_NE(a.fork(7).normal(), a.fork(8).normal());
}
