#include "mulsmo/checkpoint.hpp"
#include "mulsmo/denoiser.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace mulsmo;
namespace fs = std::filesystem;

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

}  // namespace

TEST(Denoiser, OutputShapeAndDeterminism) {
  const Denoiser den(tiny_den(), 1);
  Rng rng(2);
  const Mat z = rng.normal_matrix(3 * 2, 4);
  CondBatch cond{{"a person walks", "x", "y"}, {0, 1, 0}};
  const Var a = den.forward(ad::constant(z), {5, 50, 99}, cond);
  const Var b = den.forward(ad::constant(z), {5, 50, 99}, cond);
  EXPECT_EQ(a.rows(), 6);
  EXPECT_EQ(a.cols(), 4);
  EXPECT_EQ(a.value(), b.value());
}

TEST(Denoiser, SamplesInBatchAreIndependent) {
  const Denoiser den(tiny_den(), 3);
  Rng rng(4);
  const Mat z = rng.normal_matrix(4, 4);
  CondBatch two{{"a person runs", "someone jumps"}, {0, 0}};
  const Mat both = den.forward(ad::constant(z), {10, 70}, two).value();
  CondBatch one{{"someone jumps"}, {0}};
  const Mat single = den.forward(ad::constant(Mat(z.bottomRows(2))), {70}, one).value();
  EXPECT_LT((both.bottomRows(2) - single).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Denoiser, NullConditionIgnoresText) {
  const Denoiser den(tiny_den(), 5);
  Rng rng(6);
  const Mat z = rng.normal_matrix(2, 4);
  const Mat a = den.predict(z, 40, CondBatch{{"walk"}, {1}});
  const Mat b = den.predict(z, 40, CondBatch{{"jump"}, {1}});
  const Mat c = den.predict(z, 40, CondBatch{{"jump"}, {0}});
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Denoiser, BagOfWordsIsNormalisedMean) {
  const Mat f = bag_of_words({"walk walk", "", "run fast"}, 16);
  EXPECT_NEAR(f.row(0).sum(), 1.0, 1e-12);
  EXPECT_EQ(f.row(0).maxCoeff(), 1.0);
  EXPECT_EQ(f.row(1).sum(), 0.0);
  EXPECT_NEAR(f.row(2).sum(), 1.0, 1e-12);
}

TEST(Denoiser, CheckpointRoundTrip) {
  const fs::path p = fs::temp_directory_path() / "mulsmo_den_test.ckpt";
  const Denoiser den(tiny_den(), 7);
  save_denoiser(p, den, {});
  const Denoiser back = load_denoiser(p);
  EXPECT_EQ(back.params().hash(), den.params().hash());
  EXPECT_EQ(back.config().to_json(), den.config().to_json());
  fs::remove(p);
}

TEST(Denoiser, CheckpointTagIsChecked) {
  const fs::path p = fs::temp_directory_path() / "mulsmo_den_tag.ckpt";
  const Denoiser den(tiny_den(), 8);
  write_checkpoint(p, "other-ckpt", den.config().to_json(), {}, {&den.params()});
  EXPECT_THROW(load_denoiser(p), ConfigError);
  fs::remove(p);
}

TEST(Denoiser, ZeroStepInversionIsIdentity) {
  const Denoiser den(tiny_den(), 9);
  Rng rng(10);
  const Mat z0 = rng.normal_matrix(2, 4);
  const auto cond = CondBatch::repeat("a person walks", 1);
  EXPECT_EQ(ddim_invert(den, z0, 0, cond), z0);
  EXPECT_EQ(ddim_denoise(den, z0, 0, cond), z0);
}

TEST(Denoiser, InversionRoundTripsOnUntrainedNetwork) {
  const Denoiser den(tiny_den(), 11);
  const auto cond = CondBatch::repeat("a person walks", 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Mat z0 = rng.normal_matrix(2, 4);
    const Mat zT = ddim_invert(den, z0, 20, cond, 3);
    const Mat back = ddim_denoise(den, zT, 20, cond);
    EXPECT_LT((back - z0).cwiseAbs().maxCoeff(), 1e-2) << "seed " << seed;
  }
}
