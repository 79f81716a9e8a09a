#include "mulsmo/diffusion.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mulsmo;

TEST(Diffusion, LinearScheduleEndpoints) {
  const auto s = make_schedule(1000);
  ASSERT_EQ(s.beta.size(), 1001u);
  EXPECT_DOUBLE_EQ(s.ab(0), 1.0);
  EXPECT_NEAR(s.beta[1], 1e-4, 1e-15);
  EXPECT_NEAR(s.beta[1000], 2e-2, 1e-15);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - s.beta[static_cast<std::size_t>(t)];
    ASSERT_NEAR(s.ab(t), prod, 1e-15);
    ASSERT_LT(s.ab(t), s.ab(t - 1));
  }
  EXPECT_LT(s.ab(1000), 1e-4);
}

TEST(Diffusion, RejectsBadScheduleAndTimestep) {
  EXPECT_THROW(make_schedule(10, "bogus"), ConfigError);
  EXPECT_THROW(make_schedule(10, "linear", 0.1, 0.01), ConfigError);
  const auto s = make_schedule(100);
  const Mat z = Mat::Zero(1, 2);
  EXPECT_THROW(q_sample(z, 0, z, s), ConfigError);
  EXPECT_THROW(q_sample(z, 101, z, s), ConfigError);
}

TEST(Diffusion, PredictCleanInvertsQSample) {
  const auto s = make_schedule(1000);
  Rng rng(2);
  for (int t : {1, 10, 250, 500, 999, 1000}) {
    const Mat z0 = rng.normal_matrix(4, 6);
    const Mat eps = rng.normal_matrix(4, 6);
    const Mat zt = q_sample(z0, t, eps, s);
    EXPECT_LT((predict_clean(zt, t, eps, s) - z0).cwiseAbs().maxCoeff(), 1e-6) << "t=" << t;
  }
}

TEST(Diffusion, PerSampleTimesteps) {
  const auto s = make_schedule(100);
  Rng rng(3);
  const Mat z0 = rng.normal_matrix(4, 3);  // two samples of two tokens
  const Mat eps = rng.normal_matrix(4, 3);
  const Mat zt = q_sample(z0, {5, 80}, 2, eps, s);
  EXPECT_EQ(zt.topRows(2), q_sample(z0.topRows(2), 5, eps.topRows(2), s));
  EXPECT_EQ(zt.bottomRows(2), q_sample(z0.bottomRows(2), 80, eps.bottomRows(2), s));
}

TEST(Diffusion, DdimStepWithTrueNoiseLandsOnTrajectory) {
  // With the exact noise, a deterministic step maps q(z0, t) to q(z0, t_prev) with the same eps.
  const auto s = make_schedule(1000);
  Rng rng(4);
  const Mat z0 = rng.normal_matrix(2, 5);
  const Mat eps = rng.normal_matrix(2, 5);
  const Mat zt = q_sample(z0, 600, eps, s);
  const Mat zp = ddim_step(zt, 600, 400, eps, s);
  EXPECT_LT((zp - q_sample(z0, 400, eps, s)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((ddim_step(zt, 600, 0, eps, s) - z0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Diffusion, StochasticStepNeedsRng) {
  const auto s = make_schedule(100);
  const Mat z = Mat::Zero(1, 2);
  EXPECT_THROW(ddim_step(z, 50, 40, z, s, 1.0, nullptr), ConfigError);
}

TEST(Diffusion, DdpmFinalStepIsMean) {
  // At t = 1 the ancestral step adds no noise.
  const auto s = make_schedule(100);
  Rng rng(5);
  const Mat z0 = rng.normal_matrix(2, 3);
  const Mat eps = rng.normal_matrix(2, 3);
  const Mat z1 = q_sample(z0, 1, eps, s);
  Rng r1(6), r2(7);
  EXPECT_EQ(ddpm_step(z1, 1, eps, s, r1), ddpm_step(z1, 1, eps, s, r2));
  EXPECT_LT((ddpm_step(z1, 1, eps, s, r1) - z0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Diffusion, StepGrid) {
  const auto g = step_grid(1000, 50);
  ASSERT_EQ(g.size(), 50u);
  EXPECT_EQ(g.front(), 1000);
  EXPECT_EQ(g.back(), 20);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
  const auto full = step_grid(10, 10);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(full[static_cast<std::size_t>(i)], 10 - i);
  const auto quad = step_grid(1000, 30, "quadratic");
  EXPECT_EQ(quad.front(), 1000);
  EXPECT_EQ(quad.back(), 1);
  for (std::size_t i = 1; i < quad.size(); ++i) EXPECT_LT(quad[i], quad[i - 1]);
  EXPECT_THROW(step_grid(10, 5, "bogus"), ConfigError);
  EXPECT_THROW(step_grid(10, 11), ConfigError);
}
