// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "occgen/error.hpp"
#include "occgen/params.hpp"
#include "occgen/schedule.hpp"
#include "test_util.hpp"

namespace occgen {
namespace {

using testing::cube_geometry;
using testing::random_grid;
using Pairs = std::vector<std::pair<int, int>>;

// ---- schedules ---------------------------------------------------------------

TEST(Schedule, AlphaBarStartsAtOneAndDecreases) {
  for (ScheduleKind kind : {ScheduleKind::Cosine, ScheduleKind::Linear}) {
    const NoiseSchedule s = make_schedule(kind, 1000);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    ASSERT_EQ(s.alpha_bars.size(), 1001u);
    for (int t = 1; t <= 1000; ++t) {
      ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1)) << to_string(kind) << " t=" << t;
      ASSERT_GT(s.beta(t), 0.0);
      ASSERT_LT(s.beta(t), 1.0);
    }
    EXPECT_LT(s.alpha_bar(1000), 1e-3);
  }
}

TEST(Schedule, CosineMatchesClosedForm) {
  const int T = 1000;
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, T);
  auto f = [&](double t) {
    const double c = std::cos((t / T + 0.008) / 1.008 * std::numbers::pi / 2);
    return c * c;
  };
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
    prod *= 1.0 - beta;
    ASSERT_NEAR(s.beta(t), beta, 1e-12);
    ASSERT_NEAR(s.alpha_bar(t), prod, 1e-12);
    if (t < T) ASSERT_NEAR(s.alpha_bar(t), f(t) / f(0), 1e-9);
  }
}

TEST(Schedule, LinearEndpoints) {
  const NoiseSchedule s = make_schedule(ScheduleKind::Linear, 1000);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
  EXPECT_NEAR(s.beta(500) - s.beta(499), (0.02 - 1e-4) / 999, 1e-15);
}

TEST(Schedule, InvalidInputsThrow) {
  EXPECT_THROW(make_schedule(ScheduleKind::Cosine, 1), ValueError);
  EXPECT_THROW(parse_schedule_kind("sigmoid"), ValueError);
  EXPECT_EQ(parse_schedule_kind("linear"), ScheduleKind::Linear);
  EXPECT_THROW(NoiseSchedule::from_betas(ScheduleKind::Linear, {0.1, 1.0}), ValueError);
}

// ---- corrupt -----------------------------------------------------------------

TEST(Corrupt, EndpointLimits) {
  Rng rng(1);
  const AnalogMap y0{testing::random_tensor({2, 8, 8, 8}, rng), 0.01};
  const Tensor noise = testing::random_tensor({2, 8, 8, 8}, rng);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  EXPECT_EQ(corrupt(y0, 0, noise, s).values, y0.values);
  const NoiseSchedule flat = NoiseSchedule::from_betas(ScheduleKind::Linear, {0.999999999999, 0.999999999999});
  EXPECT_LT(max_abs_diff(corrupt(y0, 2, noise, flat).values, noise), 1e-5);
  EXPECT_THROW(corrupt(y0, 1, Tensor({2, 8, 8}), s), ShapeError);
}

TEST(Corrupt, PreservesUnitVariance) {
  Rng rng(2);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  for (int t : {1, 250, 500, 900}) {
    const int n = 10000;
    Tensor y({n}), e({n});
    for (int i = 0; i < n; ++i) {
      y[i] = rng.normal();
      e[i] = rng.normal();
    }
    const Tensor z = corrupt(AnalogMap{y, 1.0}, t, e, s).values;
    double m = 0.0, v = 0.0;
    for (double x : z.data()) m += x / n;
    for (double x : z.data()) v += (x - m) * (x - m) / n;
    EXPECT_NEAR(v, 1.0, 0.05) << "t=" << t;
  }
}

// ---- time pairs --------------------------------------------------------------

TEST(TimePairs, SingleStepNoOffset) {
  EXPECT_EQ(time_pairs({SamplerStrategy::DDIM, 1, 0}, 1000), (Pairs{{1000, 0}}));
}

TEST(TimePairs, TwoStepsOffsetOne) {
  EXPECT_EQ(time_pairs({SamplerStrategy::DDIM, 2, 1}, 1000), (Pairs{{999, 499}, {499, 0}}));
}

TEST(TimePairs, HandEvaluatedThreeSteps) {
  // linspace(999, -1, 4) = 999, 665.67, 332.33, -1
  EXPECT_EQ(time_pairs({SamplerStrategy::DDIM, 3, 1}, 1000), (Pairs{{999, 665}, {665, 332}, {332, 0}}));
}

TEST(TimePairs, StrictlyDecreasingWithinRange) {
  for (int T : {10, 100, 1000})
    for (int steps = 1; steps <= 12; ++steps)
      for (int td = 0; td <= 3; ++td) {
        const SamplerConfig c{SamplerStrategy::DDIM, steps, td};
        try {
          c.validate(T);
        } catch (const ValueError&) {
          continue;
        }
        const Pairs p = time_pairs(c, T);
        ASSERT_EQ(p.size(), static_cast<std::size_t>(steps));
        EXPECT_EQ(p.back().second, 0);
        for (std::size_t i = 0; i < p.size(); ++i) {
          ASSERT_GT(p[i].first, p[i].second);
          ASSERT_LE(p[i].first, T);
          ASSERT_GE(p[i].second, 0);
          if (i > 0) ASSERT_EQ(p[i].first, p[i - 1].second);
        }
      }
}

TEST(SamplerConfig, Validation) {
  EXPECT_THROW((SamplerConfig{SamplerStrategy::DDIM, 0, 1}).validate(1000), ValueError);
  EXPECT_THROW((SamplerConfig{SamplerStrategy::DDIM, 1001, 0}).validate(1000), ValueError);
  EXPECT_THROW((SamplerConfig{SamplerStrategy::DDIM, 2, -1}).validate(1000), ValueError);
  EXPECT_THROW((SamplerConfig{SamplerStrategy::DDIM, 600, 1}).validate(1000), ValueError);
  EXPECT_NO_THROW((SamplerConfig{SamplerStrategy::DDIM, 500, 1}).validate(1000));
  EXPECT_EQ(parse_sampler_strategy("ddpm"), SamplerStrategy::DDPM);
  EXPECT_THROW(parse_sampler_strategy("euler"), ValueError);
}

// ---- DDIM --------------------------------------------------------------------

TEST(Ddim, ToZeroReturnsPrediction) {
  Rng rng(3);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  const AnalogMap zt{testing::random_tensor({3, 8, 8, 8}, rng), 0.01};
  const AnalogMap z0{testing::random_tensor({3, 8, 8, 8}, rng, -0.01, 0.01), 0.01};
  EXPECT_EQ(ddim_step(zt, z0, 700, 0, s).values, z0.values);
}

TEST(Ddim, ClampsPrediction) {
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  const AnalogMap zt{Tensor({1, 8, 8, 8}), 0.01};
  const AnalogMap z0{Tensor({1, 8, 8, 8}, 5.0), 0.01};
  const AnalogMap out = ddim_step(zt, z0, 10, 0, s);
  for (double v : out.values.data()) EXPECT_EQ(v, 0.01);
}

TEST(Ddim, ExactPredictionFollowsForwardProcess) {
  Rng rng(4);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  const SemanticGrid g = random_grid(cube_geometry(8), 4, rng);
  const AnalogMap y0 = encode_analog(g, 0.01);
  Tensor eps({4, 8, 8, 8});
  for (double& v : eps.data()) v = rng.normal();
  for (auto [a, b] : Pairs{{999, 499}, {600, 20}, {3, 1}}) {
    const AnalogMap zt = corrupt(y0, a, eps, s);
    EXPECT_LT(max_abs_diff(ddim_step(zt, y0, a, b, s).values, corrupt(y0, b, eps, s).values), 1e-10);
  }
}

TEST(Ddim, PerfectOracleRecoversGroundTruthInOneStep) {
  Rng rng(5);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  for (int t : {1, 17, 500, 999, 1000}) {
    const SemanticGrid g = random_grid(cube_geometry(8), 5, rng);
    const AnalogMap gt = encode_analog(g, 0.01);
    AnalogMap noise{Tensor({5, 8, 8, 8}), 0.01};
    for (double& v : noise.values.data()) v = rng.normal();
    EXPECT_LE(max_abs_diff(ddim_step(noise, gt, t, 0, s).values, gt.values), 1e-10);
  }
}

TEST(Ddim, RejectsBadTimes) {
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 10);
  const AnalogMap z{Tensor({1, 8, 8, 8}), 0.01};
  EXPECT_THROW(ddim_step(z, z, 0, 0, s), ValueError);
  EXPECT_THROW(ddim_step(z, z, 3, 5, s), ValueError);
}

// ---- DDPM --------------------------------------------------------------------

TEST(Ddpm, FinalStepIsPosteriorMean) {
  Rng rng(6), a(7), b(8);
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  const AnalogMap zt{testing::random_tensor({2, 8, 8, 8}, rng), 0.01};
  const AnalogMap z0{testing::random_tensor({2, 8, 8, 8}, rng, -0.01, 0.01), 0.01};
  const AnalogMap x = ddpm_step(zt, z0, 1, s, a), y = ddpm_step(zt, z0, 1, s, b);
  EXPECT_EQ(x.values, y.values);
  const PosteriorCoefficients pc = posterior_coefficients(s, 1, 0);
  for (std::size_t i = 0; i < x.values.numel(); ++i)
    ASSERT_NEAR(x.values[i], pc.coef_x0 * z0.values[i] + pc.coef_xt * zt.values[i], 1e-15);
}

TEST(Ddpm, FlatScheduleKeepsState) {
  const NoiseSchedule s = NoiseSchedule::from_betas(ScheduleKind::Linear, {1e-12, 1e-12, 1e-12});
  Rng rng(9);
  const AnalogMap z{testing::random_tensor({1, 8, 8, 8}, rng, -0.01, 0.01), 0.01};
  const PosteriorCoefficients pc = posterior_coefficients(s, 2, 1);
  EXPECT_NEAR(pc.coef_x0 + pc.coef_xt, 1.0, 1e-9);
  EXPECT_LT(max_abs_diff(ddpm_step(z, z, 2, 1, s, rng).values, z.values), 1e-5);
}

TEST(Ddpm, PosteriorMatchesStandardCoefficients) {
  const NoiseSchedule s = make_schedule(ScheduleKind::Linear, 1000);
  const int t = 400;
  const double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1), beta = s.beta(t);
  const PosteriorCoefficients pc = posterior_coefficients(s, t, t - 1);
  EXPECT_NEAR(pc.coef_x0, std::sqrt(abp) * beta / (1 - ab), 1e-12);
  EXPECT_NEAR(pc.coef_xt, std::sqrt(1 - beta) * (1 - abp) / (1 - ab), 1e-12);
  EXPECT_NEAR(pc.variance, (1 - abp) / (1 - ab) * beta, 1e-12);
}

TEST(Ddpm, EmpiricalVarianceMatchesPosterior) {
  const NoiseSchedule s = make_schedule(ScheduleKind::Cosine, 1000);
  const int t = 300;
  const AnalogMap zt{Tensor({1, 8, 8, 8}, 0.2), 1.0};
  const AnalogMap z0{Tensor({1, 8, 8, 8}, 0.1), 1.0};
  Rng rng(10);
  const int rounds = 20;  // 20 * 512 = 10240 draws
  double m = 0.0, v = 0.0;
  std::vector<double> xs;
  for (int r = 0; r < rounds; ++r) {
    const AnalogMap step = ddpm_step(zt, z0, t, s, rng);
    for (double x : step.values.data()) xs.push_back(x);
  }
  for (double x : xs) m += x / xs.size();
  for (double x : xs) v += (x - m) * (x - m) / xs.size();
  const PosteriorCoefficients pc = posterior_coefficients(s, t, t - 1);
  EXPECT_NEAR(m, pc.coef_x0 * 0.1 + pc.coef_xt * 0.2, 4 * std::sqrt(pc.variance / xs.size()));
  EXPECT_NEAR(v / pc.variance, 1.0, 0.05);
}

// ---- time embedding ----------------------------------------------------------

TEST(TimeEmbedding, ZeroTime) {
  const Tensor e = sinusoidal_embedding(0.0, 16);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[8 + i], 1.0);
  }
}

TEST(TimeEmbedding, FrequenciesGeometric) {
  const Tensor e = sinusoidal_embedding(1.0, 8);
  EXPECT_DOUBLE_EQ(e[0], std::sin(1.0));
  EXPECT_NEAR(e[3], std::sin(1e-4), 1e-15);
  EXPECT_NEAR(e[1], std::sin(std::pow(10000.0, -1.0 / 3.0)), 1e-15);
}

TEST(TimeEmbedding, DistinctAcrossAllTimes) {
  const int T = 1000;
  std::vector<Tensor> e;
  for (int t = 0; t <= T; ++t) e.push_back(sinusoidal_embedding(t, 16));
  double closest = 1e9;
  for (int a = 0; a <= T; ++a)
    for (int b = a + 1; b <= T; ++b) {
      double d = 0.0;
      for (std::size_t i = 0; i < 16; ++i) d += (e[a][i] - e[b][i]) * (e[a][i] - e[b][i]);
      closest = std::min(closest, d);
    }
  EXPECT_GT(closest, 1e-8);
}

TEST(TimeEmbedding, LearnedProjectionIsDeterministic) {
  ParamSet p;
  Rng rng(11);
  init_time_embed(p, "te", {16, 8}, rng);
  auto run = [&](int t) {
    Tape tape;
    BoundParams b(tape, p);
    return embed_time(b, "te", t, {16, 8}).value();
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_EQ(run(5).shape(), (Shape{8}));
  EXPECT_NE(run(5), run(6));
}

}  // namespace
}  // namespace occgen
