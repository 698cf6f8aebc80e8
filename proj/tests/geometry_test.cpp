// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "occgen/error.hpp"
#include "occgen/geometry.hpp"
#include "occgen/gradcheck.hpp"
#include "occgen/ops.hpp"
#include "test_util.hpp"

namespace occgen {
namespace {

using testing::random_tensor;

EncoderConfig small_config() {
  EncoderConfig c;
  c.image_channels = 4;
  c.feature_channels = 3;
  c.depth.count = 5;
  return c;
}

ParamSet encoder_params(std::uint64_t seed, const EncoderConfig& c = small_config()) {
  ParamSet p;
  Rng rng(seed);
  init_encoder(p, c, rng);
  return p;
}

// ---- lidar stream ------------------------------------------------------------

TEST(LidarStream, ZeroInputZeroOutput) {
  const ParamSet p = encoder_params(1);
  Tape tape;
  BoundParams b(tape, p);
  const Var out = lidar_stream(b, tape.constant(Tensor({2, 8, 8, 8})));
  EXPECT_EQ(out.shape(), (Shape{3, 8, 8, 8}));
  EXPECT_EQ(max_abs(out.value()), 0.0);
}

TEST(LidarStream, GradientCheck) {
  ParamSet p = encoder_params(2);
  Rng rng(3);
  for (auto& [name, t] : p.tensors())
    if (name.rfind("enc.lidar", 0) == 0)
      for (double& v : t.data()) v = 0.4 * rng.normal();
  const Tensor w1 = p.at("enc.lidar.c1.w"), b1 = p.at("enc.lidar.c1.b"), w2 = p.at("enc.lidar.c2.w"),
               b2 = p.at("enc.lidar.c2.b");
  ScalarFn fn = [&](Tape& tape, std::span<const Var> x) {
    BoundParams b(tape, p);
    b.bind("enc.lidar.c1.w", x[1]);
    b.bind("enc.lidar.c1.b", x[2]);
    b.bind("enc.lidar.c2.w", x[3]);
    b.bind("enc.lidar.c2.b", x[4]);
    return random_projection(lidar_stream(b, x[0]), 4);
  };
  EXPECT_LT(gradient_relative_error(fn, {random_tensor({2, 4, 4, 4}, rng), w1, b1, w2, b2}), 1e-4);
}

// ---- gumbel ------------------------------------------------------------------

TEST(HardGumbel, ArgmaxWithoutNoise) {
  for (double tau : {0.1, 1.0, 7.0}) {
    Tape tape;
    const Var z = tape.constant(Tensor({3, 1, 1}, {3, 1, 0}));
    EXPECT_EQ(hard_gumbel_onehot(z, tau, Tensor({3, 1, 1})).value(), Tensor({3, 1, 1}, {1, 0, 0}));
  }
}

TEST(HardGumbel, TiesGoToLowestIndex) {
  Tape tape;
  const Var z = tape.constant(Tensor({3, 1, 1}, {1, 2, 2}));
  EXPECT_EQ(hard_gumbel_onehot(z, 1.0, Tensor({3, 1, 1})).value(), Tensor({3, 1, 1}, {0, 1, 0}));
}

TEST(HardGumbel, AlwaysValidOneHot) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const Var z = tape.constant(random_tensor({6, 3, 4}, rng, -3, 3));
    const Tensor out = hard_gumbel_onehot(z, rng.uniform(0.1, 3.0), gumbel_noise({6, 3, 4}, rng)).value();
    for (std::size_t px = 0; px < 12; ++px) {
      double s = 0.0;
      for (std::size_t d = 0; d < 6; ++d) {
        const double v = out[d * 12 + px];
        ASSERT_TRUE(v == 0.0 || v == 1.0);
        s += v;
      }
      ASSERT_EQ(s, 1.0);
    }
  }
}

TEST(HardGumbel, StraightThroughIsSoftmaxJacobian) {
  Rng rng(6);
  const Tensor z = random_tensor({4, 2, 3}, rng), g = gumbel_noise({4, 2, 3}, rng), up = random_tensor({4, 2, 3}, rng);
  const double tau = 0.8;
  Tape tape;
  const Var zl = tape.leaf(z);
  const Var out = hard_gumbel_onehot(zl, tau, g);
  const Tensor grad = tape.backward(sum(mul(out, tape.constant(up))))[zl];
  // d/dz of sum(up * softmax((z + g) / tau)) per pixel.
  for (std::size_t px = 0; px < 6; ++px) {
    double m = -1e300;
    for (std::size_t d = 0; d < 4; ++d) m = std::max(m, (z[d * 6 + px] + g[d * 6 + px]) / tau);
    double p[4], s = 0.0;
    for (std::size_t d = 0; d < 4; ++d) s += p[d] = std::exp((z[d * 6 + px] + g[d * 6 + px]) / tau - m);
    double dot = 0.0;
    for (std::size_t d = 0; d < 4; ++d) dot += (p[d] /= s) * up[d * 6 + px];
    for (std::size_t d = 0; d < 4; ++d)
      EXPECT_NEAR(grad[d * 6 + px], p[d] * (up[d * 6 + px] - dot) / tau, 1e-12);
  }
}

TEST(HardGumbel, SelectionFrequenciesFollowSoftmax) {
  const Tensor z({4, 1, 1}, {0.5, -0.3, 1.2, 0.0});
  double pz[4], s = 0.0;
  for (int i = 0; i < 4; ++i) s += pz[i] = std::exp(z[i]);
  Rng rng(7);
  const int n = 10000;
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < n; ++i) {
    Tape tape;
    const Tensor out = hard_gumbel_onehot(tape.constant(z), 1.0, gumbel_noise({4, 1, 1}, rng)).value();
    for (int d = 0; d < 4; ++d) counts[d] += static_cast<int>(out[d]);
  }
  for (int d = 0; d < 4; ++d) {
    const double p = pz[d] / s;
    EXPECT_NEAR(counts[d], n * p, 3 * std::sqrt(n * p * (1 - p))) << "bin " << d;
  }
}

// ---- lifting -----------------------------------------------------------------

CameraView axis_view(const SceneParams& p) {
  SemanticGrid empty(p.geometry, p.num_classes);
  const auto poses = default_camera_poses(p);
  return render_views(empty, poses, p.cameras.height, p.cameras.width, p.depth)[0];
}

TEST(SplatTargets, OpticalAxisLandsInAnalyticVoxel) {
  SceneParams p;
  p.sensor = {6.2f, 6.2f, 1.8f};
  p.cameras.count = 1;
  const CameraView view = axis_view(p);
  const auto targets = splat_targets(view, p.depth, p.geometry);
  const std::size_t u = p.cameras.width / 2, row = p.cameras.height / 2, px = row * p.cameras.width + u;
  const auto dir = view.extrinsics.pixel_ray(view.intrinsics, u, row);
  for (std::uint16_t b = 0; b < p.depth.count; ++b) {
    const double d = p.depth.center(b);
    const auto voxel = p.geometry.locate(6.2 + d * dir[0], 6.2 + d * dir[1], 1.8 + d * dir[2]);
    const long expect = voxel ? static_cast<long>(p.geometry.index((*voxel)[0], (*voxel)[1], (*voxel)[2])) : -1;
    EXPECT_EQ(targets[b * view.pixels() + px], expect) << "bin " << b;
  }
}

TEST(SplatTargets, ZeroFocalThrows) {
  SceneParams p;
  CameraView view = axis_view(p);
  view.intrinsics.fx = 0.f;
  EXPECT_THROW(splat_targets(view, p.depth, p.geometry), ValueError);
}

TEST(Splat, SinglePixelLandsInOneVoxel) {
  Tape tape;
  const GridDims dims{8, 8, 8};
  Tensor f({2, 1, 2}, {1.5, 0.0, -2.0, 0.0});
  Tensor h({3, 1, 2});
  h[1 * 2 + 0] = 1.0;  // pixel 0 -> bin 1
  h[0 * 2 + 1] = 1.0;
  std::vector<long> targets{-1, -1, 77, 5, -1, -1};
  const Tensor out = splat(tape.constant(f), tape.constant(h), targets, dims).value();
  EXPECT_EQ(out[77], 1.5);
  EXPECT_EQ(out[512 + 77], -2.0);
  EXPECT_EQ(max_abs(out), 2.0);
  double total = 0.0;
  for (double v : out.data()) total += v;
  EXPECT_EQ(total, -0.5);
}

TEST(Splat, OutOfGridMassVanishes) {
  Tape tape;
  std::vector<long> targets(2 * 3, -1);
  const Tensor out = splat(tape.constant(Tensor({1, 1, 3}, 1.0)), tape.constant(Tensor({2, 1, 3}, 1.0)), targets,
                           GridDims{8, 8, 8})
                         .value();
  EXPECT_EQ(max_abs(out), 0.0);
}

TEST(Splat, ConservesInBoundsMass) {
  Rng rng(8);
  const SceneSample s = gen_scene(3, SceneParams{});
  for (const CameraView& v : s.views) {
    const auto targets = splat_targets(v, SceneParams{}.depth, s.grid.geometry);
    Tensor h({16, v.height(), v.width()});
    for (std::size_t px = 0; px < v.pixels(); ++px) h[rng.below(16) * v.pixels() + px] = 1.0;
    const Tensor f = random_tensor({3, v.height(), v.width()}, rng);
    Tape tape;
    const Tensor out = splat(tape.constant(f), tape.constant(h), targets, s.grid.geometry.dims).value();
    const std::size_t vol = s.grid.labels.size();
    for (std::size_t c = 0; c < 3; ++c) {
      double expect = 0.0, got = 0.0;
      for (std::size_t d = 0; d < 16; ++d)
        for (std::size_t px = 0; px < v.pixels(); ++px)
          if (targets[d * v.pixels() + px] >= 0) expect += h[d * v.pixels() + px] * f[c * v.pixels() + px];
      for (std::size_t i = 0; i < vol; ++i) got += out[c * vol + i];
      EXPECT_NEAR(got, expect, 1e-9);
    }
  }
}

TEST(LiftSplat, ProjectsSummedViews) {
  const ParamSet p = encoder_params(9);
  Rng rng(10);
  const GridDims dims{8, 8, 8};
  std::vector<std::vector<long>> targets(2, std::vector<long>(5 * 4));
  for (auto& t : targets)
    for (long& v : t) v = static_cast<long>(rng.below(520)) - 8;
  Tape tape;
  BoundParams b(tape, p);
  const std::vector<Var> f{tape.constant(random_tensor({4, 2, 2}, rng)), tape.constant(random_tensor({4, 2, 2}, rng))};
  const std::vector<Var> h{tape.constant(random_tensor({5, 2, 2}, rng)), tape.constant(random_tensor({5, 2, 2}, rng))};
  const Tensor out = lift_splat(b, f, h, targets, dims).value();
  const Var summed = add(splat(f[0], h[0], targets[0], dims), splat(f[1], h[1], targets[1], dims));
  const Tensor expect = conv3d(summed, b("enc.cam.proj.w"), b("enc.cam.proj.b")).value();
  EXPECT_LT(max_abs_diff(out, expect), 1e-12);
}

// ---- geometry mask -----------------------------------------------------------

Tensor dilate_oracle(const Tensor& occ) {
  const std::size_t X = occ.dim(0), Y = occ.dim(1), Z = occ.dim(2);
  Tensor out(occ.shape());
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t y = 0; y < Y; ++y)
      for (std::size_t z = 0; z < Z; ++z) {
        double m = 0.0;
        for (long a = -1; a <= 1; ++a)
          for (long b = -1; b <= 1; ++b)
            for (long c = -1; c <= 1; ++c) {
              const long i = long(x) + a, j = long(y) + b, k = long(z) + c;
              if (i < 0 || j < 0 || k < 0 || i >= long(X) || j >= long(Y) || k >= long(Z)) continue;
              m = std::max(m, occ[(i * Y + j) * Z + k]);
            }
        out[(x * Y + y) * Z + z] = m;
      }
  return out;
}

std::size_t nonzero(const Tensor& t) {
  std::size_t n = 0;
  for (double v : t.data()) n += v != 0.0;
  return n;
}

TEST(Dilate, MatchesNeighbourhoodOracleAndGrows) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor occ({8, 8, 8});
    for (double& v : occ.data()) v = rng.below(30) == 0 ? 1.0 : 0.0;
    const Tensor r1 = dilate(occ, 1), r2 = dilate(occ, 2);
    EXPECT_EQ(r1, dilate_oracle(occ));
    EXPECT_EQ(r2, dilate_oracle(dilate_oracle(occ)));
    EXPECT_GE(nonzero(r1), nonzero(occ));
    EXPECT_GE(nonzero(r2), nonzero(r1));
  }
}

TEST(Dilate, SingleVoxelNeighbourhoodClipped) {
  Tensor occ({8, 8, 8});
  occ[0] = 1.0;
  EXPECT_EQ(nonzero(dilate(occ, 1)), 8u);
  Tensor mid({8, 8, 8});
  mid[(3 * 8 + 3) * 8 + 3] = 1.0;
  EXPECT_EQ(nonzero(dilate(mid, 1)), 27u);
}

TEST(GeometryMask, EmptyOccupancyIsUniform) {
  const ParamSet p = encoder_params(12);
  Tape tape;
  BoundParams b(tape, p);
  const Tensor m = geometry_mask(b, Tensor({8, 8, 8}), 2).value();
  for (double v : m.data()) EXPECT_NEAR(v, 1.0 / 8.0, 1e-15);
}

TEST(GeometryMask, ColumnsSumToOne) {
  ParamSet p = encoder_params(13);
  Rng rng(14);
  for (auto& [name, t] : p.tensors())
    if (name.rfind("enc.mask", 0) == 0)
      for (double& v : t.data()) v = rng.normal();
  for (int trial = 0; trial < 10; ++trial) {
    Tensor occ({8, 8, 8});
    for (double& v : occ.data()) v = rng.below(10) == 0 ? 1.0 : 0.0;
    Tape tape;
    BoundParams b(tape, p);
    const Tensor m = geometry_mask(b, occ, trial % 3).value();
    for (std::size_t col = 0; col < 64; ++col) {
      double s = 0.0;
      for (std::size_t z = 0; z < 8; ++z) {
        ASSERT_GE(m[col * 8 + z], 0.0);
        s += m[col * 8 + z];
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ApplyMask, ScalesPerVoxel) {
  Rng rng(15);
  const Tensor f = random_tensor({3, 8, 8, 8}, rng), m = random_tensor({8, 8, 8}, rng, 0, 1);
  Tape tape;
  const Tensor out = apply_mask(tape.constant(f), tape.constant(m)).value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t v = 0; v < 512; ++v) ASSERT_EQ(out[c * 512 + v], f[c * 512 + v] * m[v]);
  EXPECT_THROW(apply_mask(tape.constant(f), tape.constant(Tensor({8, 8, 4}))), ShapeError);
}

TEST(ApplyMask, UniformMaskThenHeightSum) {
  Rng rng(16);
  const Tensor f = random_tensor({2, 8, 8, 8}, rng);
  Tape tape;
  const Tensor out = apply_mask(tape.constant(f), tape.constant(Tensor({8, 8, 8}, 1.0 / 8))).value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t col = 0; col < 64; ++col) {
      double a = 0.0, mean = 0.0;
      for (std::size_t z = 0; z < 8; ++z) {
        a += out[c * 512 + col * 8 + z];
        mean += f[c * 512 + col * 8 + z] / 8;
      }
      EXPECT_NEAR(a, mean, 1e-15);
    }
}

// ---- fusion / backbone -------------------------------------------------------

TEST(AdaptiveFuse, ZeroGateAverages) {
  const ParamSet p = encoder_params(17);
  Rng rng(18);
  const Tensor a = random_tensor({3, 8, 8, 8}, rng), c = random_tensor({3, 8, 8, 8}, rng);
  Tape tape;
  BoundParams b(tape, p);
  const Tensor out = adaptive_fuse(b, tape.constant(a), tape.constant(c)).value();
  for (std::size_t i = 0; i < out.numel(); ++i) ASSERT_NEAR(out[i], 0.5 * (a[i] + c[i]), 1e-15);
}

TEST(AdaptiveFuse, ConvexWithRandomGate) {
  ParamSet p = encoder_params(19);
  Rng rng(20);
  for (auto& [name, t] : p.tensors())
    for (double& v : t.data()) v = rng.normal();
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor({3, 8, 8, 8}, rng), c = random_tensor({3, 8, 8, 8}, rng);
    Tape tape;
    BoundParams b(tape, p);
    const Tensor out = adaptive_fuse(b, tape.constant(a), tape.constant(c)).value();
    const Tensor same = adaptive_fuse(b, tape.constant(a), tape.constant(a)).value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      ASSERT_GE(out[i], std::min(a[i], c[i]) - 1e-15);
      ASSERT_LE(out[i], std::max(a[i], c[i]) + 1e-15);
      ASSERT_NEAR(same[i], a[i], 1e-15);
    }
  }
  Tape tape;
  BoundParams b(tape, p);
  EXPECT_THROW(adaptive_fuse(b, tape.constant(Tensor({3, 8, 8, 8})), tape.constant(Tensor({3, 8, 8, 16}))),
               ShapeError);
}

TEST(Backbone, LevelShapesHalve) {
  EncoderConfig c;
  c.feature_channels = 4;
  const ParamSet p = encoder_params(21, c);
  Rng rng(22);
  Tape tape;
  BoundParams b(tape, p);
  const FusionVolume levels = backbone(b, tape.constant(random_tensor({4, 32, 32, 8}, rng)));
  ASSERT_EQ(levels.size(), 3u);
  EXPECT_EQ(levels[0].shape(), (Shape{4, 16, 16, 4}));
  EXPECT_EQ(levels[1].shape(), (Shape{4, 8, 8, 2}));
  EXPECT_EQ(levels[2].shape(), (Shape{4, 4, 4, 1}));
  EXPECT_THROW(backbone(b, tape.constant(Tensor({4, 12, 8, 8}))), ShapeError);
}

TEST(Encode, DeterministicAndShaped) {
  SceneParams sp;
  const SceneSample s = gen_scene(2, sp);
  EncoderConfig c;
  const ParamSet p = encoder_params(23, c);
  auto run = [&] {
    Tape tape;
    BoundParams b(tape, p, false);
    Rng g(5);
    const EncoderOutput out = encode(b, s, c, &g);
    std::vector<Tensor> v;
    for (const Var& l : out.levels) v.push_back(l.value());
    for (const Var& d : out.depth_logits) v.push_back(d.value());
    return v;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  ASSERT_EQ(a.size(), 3u + s.views.size());
  EXPECT_EQ(a[0].shape(), (Shape{c.feature_channels, 16, 16, 4}));
  EXPECT_EQ(a[3].shape(), (Shape{c.depth.count, sp.cameras.height, sp.cameras.width}));
}

}  // namespace
}  // namespace occgen
