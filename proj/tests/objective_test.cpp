// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "occgen/error.hpp"
#include "occgen/objective.hpp"
#include "occgen/ops.hpp"
#include "test_util.hpp"

namespace occgen {
namespace {

using testing::cube_geometry;
using testing::random_grid;
using testing::random_tensor;

GridGeometry box(std::uint16_t x, std::uint16_t y, std::uint16_t z) { return GridGeometry{GridDims{x, y, z}, 0.4f, {}}; }

/// Softmax over axis 0 of a [C, ...] tensor, computed directly.
Tensor softmax0(const Tensor& logits) {
  const std::size_t C = logits.dim(0), vol = logits.numel() / C;
  Tensor out(logits.shape());
  for (std::size_t v = 0; v < vol; ++v) {
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[c * vol + v]);
    for (std::size_t c = 0; c < C; ++c) out[c * vol + v] = std::exp(logits[c * vol + v]) / z;
  }
  return out;
}

/// Jaccard loss of a mispredicted set against the foreground set.
double jaccard_loss(const std::vector<bool>& wrong, const std::vector<bool>& fg) {
  std::size_t m = 0, uni = 0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    m += wrong[i];
    uni += wrong[i] || fg[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(uni);
}

/// Lovasz extension as a layer-cake sum over the level sets of the errors.
double lovasz_extension(const std::vector<double>& err, const std::vector<bool>& fg) {
  std::vector<double> levels(err);
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.push_back(0.0);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
    const double width = levels[k] - levels[k + 1];
    if (width <= 0.0) continue;
    std::vector<bool> top(err.size());
    for (std::size_t i = 0; i < err.size(); ++i) top[i] = err[i] >= levels[k];
    total += width * jaccard_loss(top, fg);
  }
  return total;
}

double lovasz_oracle(const Tensor& probs, const SemanticGrid& gt) {
  const std::size_t C = gt.num_classes, vol = gt.labels.size();
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<bool> fg(vol);
    std::vector<double> err(vol);
    bool any = false;
    for (std::size_t v = 0; v < vol; ++v) {
      fg[v] = gt.labels[v] == c;
      any = any || fg[v];
      err[v] = fg[v] ? 1.0 - probs[c * vol + v] : probs[c * vol + v];
    }
    if (!any) continue;
    total += lovasz_extension(err, fg);
    ++present;
  }
  return total / static_cast<double>(present);
}

double scal_binary_oracle(const std::vector<double>& p, const std::vector<bool>& pos) {
  double tp = 0, psum = 0, npos = 0, tn = 0, nneg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    psum += p[i];
    if (pos[i]) {
      tp += p[i];
      npos += 1;
    } else {
      tn += 1 - p[i];
      nneg += 1;
    }
  }
  double loss = 0.0;
  if (psum > 0) loss -= std::log(tp / psum);
  if (npos > 0) loss -= std::log(tp / npos);
  if (nneg > 0) loss -= std::log(tn / nneg);
  return loss;
}

// ---- cross-entropy -------------------------------------------------------------

TEST(CrossEntropy, MatchesDirectFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 4, 2), 4, rng);
    const Tensor logits = random_tensor({4, 2, 4, 2}, rng, -4, 4);
    Tape tape;
    const double got = ce_loss(tape.constant(logits), gt).value().item();
    const Tensor p = softmax0(logits);
    double expect = 0.0;
    for (std::size_t v = 0; v < 16; ++v) expect -= std::log(p[gt.labels[v] * 16 + v]);
    EXPECT_NEAR(got, expect / 16, 1e-10);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Rng rng(2);
  const SemanticGrid gt = random_grid(cube_geometry(8), 5, rng);
  Tape tape;
  EXPECT_NEAR(ce_loss(tape.constant(Tensor({5, 8, 8, 8}, 0.3)), gt).value().item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, ShapeMismatchThrows) {
  Rng rng(3);
  const SemanticGrid gt = random_grid(cube_geometry(8), 5, rng);
  Tape tape;
  EXPECT_THROW(ce_loss(tape.constant(Tensor({4, 8, 8, 8})), gt), ShapeError);
  EXPECT_THROW(ce_loss(tape.constant(Tensor({5, 8, 8, 16})), gt), ShapeError);
}

// ---- Lovasz ----------------------------------------------------------------------

TEST(LovaszGrad, EndpointsAndSum) {
  const std::vector<std::uint8_t> fg{1, 0, 1, 1, 0, 0};
  const std::vector<double> g = lovasz_grad(fg);
  // Telescoping: the weights sum to the Jaccard loss of the full set.
  EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 1.0, 1e-15);
  EXPECT_NEAR(g[0], 1.0 / 3.0, 1e-15);
  for (double v : g) EXPECT_GE(v, -1e-15);
}

TEST(Lovasz, MatchesLayerCakeOracleOnTwoClassInstances) {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 2, 2), 2, rng);
    Tensor probs(Shape{2, 2, 2, 2});
    for (std::size_t v = 0; v < 8; ++v) {
      probs[v] = rng.uniform();
      probs[8 + v] = 1.0 - probs[v];
    }
    Tape tape;
    EXPECT_NEAR(lovasz_softmax(tape.constant(probs), gt).value().item(), lovasz_oracle(probs, gt), 1e-12);
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Lovasz, MatchesOracleOnMultiClassInstances) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 4, 2), 4, rng, 0.3);
    const Tensor probs = softmax0(random_tensor({4, 2, 4, 2}, rng, -3, 3));
    Tape tape;
    EXPECT_NEAR(lovasz_softmax(tape.constant(probs), gt).value().item(), lovasz_oracle(probs, gt), 1e-12);
  }
}

TEST(Lovasz, EqualsJaccardLossOnBinaryPredictions) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 2, 2), 2, rng);
    std::vector<std::uint8_t> pred(8);
    Tensor probs(Shape{2, 2, 2, 2});
    for (std::size_t v = 0; v < 8; ++v) {
      pred[v] = static_cast<std::uint8_t>(rng.below(2));
      probs[pred[v] * 8 + v] = 1.0;
    }
    double expect = 0.0;
    std::size_t present = 0;
    for (std::uint8_t c = 0; c < 2; ++c) {
      std::vector<bool> fg(8), wrong(8);
      bool any = false;
      for (std::size_t v = 0; v < 8; ++v) {
        fg[v] = gt.labels[v] == c;
        wrong[v] = (pred[v] == c) != fg[v];
        any = any || fg[v];
      }
      if (!any) continue;
      expect += jaccard_loss(wrong, fg);
      ++present;
    }
    Tape tape;
    EXPECT_NEAR(lovasz_softmax(tape.constant(probs), gt).value().item(), expect / present, 1e-12);
  }
}

TEST(Lovasz, PerfectPredictionIsZeroAndGradientMatchesSlope) {
  Rng rng(7);
  const SemanticGrid gt = random_grid(box(2, 2, 2), 3, rng);
  Tensor perfect(Shape{3, 2, 2, 2});
  for (std::size_t v = 0; v < 8; ++v) perfect[gt.labels[v] * 8 + v] = 1.0;
  Tape t1;
  EXPECT_NEAR(lovasz_softmax(t1.constant(perfect), gt).value().item(), 0.0, 1e-15);

  // Piecewise linear: a central difference with a tiny step recovers the gradient away from ties.
  const Tensor probs = softmax0(random_tensor({3, 2, 2, 2}, rng, -2, 2));
  Tape tape;
  const Var x = tape.leaf(probs);
  const Tensor g = tape.backward(lovasz_softmax(x, gt))[x];
  const double h = 1e-7;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    Tensor a = probs, b = probs;
    a[i] += h;
    b[i] -= h;
    const double fd = (lovasz_oracle(a, gt) - lovasz_oracle(b, gt)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-6);
  }
}

// ---- SCAL ------------------------------------------------------------------------

TEST(Scal, SemanticMatchesSoftCountOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 4, 2), 4, rng, 0.4);
    const Tensor probs = softmax0(random_tensor({4, 2, 4, 2}, rng, -3, 3));
    double expect = 0.0;
    std::size_t present = 0;
    for (std::uint8_t c = 0; c < 4; ++c) {
      std::vector<double> p(16);
      std::vector<bool> pos(16);
      bool any = false;
      for (std::size_t v = 0; v < 16; ++v) {
        p[v] = probs[c * 16 + v];
        pos[v] = gt.labels[v] == c;
        any = any || pos[v];
      }
      if (!any) continue;
      expect += scal_binary_oracle(p, pos);
      ++present;
    }
    Tape tape;
    EXPECT_NEAR(scal_loss(tape.constant(probs), gt, ScalMode::Semantic).value().item(), expect / present, 1e-10);
  }
}

TEST(Scal, GeometricMatchesSoftCountOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const SemanticGrid gt = random_grid(box(2, 4, 2), 4, rng, 0.5);
    const Tensor probs = softmax0(random_tensor({4, 2, 4, 2}, rng, -3, 3));
    std::vector<double> p(16);
    std::vector<bool> pos(16);
    for (std::size_t v = 0; v < 16; ++v) {
      p[v] = 1.0 - probs[v];
      pos[v] = gt.labels[v] != 0;
    }
    Tape tape;
    EXPECT_NEAR(scal_loss(tape.constant(probs), gt, ScalMode::Geometric).value().item(), scal_binary_oracle(p, pos),
                1e-10);
  }
}

TEST(Scal, AllEmptySceneSkipsUndefinedTerms) {
  const SemanticGrid gt(box(2, 2, 2), 3);
  Tensor certain(Shape{3, 2, 2, 2});
  for (std::size_t v = 0; v < 8; ++v) certain[v] = 1.0;
  Tape tape;
  EXPECT_NEAR(scal_loss(tape.constant(certain), gt, ScalMode::Geometric).value().item(), 0.0, 1e-15);
  EXPECT_NEAR(scal_loss(tape.constant(certain), gt, ScalMode::Semantic).value().item(), 0.0, 1e-15);
}

// ---- depth -------------------------------------------------------------------------

TEST(DepthLoss, PooledPixelMean) {
  Rng rng(11);
  const Tensor a = random_tensor({5, 2, 3}, rng, -2, 2), b = random_tensor({5, 4, 1}, rng, -2, 2);
  std::vector<std::vector<std::uint16_t>> bins{std::vector<std::uint16_t>(6), std::vector<std::uint16_t>(4)};
  for (auto& m : bins)
    for (auto& v : m) v = static_cast<std::uint16_t>(rng.below(5));
  Tape tape;
  const std::vector<Var> logits{tape.constant(a), tape.constant(b)};
  double expect = 0.0;
  for (std::size_t view = 0; view < 2; ++view) {
    const Tensor p = softmax0(view == 0 ? a : b);
    const std::size_t plane = p.numel() / 5;
    for (std::size_t px = 0; px < plane; ++px) expect -= std::log(p[bins[view][px] * plane + px]);
  }
  EXPECT_NEAR(depth_loss(logits, bins).value().item(), expect / 10, 1e-10);
}

TEST(DepthLoss, Errors) {
  Tape tape;
  const std::vector<Var> logits{tape.constant(Tensor({3, 2, 2}))};
  EXPECT_THROW(depth_loss(logits, std::vector<std::vector<std::uint16_t>>{{0, 1, 2}}), ShapeError);
  EXPECT_THROW(depth_loss(logits, std::vector<std::vector<std::uint16_t>>{{0, 1, 2, 3}}), ValueError);
  EXPECT_THROW(depth_loss({}, std::vector<std::vector<std::uint16_t>>{}), ShapeError);
}

// ---- total -------------------------------------------------------------------------

TEST(TotalLoss, WeightedSumOfParts) {
  Rng rng(12);
  const SemanticGrid gt = random_grid(box(4, 4, 2), 4, rng, 0.4);
  const Tensor logits = random_tensor({4, 4, 4, 2}, rng, -2, 2);
  const Tensor depth = random_tensor({3, 2, 2}, rng);
  const std::vector<std::vector<std::uint16_t>> bins{{0, 1, 2, 1}};
  const LossWeights w{0.5, 2.0, 0.25, 1.5, 3.0};
  Tape tape;
  const std::vector<Var> dl{tape.constant(depth)};
  const LossReport r = total_loss(tape.constant(logits), gt, dl, bins, w).report();
  EXPECT_NEAR(r.total, 0.5 * r.ce + 2.0 * r.lovasz + 0.25 * r.scal_geo + 1.5 * r.scal_sem + 3.0 * r.depth, 1e-12);

  Tape t2;
  const Var x = t2.constant(logits);
  const Var p = softmax(x, 0);
  EXPECT_NEAR(r.ce, ce_loss(x, gt).value().item(), 1e-12);
  EXPECT_NEAR(r.lovasz, lovasz_softmax(p, gt).value().item(), 1e-12);
  EXPECT_NEAR(r.scal_geo, scal_loss(p, gt, ScalMode::Geometric).value().item(), 1e-12);
  EXPECT_NEAR(r.scal_sem, scal_loss(p, gt, ScalMode::Semantic).value().item(), 1e-12);
  const std::vector<Var> dl2{t2.constant(depth)};
  EXPECT_NEAR(r.depth, depth_loss(dl2, bins).value().item(), 1e-12);
}

TEST(TotalLoss, NonFiniteTermIsNamed) {
  // Every voxel occupied but the empty class takes all the mass: the occupied
  // recall is log(0).
  SemanticGrid gt(box(2, 2, 2), 3);
  for (auto& l : gt.labels) l = 1;
  Tensor logits(Shape{3, 2, 2, 2});
  for (std::size_t v = 0; v < 8; ++v) logits[8 + v] = logits[16 + v] = -1e4;
  Tape tape;
  const std::vector<Var> dl{tape.constant(Tensor({2, 1, 1}))};
  const std::vector<std::vector<std::uint16_t>> bins{{0}};
  try {
    total_loss(tape.constant(logits), gt, dl, bins);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("scal_geo"), std::string::npos) << e.what();
  }
}

TEST(TotalLoss, NonFiniteInputRejected) {
  Tensor logits(Shape{3, 2, 2, 2});
  logits[0] = std::nan("");
  Tape tape;
  EXPECT_THROW(tape.constant(logits), NumericalError);
}

// ---- metrics -----------------------------------------------------------------------

double iou_oracle(const SemanticGrid& pred, const SemanticGrid& gt) {
  std::set<std::size_t> p, g;
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    if (pred.labels[v]) p.insert(v);
    if (gt.labels[v]) g.insert(v);
  }
  std::set<std::size_t> inter, uni = p;
  uni.insert(g.begin(), g.end());
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(inter, inter.begin()));
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double miou_oracle(const SemanticGrid& pred, const SemanticGrid& gt) {
  double total = 0.0;
  int count = 0;
  for (std::uint8_t c = 1; c < gt.num_classes; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t v = 0; v < gt.labels.size(); ++v) {
      inter += pred.labels[v] == c && gt.labels[v] == c;
      uni += pred.labels[v] == c || gt.labels[v] == c;
    }
    if (uni == 0) continue;
    total += static_cast<double>(inter) / static_cast<double>(uni);
    ++count;
  }
  return count ? total / count : 1.0;
}

TEST(Metrics, MatchBruteForce) {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const SemanticGrid gt = random_grid(cube_geometry(8), 5, rng, 0.6);
    const SemanticGrid pred = random_grid(cube_geometry(8), 5, rng, 0.6);
    EXPECT_NEAR(iou(pred, gt), iou_oracle(pred, gt), 1e-15);
    EXPECT_NEAR(miou(pred, gt), miou_oracle(pred, gt), 1e-15);
    EXPECT_DOUBLE_EQ(iou(pred, gt), iou(gt, pred));
    EXPECT_DOUBLE_EQ(miou(pred, gt), miou(gt, pred));
  }
}

TEST(Metrics, InvariantUnderRelabelingOfNonEmptyClasses) {
  Rng rng(15);
  const std::vector<std::uint8_t> perm{0, 3, 1, 4, 2};
  for (int trial = 0; trial < 20; ++trial) {
    SemanticGrid gt = random_grid(cube_geometry(8), 5, rng, 0.5);
    SemanticGrid pred = random_grid(cube_geometry(8), 5, rng, 0.5);
    const double i0 = iou(pred, gt), m0 = miou(pred, gt);
    for (auto& l : gt.labels) l = perm[l];
    for (auto& l : pred.labels) l = perm[l];
    EXPECT_DOUBLE_EQ(iou(pred, gt), i0);
    EXPECT_NEAR(miou(pred, gt), m0, 1e-15);
  }
}

TEST(Metrics, EdgeCases) {
  Rng rng(16);
  const SemanticGrid empty(cube_geometry(8), 4);
  EXPECT_EQ(iou(empty, empty), 1.0);
  EXPECT_EQ(miou(empty, empty), 1.0);
  const SemanticGrid g = random_grid(cube_geometry(8), 4, rng, 0.3);
  EXPECT_EQ(iou(g, g), 1.0);
  EXPECT_EQ(miou(g, g), 1.0);
  EXPECT_EQ(iou(empty, g), 0.0);
  EXPECT_EQ(miou(empty, g), 0.0);
  const ConfusionStats s = confusion(g, empty);
  EXPECT_EQ(class_iou(s, 1) , 0.0);
  const ConfusionStats none = confusion(empty, empty);
  EXPECT_LT(class_iou(none, 2), 0.0);
  EXPECT_THROW(iou(g, SemanticGrid(cube_geometry(16), 4)), ShapeError);
}

}  // namespace
}  // namespace occgen
