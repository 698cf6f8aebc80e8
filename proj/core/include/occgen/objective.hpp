// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "occgen/autodiff.hpp"
#include "occgen/occupancy.hpp"

namespace occgen {

/// Mean over voxels of -log softmax(logits)[gt]. logits: [C, X, Y, Z].
Var ce_loss(const Var& logits, const SemanticGrid& gt);

/// Lovasz-softmax over the classes present in gt. probs: [C, X, Y, Z] softmax outputs.
Var lovasz_softmax(const Var& probs, const SemanticGrid& gt);

/// Gradient of the Lovasz extension of the Jaccard loss for a ground-truth
/// indicator sorted by decreasing error.
std::vector<double> lovasz_grad(std::span<const std::uint8_t> sorted_fg);

enum class ScalMode { Geometric, Semantic };

/// -[log precision + log recall + log specificity] from soft counts, averaged over
/// gt-present classes (semantic) or for occupied-vs-empty with p_occ = 1 - p_0
/// (geometric). Terms with a zero denominator are skipped.
Var scal_loss(const Var& probs, const SemanticGrid& gt, ScalMode mode);

/// Mean per-pixel cross-entropy of depth logits [D, H, W] against gt bins, pooled over views.
Var depth_loss(std::span<const Var> logits, std::span<const std::vector<std::uint16_t>> gt_bins);

struct LossWeights {
  double ce = 1.0;
  double lovasz = 1.0;
  double scal_geo = 1.0;
  double scal_sem = 1.0;
  double depth = 1.0;
};

struct LossReport {
  double ce = 0.0;
  double lovasz = 0.0;
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double depth = 0.0;
  double total = 0.0;
};

struct LossTerms {
  Var ce, lovasz, scal_geo, scal_sem, depth, total;
  LossReport report() const;
};

/// Weighted sum of the five terms. Throws NumericalError naming the first
/// non-finite term.
LossTerms total_loss(const Var& logits, const SemanticGrid& gt, std::span<const Var> depth_logits,
                     std::span<const std::vector<std::uint16_t>> depth_gt, const LossWeights& weights = {});

struct ConfusionStats {
  std::vector<std::size_t> tp, fp, fn;  // per class
};

ConfusionStats confusion(const SemanticGrid& pred, const SemanticGrid& gt);

/// Occupied (label > 0) intersection over union; 1 when both are empty.
double iou(const SemanticGrid& pred, const SemanticGrid& gt);

/// Per-class IoU of class c (c >= 1); negative when c is absent from both grids.
double class_iou(const ConfusionStats& stats, std::size_t c);

/// Mean IoU over classes 1..C-1 present in gt or pred; 1 when none are present.
double miou(const SemanticGrid& pred, const SemanticGrid& gt);

}  // namespace occgen
