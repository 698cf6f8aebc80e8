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
#include "occgen/params.hpp"
#include "occgen/rng.hpp"
#include "occgen/scene.hpp"

// Conditional encoder: LiDAR and camera streams, geometry mask, adaptive fusion
// and the multi-scale backbone.
namespace occgen {

struct EncoderConfig {
  std::size_t image_channels = 7;    // channels of CameraView::features
  std::size_t feature_channels = 8;  // C_f
  double tau = 1.0;                  // Gumbel temperature
  int dilation = 2;                  // geometry-mask dilation rounds
  DepthBinning depth;

  void validate() const;
};

/// Multi-scale fusion features, levels 1..3 at 1/2, 1/4, 1/8 resolution: [C_f, X/2^i, Y/2^i, Z/2^i].
using FusionVolume = std::vector<Var>;

struct EncoderOutput {
  FusionVolume levels;
  std::vector<Var> depth_logits;  // per view [D_bins, H_C, W_C]
};

void init_encoder(ParamSet& params, const EncoderConfig& config, Rng& rng);

/// Two 3x3x3 convs with SiLU. vox: [2, X, Y, Z] -> [C_f, X, Y, Z].
Var lidar_stream(BoundParams& params, const Var& vox);

/// 1x1 conv over view features [C_img, H, W] -> depth logits [D, H, W].
Var depth_head(BoundParams& params, const Var& features);

/// i.i.d. standard Gumbel draws.
Tensor gumbel_noise(const Shape& shape, Rng& rng);

/// Forward: one-hot of argmax((z + g) / tau) along `axis` (ties to the lowest
/// index). Backward: straight-through to softmax((z + g) / tau).
Var hard_gumbel_onehot(const Var& logits, double tau, const Tensor& gumbel, std::size_t axis = 0);

/// For every (bin, pixel) the flat voxel index hit by the point at the bin's
/// centre distance along the pixel ray, or -1 outside the grid. Bin-major order
/// [D, H, W]. Throws ValueError for a zero focal length.
std::vector<long> splat_targets(const CameraView& view, const DepthBinning& depth, const GridGeometry& geometry);

/// Scatter-add: out[c, targets[d,p]] += features[c, p] * onehot[d, p].
/// features: [C, H, W], onehot: [D, H, W] -> [C, X, Y, Z].
Var splat(const Var& features, const Var& onehot, std::span<const long> targets, const GridDims& dims);

/// Splats every view, sums the volumes and projects to C_f with a 1x1x1 conv.
Var lift_splat(BoundParams& params, std::span<const Var> features, std::span<const Var> onehots,
               std::span<const std::vector<long>> targets, const GridDims& dims);

/// `rounds` passes of a 3x3x3 neighbourhood max (clipped at the borders).
/// occ: [X, Y, Z] binary.
Tensor dilate(const Tensor& occ, int rounds);

/// Dilated occupancy -> learnable 3x3x3 conv -> softmax along Z. Returns [X, Y, Z].
Var geometry_mask(BoundParams& params, const Tensor& occupancy, int rounds);

/// features [C, X, Y, Z] scaled per voxel by mask [X, Y, Z].
Var apply_mask(const Var& features, const Var& mask);

/// gate = conv([conv(F_p), conv(F_c)]); out = sigmoid(gate) * F_p + (1 - sigmoid(gate)) * F_c.
Var adaptive_fuse(BoundParams& params, const Var& lidar, const Var& camera);

/// Three stages of (stride-2 conv, conv, residual). Input extents must be multiples of 8.
FusionVolume backbone(BoundParams& params, const Var& fused);

/// Full encoder pass. With `gumbel_rng` null the depth one-hots use g = 0.
EncoderOutput encode(BoundParams& params, const SceneSample& scene, const EncoderConfig& config, Rng* gumbel_rng);

}  // namespace occgen
