// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "occgen/autodiff.hpp"
#include "occgen/geometry.hpp"
#include "occgen/occupancy.hpp"
#include "occgen/params.hpp"
#include "occgen/rng.hpp"
#include "occgen/schedule.hpp"

// Progressive refinement decoder.
namespace occgen {

struct DecoderConfig {
  std::size_t num_classes = 6;       // C
  std::size_t feature_channels = 8;  // channels of each FusionVolume level
  std::size_t width = 16;            // d
  std::size_t layers = 6;            // L
  std::size_t points = 4;            // N
  TimeEmbedConfig time;
  double offset_init = 0.03;  // magnitude of the initial offset-bias pattern (normalized units)

  void validate() const;
};

struct QueryLevel {
  Var queries;     // [n, d]
  GridDims dims;   // level extents, n = dims.count()
  Tensor refs;     // [n, 3] voxel centres normalized to [0, 1]
};
using QueryPyramid = std::vector<QueryLevel>;

/// Normalized voxel centres ((i + 0.5) / extent) in flattening order (x slowest). [n, 3].
Tensor reference_points(const GridDims& dims);

void init_decoder(ParamSet& params, const DecoderConfig& config, Rng& rng);

/// Three 2x average pools of Y_t [C, X, Y, Z], each projected to d channels and flattened.
QueryPyramid downsample_noise(BoundParams& params, const Var& noise_map);

struct DeformProjections {
  Var offset_w;  // [d, 3N]
  Var offset_b;  // [3N]
  Var weight_w;  // [d, N]
  Var weight_b;  // [N]
};

/// Attention weights softmax(q W_a + b_a) over the N points. [n, N].
Var attention_weights(const Var& queries, const DeformProjections& proj);

/// sum_k A_k V(p + dp_k) for every query, V: [d_v, a, b, c] sampled trilinearly at
/// voxel coordinates p * extent - 0.5. Returns [n, d_v].
Var deform_aggregate(const Var& queries, const Tensor& refs, const Var& values, const DeformProjections& proj,
                     std::size_t points);

/// deform_aggregate followed by the output projection.
Var da3d(const Var& queries, const Tensor& refs, const Var& values, const DeformProjections& proj, const Var& out_w,
         const Var& out_b, std::size_t points);

/// Cross-attention of every query level to every fusion level; pre-norm residual.
QueryPyramid dca3d(BoundParams& params, const QueryPyramid& pyramid, const FusionVolume& fusion, std::size_t layer,
                   std::size_t points);

/// Self-attention of each level to its own query volume; pre-norm residual.
QueryPyramid dsa3d(BoundParams& params, const QueryPyramid& pyramid, std::size_t layer, std::size_t points);

/// Y * (1 + scale(t)) + shift(t) per level.
QueryPyramid film(BoundParams& params, const QueryPyramid& pyramid, const Var& time_embedding, std::size_t layer);

/// Nearest upsampling of each level to full resolution, 1x1x1 projection, sum. [d, X, Y, Z].
Var upsample_merge(BoundParams& params, const QueryPyramid& pyramid, const GridDims& full);

/// 3x3x3 conv, SiLU, 1x1x1 conv to C classes.
Var occ_head(BoundParams& params, const Var& features);

/// (2 * softmax over classes - 1) * s.
AnalogMap analog_from_logits(const Tensor& logits, double scale);

struct RefineOutput {
  Var logits;  // [C, X, Y, Z]
  AnalogMap z0_hat;
};

RefineOutput refine_once(BoundParams& params, const AnalogMap& noisy, int t, const FusionVolume& fusion,
                         const DecoderConfig& config);

struct UncertaintyMap {
  std::vector<std::uint8_t> changed;  // 1 where labels differ, tensor order
  std::size_t count = 0;
};

UncertaintyMap uncertainty(const SemanticGrid& prev, const SemanticGrid& cur);

/// Maps the current state and time to (logits, z0_hat).
using Denoiser = std::function<std::pair<Tensor, AnalogMap>(const AnalogMap& state, int t)>;

struct InferenceResult {
  std::vector<std::pair<int, int>> times;
  std::vector<SemanticGrid> grids;
  std::vector<UncertaintyMap> uncertainty;
  Tensor last_logits;
};

/// Starts from standard normal noise and alternates denoiser calls with sampler
/// updates over time_pairs(sampler, T). Produces `steps` grids and `steps - 1` maps.
InferenceResult progressive_infer(const Denoiser& denoiser, const GridGeometry& geometry, std::size_t num_classes,
                                  double scale, const SamplerConfig& sampler, const NoiseSchedule& schedule, Rng& rng);

}  // namespace occgen
