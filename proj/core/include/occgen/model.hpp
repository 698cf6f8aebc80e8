// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "occgen/config.hpp"
#include "occgen/objective.hpp"
#include "occgen/params.hpp"
#include "occgen/refine.hpp"

namespace occgen {

/// Fresh encoder and decoder parameters drawn from the config seed.
ParamSet init_model(const Config& config);

/// Randomness of one training sample.
struct TrainDraw {
  int t = 1;
  Tensor noise;               // [C, X, Y, Z] standard normal
  std::uint64_t gumbel_seed = 0;
};

/// Draw for sample `index` of global step `step`; a pure function of its arguments.
TrainDraw draw_training_sample(const Config& config, std::uint64_t step, std::uint64_t index);

struct SampleResult {
  LossReport loss;
  GradMap grads;
  SemanticGrid prediction;  // argmax of the refined logits
};

/// Encoder once, corrupt the analog ground truth at t, refine once, total loss, backward.
SampleResult training_sample(const ParamSet& params, const SceneSample& scene, const Config& config,
                             const NoiseSchedule& schedule, const TrainDraw& draw);

/// Encoder pass with g = 0 whose outputs are detached from any tape.
struct EncodedScene {
  std::vector<Tensor> levels;
  std::vector<Tensor> depth_logits;
};
EncodedScene encode_scene_features(const ParamSet& params, const SceneSample& scene, const Config& config);

/// One decoder evaluation on fixed encoder features. Returns (logits, z0_hat).
std::pair<Tensor, AnalogMap> denoise(const ParamSet& params, const EncodedScene& encoded, const AnalogMap& state, int t,
                                     const Config& config);

}  // namespace occgen
