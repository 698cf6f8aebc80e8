// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/model.hpp"

#include "occgen/error.hpp"
#include "occgen/geometry.hpp"

namespace occgen {

namespace {

enum Stream : std::uint64_t { kInit = 1, kTrainDraw = 2 };

}  // namespace

ParamSet init_model(const Config& config) {
  ParamSet params;
  Rng rng(derive_seed(config.seed, kInit));
  init_encoder(params, config.encoder, rng);
  init_decoder(params, config.decoder, rng);
  return params;
}

TrainDraw draw_training_sample(const Config& config, std::uint64_t step, std::uint64_t index) {
  Rng rng(derive_seed(config.seed, kTrainDraw, (step << 16) ^ index));
  TrainDraw draw;
  draw.t = rng.uniform_int(1, config.diffusion_steps);
  const GridDims& d = config.scene.geometry.dims;
  draw.noise = Tensor(Shape{config.scene.num_classes, d.x, d.y, d.z});
  for (double& v : draw.noise.data()) v = rng.normal();
  draw.gumbel_seed = rng.next_u64();
  return draw;
}

SampleResult training_sample(const ParamSet& params, const SceneSample& scene, const Config& config,
                             const NoiseSchedule& schedule, const TrainDraw& draw) {
  if (scene.grid.num_classes != config.scene.num_classes || scene.grid.geometry.dims != config.scene.geometry.dims) {
    throw ShapeError("training scene does not match the configured grid");
  }
  Tape tape;
  BoundParams bound(tape, params);
  Rng gumbel(draw.gumbel_seed);
  const EncoderOutput enc = encode(bound, scene, config.encoder, &gumbel);
  const AnalogMap noisy = corrupt(encode_analog(scene.grid, config.scale), draw.t, draw.noise, schedule);
  const RefineOutput out = refine_once(bound, noisy, draw.t, enc.levels, config.decoder);
  std::vector<std::vector<std::uint16_t>> bins;
  for (const CameraView& v : scene.views) bins.push_back(v.depth_bins);
  const LossTerms terms = total_loss(out.logits, scene.grid, enc.depth_logits, bins, config.loss);
  SampleResult result;
  result.loss = terms.report();
  result.grads = bound.gradients(tape.backward(terms.total));
  result.prediction = decode_occupancy(out.logits.value(), scene.grid.geometry);
  return result;
}

EncodedScene encode_scene_features(const ParamSet& params, const SceneSample& scene, const Config& config) {
  Tape tape;
  BoundParams bound(tape, params, false);
  const EncoderOutput enc = encode(bound, scene, config.encoder, nullptr);
  EncodedScene out;
  for (const Var& level : enc.levels) out.levels.push_back(level.value());
  for (const Var& logits : enc.depth_logits) out.depth_logits.push_back(logits.value());
  return out;
}

std::pair<Tensor, AnalogMap> denoise(const ParamSet& params, const EncodedScene& encoded, const AnalogMap& state, int t,
                                     const Config& config) {
  Tape tape;
  BoundParams bound(tape, params, false);
  FusionVolume levels;
  for (const Tensor& level : encoded.levels) levels.push_back(tape.constant(level));
  RefineOutput out = refine_once(bound, state, t, levels, config.decoder);
  return {out.logits.value(), std::move(out.z0_hat)};
}

}  // namespace occgen
