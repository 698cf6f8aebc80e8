// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "occgen/autodiff.hpp"
#include "occgen/config.hpp"
#include "occgen/model.hpp"
#include "occgen/ops.hpp"
#include "occgen/rng.hpp"
#include "occgen/scene.hpp"
#include "occgen/schedule.hpp"

namespace occgen {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor({8, n, n, 8}, rng);
  const Tensor w = random_tensor({8, 8, 3, 3, 3}, rng);
  const Tensor b = random_tensor({8}, rng);
  for (auto _ : state) {
    Tape tape;
    Var y = conv3d(tape.constant(x), tape.constant(w), tape.constant(b));
    benchmark::DoNotOptimize(y.value().data().data());
  }
}
BENCHMARK(BM_Conv3dForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = random_tensor({8, n, n, 8}, rng);
  const Tensor w = random_tensor({8, 8, 3, 3, 3}, rng);
  for (auto _ : state) {
    Tape tape;
    Var xv = tape.leaf(x);
    Var wv = tape.leaf(w);
    Gradients g = tape.backward(sum(conv3d(xv, wv)));
    benchmark::DoNotOptimize(&g);
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

struct ModelFixture {
  Config config = parse_config("");
  ParamSet params = init_model(config);
  SceneSample scene = gen_scene(7, config.scene);
};

ModelFixture& fixture() {
  static ModelFixture f;
  return f;
}

void BM_EncodeScene(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    EncodedScene e = encode_scene_features(f.params, f.scene, f.config);
    benchmark::DoNotOptimize(&e);
  }
}
BENCHMARK(BM_EncodeScene)->Unit(benchmark::kMillisecond);

void BM_Denoise(benchmark::State& state) {
  auto& f = fixture();
  const EncodedScene encoded = encode_scene_features(f.params, f.scene, f.config);
  const TrainDraw draw = draw_training_sample(f.config, 0, 0);
  const AnalogMap noisy{draw.noise, f.config.scale};
  for (auto _ : state) {
    auto out = denoise(f.params, encoded, noisy, draw.t, f.config);
    benchmark::DoNotOptimize(&out);
  }
}
BENCHMARK(BM_Denoise)->Unit(benchmark::kMillisecond);

void BM_TrainingSample(benchmark::State& state) {
  auto& f = fixture();
  const NoiseSchedule schedule = make_schedule(f.config.schedule, f.config.diffusion_steps);
  std::uint64_t step = 0;
  for (auto _ : state) {
    SampleResult r = training_sample(f.params, f.scene, f.config, schedule, draw_training_sample(f.config, step++, 0));
    benchmark::DoNotOptimize(&r);
  }
}
BENCHMARK(BM_TrainingSample)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace occgen

BENCHMARK_MAIN();
