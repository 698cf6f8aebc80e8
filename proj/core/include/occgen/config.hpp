// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "occgen/geometry.hpp"
#include "occgen/objective.hpp"
#include "occgen/refine.hpp"
#include "occgen/scene.hpp"
#include "occgen/schedule.hpp"

namespace occgen {

struct TrainConfig {
  double lr = 2e-3;
  double weight_decay = 0.01;
  std::size_t warmup = 20;
  std::size_t epochs = 8;
  std::size_t batch = 4;
  double clip = 1.0;  // global gradient-norm clip, 0 disables
  std::size_t checkpoint_every = 0;  // steps between checkpoints, 0 = end only
};

/// Every tunable of the system. Text form: one `key = value` per line, `#` comments.
struct Config {
  SceneParams scene;
  double scale = 0.01;  // analog encoding factor s
  EncoderConfig encoder;
  DecoderConfig decoder;
  ScheduleKind schedule = ScheduleKind::Cosine;
  int diffusion_steps = 1000;  // T
  SamplerConfig sampler;
  TrainConfig train;
  LossWeights loss;
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "out";

  /// Cross-module consistency and preconditions; throws ConfigError.
  void validate() const;
  /// Encoder/decoder fields derived from the scene (class count, image channels, depth bins).
  void sync_derived();
};

/// Parses config text over the defaults; unknown keys, duplicates and bad values throw ConfigError.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

/// Canonical text: every key, sorted, `key=value` with shortest round-trip numbers.
std::string to_text(const Config& config);

/// Applies a single `key`/`value` override.
void set_config_value(Config& config, std::string_view key, std::string_view value);

std::vector<std::string> config_keys();

}  // namespace occgen
