// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "occgen/optim.hpp"
#include "occgen/params.hpp"

namespace occgen {

// Checkpoint file ("OCGC", version 1, little-endian):
//   char[4] magic, u16 version, u32 config length, config text,
//   u32 tensor count, then per tensor in name order:
//   u32 name length, name, u8 rank, u32 dims[rank], f64 payload.
// Parameters keep their own names; optimizer moments are stored as
// "adam.m/<name>" and "adam.v/<name>", counters as "train.step" and "train.loss_ema".
inline constexpr char kCheckpointMagic[4] = {'O', 'C', 'G', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  ParamSet params;
  OptimizerState optimizer;
  std::uint64_t step = 0;
  double loss_ema = 0.0;
};

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError (BadMagic, VersionMismatch, Truncated or Invalid).
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace occgen
