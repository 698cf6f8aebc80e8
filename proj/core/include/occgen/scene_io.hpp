// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "occgen/occupancy.hpp"

namespace occgen {

// Scene file ("OCGS", version 1, little-endian):
//   char[4] magic, u16 version, u16 C, u16 X, u16 Y, u16 Z, f32 voxel_size,
//   f32[3] origin, u32 point count, u32 view count,
//   u8 labels[X*Y*Z] (x fastest, then y, then z),
//   f32[4] per point (x, y, z, intensity),
//   per view: f32[4] intrinsics (fx, fy, cx, cy), f32[12] extrinsics (R row-major, t),
//             u16 H_C, u16 W_C, u16 C_img, u16 D_bins,
//             f32 features[C_img*H_C*W_C], u16 depth_bins[H_C*W_C].
inline constexpr char kSceneMagic[4] = {'O', 'C', 'G', 'S'};
inline constexpr std::uint16_t kSceneVersion = 1;

std::vector<char> encode_scene(const SceneSample& scene);
/// Throws FormatError (BadMagic, VersionMismatch, Truncated or Invalid).
SceneSample decode_scene(const std::vector<char>& bytes);

void write_scene(const std::filesystem::path& path, const SceneSample& scene);
SceneSample read_scene(const std::filesystem::path& path);

/// Byte size implied by the header fields of `scene`.
std::size_t scene_file_size(const SceneSample& scene);

}  // namespace occgen
