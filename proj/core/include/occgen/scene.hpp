// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "occgen/occupancy.hpp"

namespace occgen {

enum class DepthSpacing { Uniform, Inverse };

/// Discretization of distance along a camera ray into `count` bins on [near, far].
struct DepthBinning {
  std::uint16_t count = 16;
  double near = 0.5;
  double far = 8.5;
  DepthSpacing spacing = DepthSpacing::Uniform;

  double lower_edge(std::size_t bin) const;
  double center(std::size_t bin) const;
  /// Bin containing `distance`, clamped to [0, count - 1].
  std::uint16_t bin_of(double distance) const;
};

struct CameraPose {
  Intrinsics intrinsics;
  Extrinsics extrinsics;
};

struct LidarParams {
  int azimuth_steps = 180;
  int elevation_steps = 16;
  double elevation_min_deg = -35.0;
  double elevation_max_deg = 5.0;
  double dropout = 0.2;
  double max_range = 20.0;
};

struct CameraParams {
  int count = 2;
  std::uint16_t height = 24;
  std::uint16_t width = 32;
  float focal = 16.f;
};

struct SceneParams {
  GridGeometry geometry{GridDims{32, 32, 8}, 0.4f, {0.f, 0.f, 0.f}};
  std::uint16_t num_classes = 6;
  int num_objects = 6;
  int min_box_extent = 2;
  int max_box_extent = 6;
  /// Sensor rig position in world metres; LiDAR and cameras share it.
  std::array<float, 3> sensor{6.4f, 6.4f, 1.8f};
  LidarParams lidar;
  CameraParams cameras;
  DepthBinning depth;
};

/// First occupied voxel along a ray.
struct RayHit {
  std::size_t voxel = 0;
  std::uint8_t label = 0;
  double entry = 0.0;  // distance at which the ray enters the voxel
  double exit = 0.0;   // distance at which it leaves
};

/// Walks the voxels pierced by origin + s * dir (dir unit length) for s in
/// [0, max_distance] and returns the first non-empty one.
std::optional<RayHit> march_ray(const SemanticGrid& grid, const std::array<double, 3>& origin,
                                const std::array<double, 3>& dir, double max_distance);

/// Axis-aligned cameras at the sensor position, looking along +x, -x, +y, -y
/// (the first `count` of those).
std::vector<CameraPose> default_camera_poses(const SceneParams& params);

/// Per pixel: depth bin of the first occupied voxel (last bin if none within
/// range) and features [C+1, H, W] = one-hot of the hit class (class 0 when
/// nothing is hit) plus the hit distance divided by `depth.far` (1 when no hit).
std::vector<CameraView> render_views(const SemanticGrid& grid, std::span<const CameraPose> cameras,
                                     std::uint16_t height, std::uint16_t width, const DepthBinning& depth);

/// Deterministic synthetic scene: ground slab (class 1) at z = 0, non-overlapping
/// boxes of classes 2..C-1 standing on it, ray-cast LiDAR with per-ray dropout and
/// rendered camera views. Throws ValueError when the objects cannot be placed.
SceneSample gen_scene(std::uint64_t seed, const SceneParams& params);

}  // namespace occgen
