// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "occgen/tensor.hpp"

namespace occgen {

struct GridDims {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint16_t z = 0;

  std::size_t count() const noexcept { return std::size_t{x} * y * z; }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Placement of a voxel grid in the world. Voxel (i, j, k) spans
/// [origin + (i, j, k) * voxel_size, origin + (i+1, j+1, k+1) * voxel_size); z is up.
/// Values are stored as float so that they round-trip through scene files.
struct GridGeometry {
  GridDims dims;
  float voxel_size = 0.4f;
  std::array<float, 3> origin{0.f, 0.f, 0.f};

  /// Flat index in tensor order: x slowest, z fastest.
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return (x * dims.y + y) * dims.z + z;
  }
  /// Voxel containing a world point, if any.
  std::optional<std::array<int, 3>> locate(double x, double y, double z) const noexcept;
  std::array<double, 3> voxel_center(std::size_t x, std::size_t y, std::size_t z) const noexcept;

  /// Throws ShapeError unless every extent is a positive multiple of 8, ValueError unless voxel_size > 0.
  void validate() const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Dense voxel labels; class 0 is empty space.
struct SemanticGrid {
  GridGeometry geometry;
  std::uint16_t num_classes = 0;
  std::vector<std::uint8_t> labels;  // tensor order, see GridGeometry::index

  SemanticGrid() = default;
  SemanticGrid(GridGeometry geometry, std::uint16_t num_classes);

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[geometry.index(x, y, z)]; }
  void set(std::size_t x, std::size_t y, std::size_t z, std::uint8_t label) { labels[geometry.index(x, y, z)] = label; }
  std::size_t occupied_count() const;

  void validate() const;
  friend bool operator==(const SemanticGrid&, const SemanticGrid&) = default;
};

/// Continuous per-class encoding of a grid: values [C, X, Y, Z].
struct AnalogMap {
  Tensor values;
  double scale = 0.01;
};

struct LidarPoint {
  float x = 0.f;
  float y = 0.f;
  float z = 0.f;
  float intensity = 0.f;
  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;
};
using PointCloud = std::vector<LidarPoint>;

struct Intrinsics {
  float fx = 16.f;
  float fy = 16.f;
  float cx = 16.f;
  float cy = 12.f;
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// World-to-camera transform p_cam = R p_world + t, R row-major. Camera axes:
/// x right, y down, z forward.
struct Extrinsics {
  std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<float, 3> translation{0, 0, 0};

  std::array<double, 3> camera_center() const noexcept;
  /// Unit world-space direction of the ray through pixel (u, v) centre.
  std::array<double, 3> pixel_ray(const Intrinsics& k, std::size_t u, std::size_t v) const noexcept;
  friend bool operator==(const Extrinsics&, const Extrinsics&) = default;
};

struct CameraView {
  Intrinsics intrinsics;
  Extrinsics extrinsics;
  Tensor features;                       // [C_img, H_C, W_C]
  std::vector<std::uint16_t> depth_bins;  // H_C * W_C, row-major
  std::uint16_t num_depth_bins = 0;

  std::size_t height() const { return features.dim(1); }
  std::size_t width() const { return features.dim(2); }
  std::size_t channels() const { return features.dim(0); }
  std::size_t pixels() const { return height() * width(); }

  /// Rotation orthonormal within 1e-9, bins in range, shapes consistent.
  void validate() const;
  friend bool operator==(const CameraView&, const CameraView&) = default;
};

struct SceneSample {
  SemanticGrid grid;
  PointCloud points;
  std::vector<CameraView> views;
  std::uint64_t seed = 0;  // provenance only; not part of the file format

  /// Content equality (grid, points, views); the seed is not compared.
  friend bool operator==(const SceneSample& a, const SceneSample& b) {
    return a.grid == b.grid && a.points == b.points && a.views == b.views;
  }
};

/// One-hot over C classes mapped by h -> (2h - 1) * s. Throws ValueError if s <= 0.
AnalogMap encode_analog(const SemanticGrid& grid, double scale);

/// Per-voxel argmax over the channel axis of [C, X, Y, Z]; ties go to the lowest class.
SemanticGrid decode_occupancy(const Tensor& values, const GridGeometry& geometry);

/// Channel 0: 1 where any point falls in the voxel. Channel 1: mean intensity of
/// those points (0 elsewhere). Points outside the grid are dropped. Returns [2, X, Y, Z].
Tensor voxelize_points(const PointCloud& points, const GridGeometry& geometry);

}  // namespace occgen
