// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "occgen/error.hpp"

namespace occgen {

std::optional<std::array<int, 3>> GridGeometry::locate(double x, double y, double z) const noexcept {
  const double p[3] = {x, y, z};
  const int ext[3] = {dims.x, dims.y, dims.z};
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - static_cast<double>(origin[a])) / static_cast<double>(voxel_size));
    if (!(f >= 0.0) || f >= ext[a]) return std::nullopt;
    out[a] = static_cast<int>(f);
  }
  return out;
}

std::array<double, 3> GridGeometry::voxel_center(std::size_t x, std::size_t y, std::size_t z) const noexcept {
  const double vs = voxel_size;
  return {origin[0] + (static_cast<double>(x) + 0.5) * vs, origin[1] + (static_cast<double>(y) + 0.5) * vs,
          origin[2] + (static_cast<double>(z) + 0.5) * vs};
}

void GridGeometry::validate() const {
  for (std::uint16_t n : {dims.x, dims.y, dims.z}) {
    if (n == 0 || n % 8 != 0) {
      throw ShapeError("grid extents must be positive multiples of 8, got " + std::to_string(dims.x) + "x" +
                       std::to_string(dims.y) + "x" + std::to_string(dims.z));
    }
  }
  if (!(voxel_size > 0.f) || !std::isfinite(voxel_size)) throw ValueError("voxel_size must be positive");
}

SemanticGrid::SemanticGrid(GridGeometry geom, std::uint16_t classes)
    : geometry(geom), num_classes(classes), labels(geom.dims.count(), 0) {}

std::size_t SemanticGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
}

void SemanticGrid::validate() const {
  geometry.validate();
  if (num_classes < 2) throw ValueError("a semantic grid needs at least 2 classes");
  if (labels.size() != geometry.dims.count()) throw ShapeError("label count does not match grid extents");
  for (std::uint8_t l : labels) {
    if (l >= num_classes) throw ValueError("label " + std::to_string(l) + " >= class count");
  }
}

std::array<double, 3> Extrinsics::camera_center() const noexcept {
  // C = -R^T t
  std::array<double, 3> c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c[i] -= static_cast<double>(rotation[j * 3 + i]) * translation[j];
  }
  return c;
}

std::array<double, 3> Extrinsics::pixel_ray(const Intrinsics& k, std::size_t u, std::size_t v) const noexcept {
  const double dc[3] = {(static_cast<double>(u) + 0.5 - k.cx) / k.fx, (static_cast<double>(v) + 0.5 - k.cy) / k.fy, 1.0};
  std::array<double, 3> d{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) d[i] += static_cast<double>(rotation[j * 3 + i]) * dc[j];
  }
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  for (double& x : d) x /= n;
  return d;
}

void CameraView::validate() const {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += static_cast<double>(extrinsics.rotation[i * 3 + k]) * extrinsics.rotation[j * 3 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-9) throw ValueError("camera rotation is not orthonormal");
    }
  }
  if (!(intrinsics.fx != 0.f) || !(intrinsics.fy != 0.f)) throw ValueError("degenerate camera: zero focal length");
  if (features.rank() != 3) throw ShapeError("camera features must be [C, H, W]");
  if (depth_bins.size() != pixels()) throw ShapeError("depth bin count does not match pixel count");
  for (std::uint16_t b : depth_bins) {
    if (b >= num_depth_bins) throw ValueError("depth bin index out of range");
  }
}

AnalogMap encode_analog(const SemanticGrid& grid, double scale) {
  if (!(scale > 0.0)) throw ValueError("analog scale must be positive");
  const std::size_t n = grid.labels.size();
  const std::size_t C = grid.num_classes;
  const GridDims& d = grid.geometry.dims;
  Tensor values(Shape{C, d.x, d.y, d.z}, -scale);
  for (std::size_t v = 0; v < n; ++v) values[grid.labels[v] * n + v] = scale;
  return AnalogMap{std::move(values), scale};
}

SemanticGrid decode_occupancy(const Tensor& values, const GridGeometry& geometry) {
  const GridDims& d = geometry.dims;
  if (values.rank() != 4 || values.dim(1) != d.x || values.dim(2) != d.y || values.dim(3) != d.z) {
    throw ShapeError("decode_occupancy: values " + shape_string(values.shape()) + " do not match grid");
  }
  const std::size_t C = values.dim(0);
  if (C < 2 || C > 256) throw ShapeError("decode_occupancy needs 2..256 channels");
  SemanticGrid grid(geometry, static_cast<std::uint16_t>(C));
  const std::size_t n = d.count();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    double best_value = values[v];
    for (std::size_t c = 1; c < C; ++c) {
      if (values[c * n + v] > best_value) {
        best_value = values[c * n + v];
        best = c;
      }
    }
    grid.labels[v] = static_cast<std::uint8_t>(best);
  }
  return grid;
}

Tensor voxelize_points(const PointCloud& points, const GridGeometry& geometry) {
  const GridDims& d = geometry.dims;
  const std::size_t n = d.count();
  Tensor out(Shape{2, d.x, d.y, d.z});
  std::vector<std::size_t> counts(n, 0);
  for (const LidarPoint& p : points) {
    auto cell = geometry.locate(p.x, p.y, p.z);
    if (!cell) continue;
    const std::size_t v = geometry.index(static_cast<std::size_t>((*cell)[0]), static_cast<std::size_t>((*cell)[1]),
                                         static_cast<std::size_t>((*cell)[2]));
    counts[v] += 1;
    out[n + v] += p.intensity;
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (counts[v] == 0) continue;
    out[v] = 1.0;
    out[n + v] /= static_cast<double>(counts[v]);
  }
  return out;
}

}  // namespace occgen
