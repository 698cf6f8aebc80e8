// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "occgen/error.hpp"
#include "occgen/rng.hpp"

namespace occgen {
namespace {

constexpr std::uint64_t kSceneStream = 0x5343454e45ULL;  // "SCENE"
constexpr int kPlacementAttempts = 500;
// Boxes keep clear of this many voxels around the sensor column.
constexpr int kSensorClearance = 2;

struct Box {
  int x0, y0, sx, sy, sz;
  std::uint8_t label;

  bool overlaps(const Box& o) const {
    return x0 < o.x0 + o.sx && o.x0 < x0 + sx && y0 < o.y0 + o.sy && o.y0 < y0 + sy;
  }
};

}  // namespace

double DepthBinning::lower_edge(std::size_t bin) const {
  const double f = static_cast<double>(bin) / count;
  if (spacing == DepthSpacing::Uniform) return near + (far - near) * f;
  return 1.0 / (1.0 / near + (1.0 / far - 1.0 / near) * f);
}

double DepthBinning::center(std::size_t bin) const {
  const double f = (static_cast<double>(bin) + 0.5) / count;
  if (spacing == DepthSpacing::Uniform) return near + (far - near) * f;
  return 1.0 / (1.0 / near + (1.0 / far - 1.0 / near) * f);
}

std::uint16_t DepthBinning::bin_of(double distance) const {
  double f = 0.0;
  if (spacing == DepthSpacing::Uniform) {
    f = (distance - near) / (far - near);
  } else {
    f = (1.0 / std::max(distance, 1e-12) - 1.0 / near) / (1.0 / far - 1.0 / near);
  }
  const double b = std::floor(f * count);
  if (!(b >= 0.0)) return 0;
  return static_cast<std::uint16_t>(std::min<double>(b, count - 1));
}

std::optional<RayHit> march_ray(const SemanticGrid& grid, const std::array<double, 3>& origin,
                                const std::array<double, 3>& dir, double max_distance) {
  const GridGeometry& g = grid.geometry;
  const double vs = g.voxel_size;
  const int ext[3] = {g.dims.x, g.dims.y, g.dims.z};
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = g.origin[a];
    hi[a] = lo[a] + ext[a] * vs;
  }

  double t_enter = 0.0;
  double t_exit = max_distance;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] >= hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (lo[a] - origin[a]) / dir[a];
    double t2 = (hi[a] - origin[a]) / dir[a];
    if (t1 > t2) std::swap(t1, t2);
    t_enter = std::max(t_enter, t1);
    t_exit = std::min(t_exit, t2);
  }
  if (t_enter >= t_exit) return std::nullopt;

  int idx[3], step[3];
  double t_max[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    const double p = origin[a] + dir[a] * t_enter;
    idx[a] = std::clamp(static_cast<int>(std::floor((p - lo[a]) / vs)), 0, ext[a] - 1);
    if (std::abs(dir[a]) < 1e-15) {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    } else {
      step[a] = dir[a] > 0 ? 1 : -1;
      const double boundary = lo[a] + (idx[a] + (step[a] > 0 ? 1 : 0)) * vs;
      t_max[a] = (boundary - origin[a]) / dir[a];
      t_delta[a] = vs / std::abs(dir[a]);
    }
  }

  double t_cur = t_enter;
  while (true) {
    const std::size_t v = g.index(static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                                  static_cast<std::size_t>(idx[2]));
    const int axis = (t_max[0] <= t_max[1] && t_max[0] <= t_max[2]) ? 0 : (t_max[1] <= t_max[2] ? 1 : 2);
    const double t_next = t_max[axis];
    if (grid.labels[v] != 0) return RayHit{v, grid.labels[v], t_cur, std::min(t_next, t_exit)};
    if (t_next >= t_exit) return std::nullopt;
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= ext[axis]) return std::nullopt;
    t_cur = t_next;
    t_max[axis] += t_delta[axis];
  }
}

std::vector<CameraPose> default_camera_poses(const SceneParams& params) {
  // Rows of R are the camera x (right), y (down), z (forward) axes in world coordinates.
  static const std::array<std::array<float, 9>, 4> kRotations{{
      {0, -1, 0, 0, 0, -1, 1, 0, 0},   // looking +x
      {0, 1, 0, 0, 0, -1, -1, 0, 0},   // looking -x
      {1, 0, 0, 0, 0, -1, 0, 1, 0},    // looking +y
      {-1, 0, 0, 0, 0, -1, 0, -1, 0},  // looking -y
  }};
  if (params.cameras.count < 0 || params.cameras.count > 4) throw ValueError("camera count must be in [0, 4]");
  std::vector<CameraPose> poses;
  for (int i = 0; i < params.cameras.count; ++i) {
    CameraPose pose;
    pose.intrinsics = Intrinsics{params.cameras.focal, params.cameras.focal, params.cameras.width / 2.0f,
                                 params.cameras.height / 2.0f};
    pose.extrinsics.rotation = kRotations[static_cast<std::size_t>(i)];
    for (int r = 0; r < 3; ++r) {
      float t = 0.f;
      for (int c = 0; c < 3; ++c) t -= pose.extrinsics.rotation[r * 3 + c] * params.sensor[c];
      pose.extrinsics.translation[r] = t;
    }
    poses.push_back(pose);
  }
  return poses;
}

std::vector<CameraView> render_views(const SemanticGrid& grid, std::span<const CameraPose> cameras,
                                     std::uint16_t height, std::uint16_t width, const DepthBinning& depth) {
  const std::size_t C = grid.num_classes;
  std::vector<CameraView> views;
  for (const CameraPose& cam : cameras) {
    CameraView view;
    view.intrinsics = cam.intrinsics;
    view.extrinsics = cam.extrinsics;
    view.num_depth_bins = depth.count;
    view.features = Tensor(Shape{C + 1, height, width});
    view.depth_bins.assign(std::size_t{height} * width, static_cast<std::uint16_t>(depth.count - 1));
    const std::array<double, 3> origin = cam.extrinsics.camera_center();
    const std::size_t plane = std::size_t{height} * width;
    for (std::size_t v = 0; v < height; ++v) {
      for (std::size_t u = 0; u < width; ++u) {
        const std::size_t px = v * width + u;
        const auto dir = cam.extrinsics.pixel_ray(cam.intrinsics, u, v);
        const auto hit = march_ray(grid, origin, dir, depth.far);
        if (hit) {
          view.depth_bins[px] = depth.bin_of(hit->entry);
          view.features[hit->label * plane + px] = 1.0;
          view.features[C * plane + px] = static_cast<float>(std::min(1.0, hit->entry / depth.far));
        } else {
          view.features[px] = 1.0;
          view.features[C * plane + px] = 1.0;
        }
      }
    }
    views.push_back(std::move(view));
  }
  return views;
}

SceneSample gen_scene(std::uint64_t seed, const SceneParams& params) {
  params.geometry.validate();
  const GridDims& dims = params.geometry.dims;
  if (params.num_classes < 2) throw ValueError("scenes need at least the empty and ground classes");
  if (params.num_objects < 0) throw ValueError("object count must be non-negative");
  if (params.num_objects > 0 && params.num_classes < 3) throw ValueError("objects need at least one class beyond ground");
  if (params.min_box_extent < 1 || params.max_box_extent < params.min_box_extent ||
      params.max_box_extent > std::min<int>(dims.x, dims.y)) {
    throw ValueError("invalid box extent range");
  }
  if (!(params.lidar.dropout >= 0.0 && params.lidar.dropout <= 1.0)) throw ValueError("lidar dropout must be in [0, 1]");

  Rng rng(derive_seed(seed, kSceneStream));
  SceneSample scene;
  scene.seed = seed;
  scene.grid = SemanticGrid(params.geometry, params.num_classes);
  for (std::size_t x = 0; x < dims.x; ++x)
    for (std::size_t y = 0; y < dims.y; ++y) scene.grid.set(x, y, 0, 1);

  auto sensor_cell = params.geometry.locate(params.sensor[0], params.sensor[1], params.sensor[2]);
  const int sx0 = sensor_cell ? (*sensor_cell)[0] : -100;
  const int sy0 = sensor_cell ? (*sensor_cell)[1] : -100;
  const Box keep_out{sx0 - kSensorClearance, sy0 - kSensorClearance, 2 * kSensorClearance + 1,
                     2 * kSensorClearance + 1, 1, 0};
  const int max_height = std::max(1, std::min<int>(params.max_box_extent, dims.z - 2));

  std::vector<Box> boxes;
  for (int obj = 0; obj < params.num_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Box b{};
      b.sx = rng.uniform_int(params.min_box_extent, params.max_box_extent);
      b.sy = rng.uniform_int(params.min_box_extent, params.max_box_extent);
      b.sz = rng.uniform_int(1, max_height);
      b.x0 = rng.uniform_int(0, dims.x - b.sx);
      b.y0 = rng.uniform_int(0, dims.y - b.sy);
      b.label = static_cast<std::uint8_t>(rng.uniform_int(2, params.num_classes - 1));
      if (b.overlaps(keep_out)) continue;
      if (std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) { return o.overlaps(b); })) continue;
      boxes.push_back(b);
      placed = true;
    }
    if (!placed) {
      throw ValueError("scene params infeasible: could not place object " + std::to_string(obj + 1) + " of " +
                       std::to_string(params.num_objects));
    }
  }
  for (const Box& b : boxes)
    for (int x = b.x0; x < b.x0 + b.sx; ++x)
      for (int y = b.y0; y < b.y0 + b.sy; ++y)
        for (int z = 1; z <= b.sz; ++z)
          scene.grid.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z), b.label);

  const std::array<double, 3> sensor{params.sensor[0], params.sensor[1], params.sensor[2]};
  const LidarParams& lp = params.lidar;
  const double deg = std::numbers::pi / 180.0;
  for (int ie = 0; ie < lp.elevation_steps; ++ie) {
    const double frac = lp.elevation_steps > 1 ? static_cast<double>(ie) / (lp.elevation_steps - 1) : 0.5;
    const double el = (lp.elevation_min_deg + (lp.elevation_max_deg - lp.elevation_min_deg) * frac) * deg;
    for (int ia = 0; ia < lp.azimuth_steps; ++ia) {
      const double az = 2.0 * std::numbers::pi * ia / lp.azimuth_steps;
      const bool dropped = rng.uniform() < lp.dropout;
      if (dropped) continue;
      const std::array<double, 3> dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const auto hit = march_ray(scene.grid, sensor, dir, lp.max_range);
      if (!hit) continue;
      const double s = 0.5 * (hit->entry + hit->exit);
      LidarPoint p;
      p.x = static_cast<float>(sensor[0] + s * dir[0]);
      p.y = static_cast<float>(sensor[1] + s * dir[1]);
      p.z = static_cast<float>(sensor[2] + s * dir[2]);
      // Grazing hits can round out of the voxel once stored as float; drop those.
      const auto cell = params.geometry.locate(p.x, p.y, p.z);
      if (!cell || params.geometry.index(static_cast<std::size_t>((*cell)[0]), static_cast<std::size_t>((*cell)[1]),
                                         static_cast<std::size_t>((*cell)[2])) != hit->voxel) {
        continue;
      }
      const double base = 0.1 + 0.8 * hit->label / std::max(1, params.num_classes - 1);
      p.intensity = static_cast<float>(std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0));
      scene.points.push_back(p);
    }
  }

  const auto poses = default_camera_poses(params);
  scene.views = render_views(scene.grid, poses, params.cameras.height, params.cameras.width, params.depth);
  return scene;
}

}  // namespace occgen
