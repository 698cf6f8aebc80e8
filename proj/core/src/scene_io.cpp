// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/scene_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "occgen/error.hpp"

namespace occgen {

namespace detail {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 * 5 + 4 + 12 + 4 + 4;
constexpr std::size_t kViewHeaderBytes = 16 + 48 + 8;

void check_f32_exact(double v, const char* what) {
  if (static_cast<double>(static_cast<float>(v)) != v) {
    throw ValueError(std::string("scene value is not representable as f32: ") + what);
  }
}

}  // namespace

std::size_t scene_file_size(const SceneSample& scene) {
  std::size_t size = kHeaderBytes + scene.grid.geometry.dims.count() + 16 * scene.points.size();
  for (const CameraView& v : scene.views) size += kViewHeaderBytes + 4 * v.features.numel() + 2 * v.depth_bins.size();
  return size;
}

std::vector<char> encode_scene(const SceneSample& scene) {
  const SemanticGrid& grid = scene.grid;
  grid.validate();
  const GridDims& d = grid.geometry.dims;
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kSceneMagic, 4));
  w.put<std::uint16_t>(kSceneVersion);
  w.put<std::uint16_t>(grid.num_classes);
  w.put<std::uint16_t>(d.x);
  w.put<std::uint16_t>(d.y);
  w.put<std::uint16_t>(d.z);
  w.put<float>(grid.geometry.voxel_size);
  for (float o : grid.geometry.origin) w.put<float>(o);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.points.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.views.size()));
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) w.put<std::uint8_t>(grid.at(x, y, z));
  for (const LidarPoint& p : scene.points) {
    w.put<float>(p.x);
    w.put<float>(p.y);
    w.put<float>(p.z);
    w.put<float>(p.intensity);
  }
  for (const CameraView& v : scene.views) {
    v.validate();
    for (float f : {v.intrinsics.fx, v.intrinsics.fy, v.intrinsics.cx, v.intrinsics.cy}) w.put<float>(f);
    for (float f : v.extrinsics.rotation) w.put<float>(f);
    for (float f : v.extrinsics.translation) w.put<float>(f);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.height()));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.width()));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.channels()));
    w.put<std::uint16_t>(v.num_depth_bins);
    for (double f : v.features.data()) {
      check_f32_exact(f, "camera feature");
      w.put<float>(static_cast<float>(f));
    }
    for (std::uint16_t b : v.depth_bins) w.put<std::uint16_t>(b);
  }
  return w.bytes();
}

SceneSample decode_scene(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), "scene file");
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (std::string_view(bytes.data(), head) != std::string_view(kSceneMagic, head)) {
    throw FormatError(FormatError::Kind::BadMagic, "scene file: bad magic");
  }
  if (head < 4) throw FormatError(FormatError::Kind::Truncated, "scene file: truncated magic");
  r.get_bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kSceneVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "scene file: unsupported version " + std::to_string(version));
  }
  SceneSample scene;
  const auto classes = r.get<std::uint16_t>();
  GridGeometry geom;
  geom.dims.x = r.get<std::uint16_t>();
  geom.dims.y = r.get<std::uint16_t>();
  geom.dims.z = r.get<std::uint16_t>();
  geom.voxel_size = r.get<float>();
  for (float& o : geom.origin) o = r.get<float>();
  const auto point_count = r.get<std::uint32_t>();
  const auto view_count = r.get<std::uint32_t>();
  scene.grid = SemanticGrid(geom, classes);
  r.need(geom.dims.count());
  for (std::size_t z = 0; z < geom.dims.z; ++z)
    for (std::size_t y = 0; y < geom.dims.y; ++y)
      for (std::size_t x = 0; x < geom.dims.x; ++x) scene.grid.set(x, y, z, r.get<std::uint8_t>());
  try {
    scene.grid.validate();
  } catch (const Error& e) {
    throw FormatError(FormatError::Kind::Invalid, std::string("scene file: ") + e.what());
  }

  r.need(std::size_t{point_count} * 16);
  scene.points.resize(point_count);
  for (LidarPoint& p : scene.points) {
    p.x = r.get<float>();
    p.y = r.get<float>();
    p.z = r.get<float>();
    p.intensity = r.get<float>();
  }
  for (std::uint32_t i = 0; i < view_count; ++i) {
    CameraView v;
    v.intrinsics.fx = r.get<float>();
    v.intrinsics.fy = r.get<float>();
    v.intrinsics.cx = r.get<float>();
    v.intrinsics.cy = r.get<float>();
    for (float& f : v.extrinsics.rotation) f = r.get<float>();
    for (float& f : v.extrinsics.translation) f = r.get<float>();
    const auto h = r.get<std::uint16_t>();
    const auto wd = r.get<std::uint16_t>();
    const auto c = r.get<std::uint16_t>();
    v.num_depth_bins = r.get<std::uint16_t>();
    v.features = Tensor(Shape{c, h, wd});
    r.need(4 * v.features.numel());
    for (double& f : v.features.data()) f = r.get<float>();
    v.depth_bins.resize(std::size_t{h} * wd);
    r.need(2 * v.depth_bins.size());
    for (std::uint16_t& b : v.depth_bins) b = r.get<std::uint16_t>();
    try {
      v.validate();
    } catch (const Error& e) {
      throw FormatError(FormatError::Kind::Invalid, std::string("scene file view: ") + e.what());
    }
    scene.views.push_back(std::move(v));
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::Invalid, "scene file: trailing bytes");
  return scene;
}

void write_scene(const std::filesystem::path& path, const SceneSample& scene) {
  detail::write_file(path, encode_scene(scene));
}

SceneSample read_scene(const std::filesystem::path& path) { return decode_scene(detail::read_file(path)); }

}  // namespace occgen
