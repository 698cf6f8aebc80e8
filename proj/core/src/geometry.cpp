// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "occgen/error.hpp"
#include "occgen/ops.hpp"

namespace occgen {

namespace {

Tensor conv_weight(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  const double fan_in = static_cast<double>(cin * k * k * k);
  return init_normal({cout, cin, k, k, k}, 1.0 / std::sqrt(fan_in), rng);
}

void add_conv(ParamSet& params, const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  params.add(name + ".w", conv_weight(cout, cin, k, rng));
  params.add(name + ".b", Tensor(Shape{cout}));
}

Var conv(BoundParams& params, const std::string& name, const Var& x, std::size_t stride = 1) {
  const Var w = params(name + ".w");
  const std::size_t k = w.value().dim(2);
  return conv3d(x, w, params(name + ".b"), {stride, k / 2});
}

}  // namespace

void EncoderConfig::validate() const {
  if (image_channels == 0 || feature_channels == 0) throw ValueError("encoder channel counts must be positive");
  if (!(tau > 0.0)) throw ValueError("gumbel temperature must be positive");
  if (dilation < 0) throw ValueError("dilation rounds must be non-negative");
  if (depth.count == 0 || !(depth.near > 0.0) || !(depth.far > depth.near)) throw ValueError("invalid depth binning");
}

void init_encoder(ParamSet& params, const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t cf = config.feature_channels;
  const std::size_t ci = config.image_channels;
  const std::size_t nd = config.depth.count;
  add_conv(params, "enc.lidar.c1", cf, 2, 3, rng);
  add_conv(params, "enc.lidar.c2", cf, cf, 3, rng);
  params.add("enc.depth.w", init_normal({ci, nd}, 1.0 / std::sqrt(static_cast<double>(ci)), rng));
  params.add("enc.depth.b", Tensor(Shape{nd}));
  add_conv(params, "enc.cam.proj", cf, ci, 1, rng);
  params.add("enc.mask.w", Tensor(Shape{1, 1, 3, 3, 3}, 0.25));
  params.add("enc.mask.b", Tensor(Shape{1}));
  add_conv(params, "enc.fuse.p", cf, cf, 3, rng);
  add_conv(params, "enc.fuse.c", cf, cf, 3, rng);
  params.add("enc.fuse.gate.w", Tensor(Shape{cf, 2 * cf, 3, 3, 3}));
  params.add("enc.fuse.gate.b", Tensor(Shape{cf}));
  for (int s = 1; s <= 3; ++s) {
    const std::string stage = "enc.bb.s" + std::to_string(s);
    add_conv(params, stage + ".down", cf, cf, 3, rng);
    add_conv(params, stage + ".res", cf, cf, 3, rng);
  }
}

Var lidar_stream(BoundParams& params, const Var& vox) {
  const Var h = silu(conv(params, "enc.lidar.c1", vox));
  return silu(conv(params, "enc.lidar.c2", h));
}

Var depth_head(BoundParams& params, const Var& features) {
  const Shape& s = features.shape();
  if (s.size() != 3) throw ShapeError("depth_head: expected [C, H, W], got " + shape_string(s));
  const std::size_t hw = s[1] * s[2];
  const Var flat = transpose(reshape(features, {s[0], hw}));
  const Var logits = linear(flat, params("enc.depth.w"), params("enc.depth.b"));
  const std::size_t nd = logits.shape()[1];
  return reshape(transpose(logits), {nd, s[1], s[2]});
}

Tensor gumbel_noise(const Shape& shape, Rng& rng) {
  Tensor g(shape);
  for (double& v : g.data()) v = rng.gumbel();
  return g;
}

Var hard_gumbel_onehot(const Var& logits, double tau, const Tensor& gumbel, std::size_t axis) {
  if (!(tau > 0.0)) throw ValueError("hard_gumbel_onehot: tau must be positive");
  const Shape& s = logits.shape();
  if (gumbel.shape() != s) throw ShapeError("hard_gumbel_onehot: gumbel noise shape mismatch");
  if (axis >= s.size()) throw ShapeError("hard_gumbel_onehot: axis out of range");
  Tape& tape = *logits.tape();
  const Var soft = softmax(affine(add(logits, tape.constant(gumbel)), 1.0 / tau), axis);

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t n = s[axis];
  const Tensor& z = logits.value();
  Tensor hard(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      std::size_t best = 0;
      double best_v = z[base] + gumbel[base];
      for (std::size_t k = 1; k < n; ++k) {
        const double v = z[base + k * inner] + gumbel[base + k * inner];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      hard[base + best * inner] = 1.0;
    }
  return straight_through(std::move(hard), soft);
}

std::vector<long> splat_targets(const CameraView& view, const DepthBinning& depth, const GridGeometry& geometry) {
  if (view.intrinsics.fx == 0.f || view.intrinsics.fy == 0.f) throw ValueError("degenerate camera: zero focal length");
  const std::size_t h = view.height(), w = view.width(), nd = depth.count;
  const std::array<double, 3> origin = view.extrinsics.camera_center();
  std::vector<long> targets(nd * h * w, -1);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      const auto dir = view.extrinsics.pixel_ray(view.intrinsics, u, v);
      for (std::size_t d = 0; d < nd; ++d) {
        const double dist = depth.center(d);
        const auto cell = geometry.locate(origin[0] + dist * dir[0], origin[1] + dist * dir[1], origin[2] + dist * dir[2]);
        if (cell) {
          targets[(d * h + v) * w + u] = static_cast<long>(geometry.index(static_cast<std::size_t>((*cell)[0]),
                                                                          static_cast<std::size_t>((*cell)[1]),
                                                                          static_cast<std::size_t>((*cell)[2])));
        }
      }
    }
  return targets;
}

Var splat(const Var& features, const Var& onehot, std::span<const long> targets, const GridDims& dims) {
  const Shape& fs = features.shape();
  const Shape& os = onehot.shape();
  if (fs.size() != 3 || os.size() != 3 || fs[1] != os[1] || fs[2] != os[2]) {
    throw ShapeError("splat: features " + shape_string(fs) + " one-hot " + shape_string(os));
  }
  if (targets.size() != onehot.numel()) throw ShapeError("splat: target table size mismatch");
  const std::size_t C = fs[0], D = os[0], P = fs[1] * fs[2];
  const std::size_t vol = dims.count();
  Tensor out(Shape{C, dims.x, dims.y, dims.z});
  const Tensor& fv = features.value();
  const Tensor& ov = onehot.value();
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t p = 0; p < P; ++p) {
      const long t = targets[d * P + p];
      const double wgt = ov[d * P + p];
      if (t < 0 || wgt == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) out[c * vol + static_cast<std::size_t>(t)] += fv[c * P + p] * wgt;
    }
  std::vector<long> table(targets.begin(), targets.end());
  return features.tape()->record(
      "splat", std::move(out), {features, onehot},
      [features, onehot, table = std::move(table), C, D, P, vol](const Tensor&, const Tensor& g,
                                                                 std::span<Tensor* const> gin) {
        const Tensor& fv = features.value();
        const Tensor& ov = onehot.value();
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t p = 0; p < P; ++p) {
            const long t = table[d * P + p];
            if (t < 0) continue;
            const auto ti = static_cast<std::size_t>(t);
            const double wgt = ov[d * P + p];
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double gc = g[c * vol + ti];
              if (gin[0]) (*gin[0])[c * P + p] += gc * wgt;
              dot += gc * fv[c * P + p];
            }
            if (gin[1]) (*gin[1])[d * P + p] += dot;
          }
      });
}

Var lift_splat(BoundParams& params, std::span<const Var> features, std::span<const Var> onehots,
               std::span<const std::vector<long>> targets, const GridDims& dims) {
  if (features.empty() || features.size() != onehots.size() || features.size() != targets.size()) {
    throw ShapeError("lift_splat: need matching, non-empty view lists");
  }
  Var volume = splat(features[0], onehots[0], targets[0], dims);
  for (std::size_t i = 1; i < features.size(); ++i) volume = add(volume, splat(features[i], onehots[i], targets[i], dims));
  return conv(params, "enc.cam.proj", volume);
}

Tensor dilate(const Tensor& occ, int rounds) {
  if (occ.rank() != 3) throw ShapeError("dilate: expected [X, Y, Z], got " + shape_string(occ.shape()));
  const long X = static_cast<long>(occ.dim(0)), Y = static_cast<long>(occ.dim(1)), Z = static_cast<long>(occ.dim(2));
  Tensor cur = occ;
  for (int r = 0; r < rounds; ++r) {
    Tensor next(occ.shape());
    for (long x = 0; x < X; ++x)
      for (long y = 0; y < Y; ++y)
        for (long z = 0; z < Z; ++z) {
          double m = 0.0;
          for (long dx = std::max(0L, x - 1); dx <= std::min(X - 1, x + 1); ++dx)
            for (long dy = std::max(0L, y - 1); dy <= std::min(Y - 1, y + 1); ++dy)
              for (long dz = std::max(0L, z - 1); dz <= std::min(Z - 1, z + 1); ++dz)
                m = std::max(m, cur[static_cast<std::size_t>((dx * Y + dy) * Z + dz)]);
          next[static_cast<std::size_t>((x * Y + y) * Z + z)] = m;
        }
    cur = std::move(next);
  }
  return cur;
}

Var geometry_mask(BoundParams& params, const Tensor& occupancy, int rounds) {
  const Tensor dense = dilate(occupancy, rounds);
  const Shape& s = occupancy.shape();
  Tape& tape = params.tape();
  const Var x = tape.constant(dense.reshaped({1, s[0], s[1], s[2]}));
  const Var logits = conv(params, "enc.mask", x);
  return reshape(softmax(logits, 3), s);
}

Var apply_mask(const Var& features, const Var& mask) {
  const Shape& fs = features.shape();
  const Shape& ms = mask.shape();
  if (fs.size() != 4 || ms.size() != 3 || !std::equal(ms.begin(), ms.end(), fs.begin() + 1)) {
    throw ShapeError("apply_mask: features " + shape_string(fs) + " mask " + shape_string(ms));
  }
  return mul(features, mask);
}

Var adaptive_fuse(BoundParams& params, const Var& lidar, const Var& camera) {
  if (lidar.shape() != camera.shape()) {
    throw ShapeError("adaptive_fuse: " + shape_string(lidar.shape()) + " vs " + shape_string(camera.shape()));
  }
  const Var parts[2] = {conv(params, "enc.fuse.p", lidar), conv(params, "enc.fuse.c", camera)};
  const Var gate = sigmoid(conv(params, "enc.fuse.gate", concat(parts)));
  return add(mul(gate, lidar), mul(affine(gate, -1.0, 1.0), camera));
}

FusionVolume backbone(BoundParams& params, const Var& fused) {
  const Shape& s = fused.shape();
  if (s.size() != 4 || s[1] % 8 || s[2] % 8 || s[3] % 8) {
    throw ShapeError("backbone: spatial extents must be multiples of 8, got " + shape_string(s));
  }
  FusionVolume levels;
  Var x = fused;
  for (int stage = 1; stage <= 3; ++stage) {
    const std::string name = "enc.bb.s" + std::to_string(stage);
    const Var a = silu(conv(params, name + ".down", x, 2));
    x = silu(add(a, conv(params, name + ".res", a)));
    levels.push_back(x);
  }
  return levels;
}

EncoderOutput encode(BoundParams& params, const SceneSample& scene, const EncoderConfig& config, Rng* gumbel_rng) {
  const GridGeometry& geom = scene.grid.geometry;
  const GridDims& dims = geom.dims;
  Tape& tape = params.tape();
  if (scene.views.empty()) throw ValueError("encode: scene has no camera views");

  const Tensor vox = voxelize_points(scene.points, geom);
  const Var lidar = lidar_stream(params, tape.constant(vox));

  EncoderOutput out;
  std::vector<Var> feats, onehots;
  std::vector<std::vector<long>> targets;
  for (const CameraView& view : scene.views) {
    if (view.channels() != config.image_channels) throw ShapeError("encode: camera channel count mismatch");
    const Var f = tape.constant(view.features);
    const Var logits = depth_head(params, f);
    const Tensor g = gumbel_rng ? gumbel_noise(logits.shape(), *gumbel_rng) : Tensor(logits.shape());
    feats.push_back(f);
    onehots.push_back(hard_gumbel_onehot(logits, config.tau, g));
    targets.push_back(splat_targets(view, config.depth, geom));
    out.depth_logits.push_back(logits);
  }
  const Var camera = lift_splat(params, feats, onehots, targets, dims);

  const Tensor occ = Tensor(Shape{dims.x, dims.y, dims.z},
                            std::vector<double>(vox.data().begin(), vox.data().begin() + static_cast<long>(dims.count())));
  const Var masked = apply_mask(camera, geometry_mask(params, occ, config.dilation));
  out.levels = backbone(params, adaptive_fuse(params, lidar, masked));
  return out;
}

}  // namespace occgen
