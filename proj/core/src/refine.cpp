// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/refine.hpp"

#include <algorithm>
#include <cmath>

#include "occgen/error.hpp"
#include "occgen/ops.hpp"

namespace occgen {

namespace {

constexpr std::size_t kLevels = 3;

std::string layer_name(std::size_t layer) { return "dec.l" + std::to_string(layer); }

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  return init_normal({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
}

/// Offset bias: point k pushed along axis (k / 2) % 3, sign alternating, growing with k / 6.
Tensor offset_pattern(std::size_t points, double magnitude) {
  Tensor b(Shape{3 * points});
  for (std::size_t k = 0; k < points; ++k) {
    const std::size_t axis = (k / 2) % 3;
    const double sign = k % 2 ? -1.0 : 1.0;
    b[3 * k + axis] = sign * magnitude * static_cast<double>(1 + k / 6);
  }
  return b;
}

void add_deform(ParamSet& params, const std::string& prefix, const DecoderConfig& config) {
  const std::size_t d = config.width, n = config.points;
  params.add(prefix + ".off.w", Tensor(Shape{d, 3 * n}));
  params.add(prefix + ".off.b", offset_pattern(n, config.offset_init));
  params.add(prefix + ".att.w", Tensor(Shape{d, n}));
  params.add(prefix + ".att.b", Tensor(Shape{n}));
}

DeformProjections bind_deform(BoundParams& params, const std::string& prefix) {
  return {params(prefix + ".off.w"), params(prefix + ".off.b"), params(prefix + ".att.w"), params(prefix + ".att.b")};
}

/// [n, d] queries of a level -> [d, a, b, c] volume.
Var to_volume(const Var& queries, const GridDims& dims) {
  const std::size_t d = queries.shape()[1];
  return reshape(transpose(queries), {d, dims.x, dims.y, dims.z});
}

GridDims dims_of(const Var& volume) {
  const Shape& s = volume.shape();
  return GridDims{static_cast<std::uint16_t>(s[1]), static_cast<std::uint16_t>(s[2]), static_cast<std::uint16_t>(s[3])};
}

}  // namespace

void DecoderConfig::validate() const {
  if (num_classes < 2) throw ValueError("decoder needs at least 2 classes");
  if (width == 0 || feature_channels == 0) throw ValueError("decoder widths must be positive");
  if (layers < 1) throw ValueError("decoder needs L >= 1");
  if (points < 1) throw ValueError("decoder needs N >= 1");
}

Tensor reference_points(const GridDims& dims) {
  Tensor refs(Shape{dims.count(), 3});
  std::size_t i = 0;
  for (std::size_t x = 0; x < dims.x; ++x)
    for (std::size_t y = 0; y < dims.y; ++y)
      for (std::size_t z = 0; z < dims.z; ++z, ++i) {
        refs[3 * i] = (static_cast<double>(x) + 0.5) / dims.x;
        refs[3 * i + 1] = (static_cast<double>(y) + 0.5) / dims.y;
        refs[3 * i + 2] = (static_cast<double>(z) + 0.5) / dims.z;
      }
  return refs;
}

void init_decoder(ParamSet& params, const DecoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.width, C = config.num_classes, cf = config.feature_channels;
  for (std::size_t i = 1; i <= kLevels; ++i) {
    const std::string p = "dec.down.l" + std::to_string(i);
    params.add(p + ".w", normal_matrix(C, d, rng));
    params.add(p + ".b", Tensor(Shape{d}));
  }
  init_time_embed(params, "dec.time", config.time, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string ln = layer_name(l);
    for (const char* block : {".ca", ".sa"}) {
      const std::string b = ln + block;
      params.add(b + ".norm.g", Tensor(Shape{d}, 1.0));
      params.add(b + ".norm.b", Tensor(Shape{d}));
      params.add(b + ".out.w", Tensor(Shape{d, d}));
      params.add(b + ".out.b", Tensor(Shape{d}));
    }
    for (std::size_t j = 1; j <= kLevels; ++j) {
      const std::string b = ln + ".ca.l" + std::to_string(j);
      params.add(b + ".value.w", init_normal({d, cf, 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(cf)), rng));
      params.add(b + ".value.b", Tensor(Shape{d}));
      add_deform(params, b, config);
    }
    params.add(ln + ".sa.value.w", normal_matrix(d, d, rng));
    params.add(ln + ".sa.value.b", Tensor(Shape{d}));
    add_deform(params, ln + ".sa", config);
    const auto td = static_cast<std::size_t>(config.time.dim);
    for (const char* f : {".film.scale", ".film.shift"}) {
      params.add(ln + f + ".w", Tensor(Shape{td, d}));
      params.add(ln + f + ".b", Tensor(Shape{d}));
    }
  }
  for (std::size_t i = 1; i <= kLevels; ++i) {
    const std::string p = "dec.up.l" + std::to_string(i);
    params.add(p + ".w", init_normal({d, d, 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    params.add(p + ".b", Tensor(Shape{d}));
  }
  params.add("dec.head.c1.w", init_normal({d, d, 3, 3, 3}, 1.0 / std::sqrt(27.0 * static_cast<double>(d)), rng));
  params.add("dec.head.c1.b", Tensor(Shape{d}));
  params.add("dec.head.c2.w", init_normal({C, d, 1, 1, 1}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  params.add("dec.head.c2.b", Tensor(Shape{C}));
}

QueryPyramid downsample_noise(BoundParams& params, const Var& noise_map) {
  const Shape& s = noise_map.shape();
  if (s.size() != 4 || s[1] % 8 || s[2] % 8 || s[3] % 8) {
    throw ShapeError("downsample_noise: spatial extents must be multiples of 8, got " + shape_string(s));
  }
  QueryPyramid pyramid;
  Var x = noise_map;
  for (std::size_t i = 1; i <= kLevels; ++i) {
    x = avg_pool3d(x);
    const GridDims dims = dims_of(x);
    const std::string p = "dec.down.l" + std::to_string(i);
    const Var flat = transpose(reshape(x, {s[0], dims.count()}));
    pyramid.push_back({linear(flat, params(p + ".w"), params(p + ".b")), dims, reference_points(dims)});
  }
  return pyramid;
}

Var attention_weights(const Var& queries, const DeformProjections& proj) {
  return softmax(linear(queries, proj.weight_w, proj.weight_b), 1);
}

Var deform_aggregate(const Var& queries, const Tensor& refs, const Var& values, const DeformProjections& proj,
                     std::size_t points) {
  const Shape& qs = queries.shape();
  const Shape& vs = values.shape();
  if (qs.size() != 2 || vs.size() != 4 || refs.rank() != 2 || refs.dim(0) != qs[0] || refs.dim(1) != 3) {
    throw ShapeError("deform_aggregate: queries " + shape_string(qs) + " refs " + shape_string(refs.shape()) +
                     " values " + shape_string(vs));
  }
  const std::size_t n = qs[0];
  Tape& tape = *queries.tape();
  Tensor base(Shape{n * points, 3});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < points; ++k)
      for (std::size_t a = 0; a < 3; ++a) {
        base[(i * points + k) * 3 + a] = refs[3 * i + a] * static_cast<double>(vs[a + 1]) - 0.5;
      }
  const Tensor extent = Tensor::vector({static_cast<double>(vs[1]), static_cast<double>(vs[2]), static_cast<double>(vs[3])});
  const Var offsets = reshape(linear(queries, proj.offset_w, proj.offset_b), {n * points, 3});
  const Var pts = add(mul(offsets, tape.constant(extent)), tape.constant(std::move(base)));
  const Var samples = reshape(trilinear_sample(values, pts), {n, points, vs[0]});
  return weighted_point_sum(samples, attention_weights(queries, proj));
}

Var da3d(const Var& queries, const Tensor& refs, const Var& values, const DeformProjections& proj, const Var& out_w,
         const Var& out_b, std::size_t points) {
  return linear(deform_aggregate(queries, refs, values, proj, points), out_w, out_b);
}

QueryPyramid dca3d(BoundParams& params, const QueryPyramid& pyramid, const FusionVolume& fusion, std::size_t layer,
                   std::size_t points) {
  if (pyramid.size() != fusion.size()) throw ShapeError("dca3d: query and fusion level counts differ");
  const std::string b = layer_name(layer) + ".ca";
  std::vector<Var> values;
  std::vector<DeformProjections> projs;
  for (std::size_t j = 0; j < fusion.size(); ++j) {
    const std::string p = b + ".l" + std::to_string(j + 1);
    const Var w = params(p + ".value.w");
    values.push_back(conv3d(fusion[j], w, params(p + ".value.b")));
    projs.push_back(bind_deform(params, p));
  }
  QueryPyramid out;
  for (const QueryLevel& level : pyramid) {
    const Var qn = layer_norm(level.queries, params(b + ".norm.g"), params(b + ".norm.b"));
    Var agg = deform_aggregate(qn, level.refs, values[0], projs[0], points);
    for (std::size_t j = 1; j < values.size(); ++j) agg = add(agg, deform_aggregate(qn, level.refs, values[j], projs[j], points));
    const Var update = linear(agg, params(b + ".out.w"), params(b + ".out.b"));
    out.push_back({add(level.queries, update), level.dims, level.refs});
  }
  return out;
}

QueryPyramid dsa3d(BoundParams& params, const QueryPyramid& pyramid, std::size_t layer, std::size_t points) {
  const std::string b = layer_name(layer) + ".sa";
  const DeformProjections proj = bind_deform(params, b);
  QueryPyramid out;
  for (const QueryLevel& level : pyramid) {
    const Var qn = layer_norm(level.queries, params(b + ".norm.g"), params(b + ".norm.b"));
    const Var values = to_volume(linear(qn, params(b + ".value.w"), params(b + ".value.b")), level.dims);
    const Var update = da3d(qn, level.refs, values, proj, params(b + ".out.w"), params(b + ".out.b"), points);
    out.push_back({add(level.queries, update), level.dims, level.refs});
  }
  return out;
}

QueryPyramid film(BoundParams& params, const QueryPyramid& pyramid, const Var& time_embedding, std::size_t layer) {
  const std::string b = layer_name(layer) + ".film";
  const std::size_t td = time_embedding.numel();
  const Var e = reshape(time_embedding, {1, td});
  const Var scale = linear(e, params(b + ".scale.w"), params(b + ".scale.b"));
  const Var shift = linear(e, params(b + ".shift.w"), params(b + ".shift.b"));
  const std::size_t d = scale.shape()[1];
  const Var gain = reshape(affine(scale, 1.0, 1.0), {d});
  const Var bias = reshape(shift, {d});
  QueryPyramid out;
  for (const QueryLevel& level : pyramid) out.push_back({add(mul(level.queries, gain), bias), level.dims, level.refs});
  return out;
}

Var upsample_merge(BoundParams& params, const QueryPyramid& pyramid, const GridDims& full) {
  Var total;
  for (std::size_t i = 0; i < pyramid.size(); ++i) {
    const QueryLevel& level = pyramid[i];
    const std::size_t factor = full.x / level.dims.x;
    if (factor * level.dims.x != full.x || factor * level.dims.y != full.y || factor * level.dims.z != full.z) {
      throw ShapeError("upsample_merge: level extents do not divide the full grid");
    }
    const std::string p = "dec.up.l" + std::to_string(i + 1);
    const Var up = upsample_nearest3d(to_volume(level.queries, level.dims), factor);
    const Var proj = conv3d(up, params(p + ".w"), params(p + ".b"));
    total = total ? add(total, proj) : proj;
  }
  return total;
}

Var occ_head(BoundParams& params, const Var& features) {
  const Var h = silu(conv3d(features, params("dec.head.c1.w"), params("dec.head.c1.b"), {1, 1}));
  return conv3d(h, params("dec.head.c2.w"), params("dec.head.c2.b"));
}

AnalogMap analog_from_logits(const Tensor& logits, double scale) {
  if (logits.rank() != 4) throw ShapeError("analog_from_logits: expected [C, X, Y, Z]");
  const std::size_t C = logits.dim(0), vol = logits.numel() / C;
  AnalogMap out{Tensor(logits.shape()), scale};
  for (std::size_t v = 0; v < vol; ++v) {
    double m = logits[v];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, logits[c * vol + v]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[c * vol + v] - m);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(logits[c * vol + v] - m) / z;
      out.values[c * vol + v] = (2.0 * p - 1.0) * scale;
    }
  }
  return out;
}

RefineOutput refine_once(BoundParams& params, const AnalogMap& noisy, int t, const FusionVolume& fusion,
                         const DecoderConfig& config) {
  const Shape& s = noisy.values.shape();
  if (s.size() != 4 || s[0] != config.num_classes) throw ShapeError("refine_once: noisy map must be [C, X, Y, Z]");
  Tape& tape = params.tape();
  const GridDims full{static_cast<std::uint16_t>(s[1]), static_cast<std::uint16_t>(s[2]), static_cast<std::uint16_t>(s[3])};
  QueryPyramid pyramid = downsample_noise(params, tape.constant(noisy.values));
  const Var temb = embed_time(params, "dec.time", t, config.time);
  for (std::size_t l = 0; l < config.layers; ++l) {
    pyramid = dca3d(params, pyramid, fusion, l, config.points);
    pyramid = dsa3d(params, pyramid, l, config.points);
    pyramid = film(params, pyramid, temb, l);
  }
  const Var logits = occ_head(params, upsample_merge(params, pyramid, full));
  return {logits, analog_from_logits(logits.value(), noisy.scale)};
}

UncertaintyMap uncertainty(const SemanticGrid& prev, const SemanticGrid& cur) {
  if (prev.geometry.dims != cur.geometry.dims) throw ShapeError("uncertainty: grid dimensions differ");
  UncertaintyMap out;
  out.changed.resize(cur.labels.size());
  for (std::size_t i = 0; i < cur.labels.size(); ++i) {
    out.changed[i] = prev.labels[i] != cur.labels[i] ? 1 : 0;
    out.count += out.changed[i];
  }
  return out;
}

InferenceResult progressive_infer(const Denoiser& denoiser, const GridGeometry& geometry, std::size_t num_classes,
                                  double scale, const SamplerConfig& sampler, const NoiseSchedule& schedule, Rng& rng) {
  InferenceResult result;
  result.times = time_pairs(sampler, schedule.steps);
  const GridDims& d = geometry.dims;
  AnalogMap state{Tensor(Shape{num_classes, d.x, d.y, d.z}), scale};
  for (double& v : state.values.data()) v = rng.normal();
  for (std::size_t i = 0; i < result.times.size(); ++i) {
    const auto [t_now, t_next] = result.times[i];
    auto [logits, z0_hat] = denoiser(state, t_now);
    result.grids.push_back(decode_occupancy(logits, geometry));
    if (i > 0) result.uncertainty.push_back(uncertainty(result.grids[i - 1], result.grids[i]));
    if (i + 1 == result.times.size()) {
      result.last_logits = std::move(logits);
      break;
    }
    state = sampler.strategy == SamplerStrategy::DDIM ? ddim_step(state, z0_hat, t_now, t_next, schedule)
                                                      : ddpm_step(state, z0_hat, t_now, t_next, schedule, rng);
  }
  return result;
}

}  // namespace occgen
