// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "occgen/geometry.hpp"
#include "occgen/objective.hpp"
#include "occgen/ops.hpp"
#include "occgen/pipeline.hpp"
#include "occgen/refine.hpp"

namespace occgen {

namespace {

constexpr double kTight = 1e-4;
constexpr double kLoose = 1e-3;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ParamSet randomized(const ParamSet& params, std::uint64_t seed, double stddev) {
  ParamSet out = params;
  Rng rng(seed);
  for (auto& [_, t] : out.tensors())
    for (double& v : t.data()) v = stddev * rng.normal();
  return out;
}

SemanticGrid random_grid(GridDims dims, std::uint16_t classes, Rng& rng) {
  SemanticGrid g(GridGeometry{dims, 0.4f, {0.f, 0.f, 0.f}}, classes);
  for (auto& l : g.labels) l = static_cast<std::uint8_t>(rng.below(classes));
  return g;
}

using ModuleBody = std::function<Var(BoundParams&, std::span<const Var>)>;

// Checks `inputs` followed by the parameters named in `names`, which are bound to
// tape leaves in place of the stored values.
double check_module(const ParamSet& params, const std::vector<std::string>& names, const std::vector<Tensor>& inputs,
                    const ModuleBody& body, const GradCheckOptions& opts, std::uint64_t seed) {
  std::vector<Tensor> all = inputs;
  for (const std::string& n : names) all.push_back(params.at(n));
  const std::size_t k = inputs.size();
  ScalarFn fn = [&](Tape& tape, std::span<const Var> leaves) {
    BoundParams bound(tape, params);
    for (std::size_t i = 0; i < names.size(); ++i) bound.bind(names[i], leaves[k + i]);
    return random_projection(body(bound, leaves.first(k)), seed);
  };
  return gradient_relative_error(fn, all, opts);
}

std::vector<std::string> names_with_prefix(const ParamSet& params, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [name, _] : params.tensors())
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

DecoderConfig small_decoder() {
  DecoderConfig c;
  c.num_classes = 3;
  c.feature_channels = 3;
  c.width = 4;
  c.layers = 1;
  c.points = 2;
  c.time = {4, 4};
  return c;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_channels = 3;
  c.feature_channels = 3;
  c.depth.count = 4;
  return c;
}

ParamSet decoder_params(std::uint64_t seed) {
  ParamSet p;
  Rng rng(seed);
  init_decoder(p, small_decoder(), rng);
  return randomized(p, seed + 1, 0.4);
}

ParamSet encoder_params(std::uint64_t seed) {
  ParamSet p;
  Rng rng(seed);
  init_encoder(p, small_encoder(), rng);
  return randomized(p, seed + 1, 0.4);
}

// Query pyramid for an 8^3 grid at width d, built from leaves [0, 3).
QueryPyramid pyramid_from(std::span<const Var> leaves) {
  QueryPyramid pyr;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto e = static_cast<std::uint16_t>(4 >> i);
    const GridDims dims{e, e, e};
    pyr.push_back({leaves[i], dims, reference_points(dims)});
  }
  return pyr;
}

std::vector<Tensor> pyramid_inputs(std::size_t d, Rng& rng) {
  return {random_tensor({64, d}, rng), random_tensor({8, d}, rng), random_tensor({1, d}, rng)};
}

Var stack_pyramid(const QueryPyramid& pyr) {
  std::vector<Var> parts;
  for (const QueryLevel& l : pyr) parts.push_back(l.queries);
  return concat(parts);
}

FusionVolume constant_fusion(Tape& tape, std::size_t cf, std::uint64_t seed) {
  Rng rng(seed);
  FusionVolume f;
  for (std::size_t e : {4, 2, 1}) f.push_back(tape.constant(random_tensor({cf, e, e, e}, rng)));
  return f;
}

// ---- elementary ops ------------------------------------------------------

double check_elementwise(const GradCheckOptions& o) {
  Rng rng(11);
  ScalarFn fn = [](Tape&, std::span<const Var> x) {
    const Var a = x[0], b = x[1], c = x[2];
    const Var pos = affine(square(b), 1.0, 0.5);
    std::vector<Var> terms{add(a, c),        sub(a, b),       mul(a, b),  div(a, pos), neg(a),
                           sigmoid(a),       silu(b),         exp(a),     log(pos),    square(a),
                           affine(a, 1.5, 0.2), mul(a, c)};
    Var total = random_projection(terms[0], 1);
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, random_projection(terms[i], 1 + i));
    return total;
  };
  return gradient_relative_error(fn, {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
                                 o);
}

double check_tensor_ops(const GradCheckOptions& o) {
  Rng rng(12);
  ScalarFn fn = [](Tape&, std::span<const Var> x) {
    const Var mm = matmul(x[0], x[1]);                 // [4, 3]
    const Var lin = linear(x[0], x[1], x[2]);          // [4, 3]
    const Var t = transpose(mm);                       // [3, 4]
    const Var cat = concat(std::vector<Var>{mm, lin});  // [8, 3]
    const Var sl = slice(cat, 2, 7);
    const Var ln = layer_norm(lin, x[2], x[2]);
    return add(add(random_projection(t, 1), random_projection(sl, 2)),
               add(add(random_projection(ln, 3), mean(reshape(mm, {12}))), sum(lin)));
  };
  return gradient_relative_error(fn, {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng), random_tensor({3}, rng)},
                                 o);
}

double check_conv3d(const GradCheckOptions& o) {
  Rng rng(13);
  ScalarFn fn = [](Tape&, std::span<const Var> x) {
    const Var same = conv3d(x[0], x[1], x[2], {1, 1});
    const Var down = conv3d(x[0], x[1], {}, {2, 1});
    const Var point = conv3d(x[0], x[3]);
    return add(add(random_projection(same, 1), random_projection(down, 2)), random_projection(point, 3));
  };
  return gradient_relative_error(fn,
                                 {random_tensor({2, 4, 4, 3}, rng), random_tensor({3, 2, 3, 3, 3}, rng),
                                  random_tensor({3}, rng), random_tensor({2, 2, 1, 1, 1}, rng)},
                                 o);
}

double check_softmax(const GradCheckOptions& o) {
  Rng rng(14);
  ScalarFn fn = [](Tape&, std::span<const Var> x) {
    return add(add(random_projection(softmax(x[0], 0), 1), random_projection(softmax(x[0], 2), 2)),
               random_projection(log_softmax(x[0], 1), 3));
  };
  return gradient_relative_error(fn, {random_tensor({3, 4, 5}, rng, -2.0, 2.0)}, o);
}

double check_pooling(const GradCheckOptions& o) {
  Rng rng(15);
  ScalarFn fn = [](Tape&, std::span<const Var> x) {
    return add(random_projection(avg_pool3d(x[0]), 1), random_projection(upsample_nearest3d(x[0], 2), 2));
  };
  return gradient_relative_error(fn, {random_tensor({2, 4, 2, 4}, rng)}, o);
}

double check_trilinear(const GradCheckOptions& o) {
  Rng rng(16);
  Tensor pts({10, 3});
  const double extent[3] = {3, 4, 3};
  for (std::size_t m = 0; m < 10; ++m)
    for (std::size_t a = 0; a < 3; ++a)
      pts[m * 3 + a] = static_cast<double>(rng.uniform_int(-1, static_cast<int>(extent[a]) - 1)) + 0.3;
  ScalarFn fn = [](Tape&, std::span<const Var> x) { return random_projection(trilinear_sample(x[0], x[1]), 1); };
  return gradient_relative_error(fn, {random_tensor({2, 3, 4, 3}, rng), pts}, o);
}

double check_weighted_point_sum(const GradCheckOptions& o) {
  Rng rng(17);
  ScalarFn fn = [](Tape&, std::span<const Var> x) { return random_projection(weighted_point_sum(x[0], x[1]), 1); };
  return gradient_relative_error(fn, {random_tensor({5, 3, 4}, rng), random_tensor({5, 3}, rng)}, o);
}

// ---- decoder -------------------------------------------------------------

double check_da3d(const GradCheckOptions& o) {
  Rng rng(21);
  const std::size_t n = 6, d = 4, points = 3;
  Tensor refs({n, 3});
  for (double& v : refs.data()) v = rng.uniform(0.1, 0.9);
  std::vector<Tensor> in{random_tensor({n, d}, rng),
                         random_tensor({3, 4, 4, 4}, rng),
                         random_tensor({d, 3 * points}, rng, -0.2, 0.2),
                         random_tensor({3 * points}, rng, -0.1, 0.1),
                         random_tensor({d, points}, rng),
                         random_tensor({points}, rng),
                         random_tensor({3, d}, rng),
                         random_tensor({d}, rng)};
  ScalarFn fn = [&](Tape&, std::span<const Var> x) {
    const DeformProjections proj{x[2], x[3], x[4], x[5]};
    return random_projection(da3d(x[0], refs, x[1], proj, x[6], x[7], points), 1);
  };
  return gradient_relative_error(fn, in, o);
}

double check_dca3d(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(22);
  Rng rng(23);
  const DecoderConfig c = small_decoder();
  return check_module(
      p, names_with_prefix(p, "dec.l0.ca"), pyramid_inputs(c.width, rng),
      [&](BoundParams& b, std::span<const Var> x) {
        const FusionVolume f = constant_fusion(b.tape(), c.feature_channels, 24);
        return stack_pyramid(dca3d(b, pyramid_from(x), f, 0, c.points));
      },
      o, 2);
}

double check_dsa3d(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(25);
  Rng rng(26);
  const DecoderConfig c = small_decoder();
  return check_module(
      p, names_with_prefix(p, "dec.l0.sa"), pyramid_inputs(c.width, rng),
      [&](BoundParams& b, std::span<const Var> x) { return stack_pyramid(dsa3d(b, pyramid_from(x), 0, c.points)); }, o,
      3);
}

double check_film(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(27);
  Rng rng(28);
  const DecoderConfig c = small_decoder();
  std::vector<Tensor> in = pyramid_inputs(c.width, rng);
  in.push_back(random_tensor({static_cast<std::size_t>(c.time.dim)}, rng));
  return check_module(
      p, names_with_prefix(p, "dec.l0.film"), in,
      [&](BoundParams& b, std::span<const Var> x) { return stack_pyramid(film(b, pyramid_from(x), x[3], 0)); }, o, 4);
}

double check_time_embed(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(29);
  const DecoderConfig c = small_decoder();
  return check_module(
      p, names_with_prefix(p, "dec.time"), {},
      [&](BoundParams& b, std::span<const Var>) { return embed_time(b, "dec.time", 137, c.time); }, o, 5);
}

double check_downsample(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(30);
  Rng rng(31);
  return check_module(
      p, names_with_prefix(p, "dec.down"), {random_tensor({3, 8, 8, 8}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return stack_pyramid(downsample_noise(b, x[0])); }, o, 6);
}

double check_upsample_merge(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(32);
  Rng rng(33);
  const DecoderConfig c = small_decoder();
  return check_module(
      p, names_with_prefix(p, "dec.up"), pyramid_inputs(c.width, rng),
      [&](BoundParams& b, std::span<const Var> x) { return upsample_merge(b, pyramid_from(x), GridDims{8, 8, 8}); }, o,
      7);
}

double check_occ_head(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(34);
  Rng rng(35);
  return check_module(
      p, names_with_prefix(p, "dec.head"), {random_tensor({4, 4, 4, 4}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return occ_head(b, x[0]); }, o, 8);
}

double check_refine_once(const GradCheckOptions& o) {
  const ParamSet p = decoder_params(36);
  Rng rng(37);
  const DecoderConfig c = small_decoder();
  AnalogMap noisy{random_tensor({3, 8, 8, 8}, rng), 0.01};
  std::vector<std::string> names;
  for (const auto& [name, _] : p.tensors()) names.push_back(name);
  return check_module(
      p, names, {},
      [&](BoundParams& b, std::span<const Var>) {
        const FusionVolume f = constant_fusion(b.tape(), c.feature_channels, 38);
        return refine_once(b, noisy, 421, f, c).logits;
      },
      o, 9);
}

// ---- losses --------------------------------------------------------------

struct LossCase {
  SemanticGrid gt;
  Tensor logits;
};

// Small enough that the sorted errors are far apart relative to the probe step.
LossCase loss_case(std::uint64_t seed) {
  Rng rng(seed);
  LossCase c;
  c.gt = random_grid({4, 4, 2}, 3, rng);
  c.logits = random_tensor({3, 4, 4, 2}, rng, -2.0, 2.0);
  return c;
}

double check_ce(const GradCheckOptions& o) {
  const LossCase c = loss_case(41);
  ScalarFn fn = [&](Tape&, std::span<const Var> x) { return ce_loss(x[0], c.gt); };
  return gradient_relative_error(fn, {c.logits}, o);
}

double check_lovasz(const GradCheckOptions& o) {
  const LossCase c = loss_case(42);
  ScalarFn fn = [&](Tape&, std::span<const Var> x) { return lovasz_softmax(softmax(x[0], 0), c.gt); };
  return gradient_relative_error(fn, {c.logits}, o);
}

double check_scal(ScalMode mode, std::uint64_t seed, const GradCheckOptions& o) {
  const LossCase c = loss_case(seed);
  ScalarFn fn = [&](Tape&, std::span<const Var> x) { return scal_loss(softmax(x[0], 0), c.gt, mode); };
  return gradient_relative_error(fn, {c.logits}, o);
}

double check_depth_loss(const GradCheckOptions& o) {
  Rng rng(45);
  std::vector<std::vector<std::uint16_t>> bins(2, std::vector<std::uint16_t>(12));
  for (auto& v : bins)
    for (auto& b : v) b = static_cast<std::uint16_t>(rng.below(4));
  std::vector<Tensor> in{random_tensor({4, 3, 4}, rng, -2.0, 2.0), random_tensor({4, 3, 4}, rng, -2.0, 2.0)};
  ScalarFn fn = [&](Tape&, std::span<const Var> x) { return depth_loss(x, bins); };
  return gradient_relative_error(fn, in, o);
}

// ---- encoder -------------------------------------------------------------

double check_lidar_stream(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(51);
  Rng rng(52);
  return check_module(
      p, names_with_prefix(p, "enc.lidar"), {random_tensor({2, 4, 4, 4}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return lidar_stream(b, x[0]); }, o, 10);
}

double check_depth_head(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(53);
  Rng rng(54);
  return check_module(
      p, names_with_prefix(p, "enc.depth"), {random_tensor({3, 3, 4}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return depth_head(b, x[0]); }, o, 11);
}

double check_lift_splat(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(55);
  Rng rng(56);
  const GridDims dims{4, 4, 4};
  std::vector<std::vector<long>> targets(2, std::vector<long>(4 * 6));
  for (auto& t : targets)
    for (long& v : t) v = static_cast<long>(rng.below(dims.count() + 8)) - 8;
  std::vector<Tensor> in{random_tensor({3, 2, 3}, rng), random_tensor({3, 2, 3}, rng), random_tensor({4, 2, 3}, rng),
                         random_tensor({4, 2, 3}, rng)};
  return check_module(
      p, names_with_prefix(p, "enc.cam"), in,
      [&](BoundParams& b, std::span<const Var> x) {
        const std::vector<Var> f{x[0], x[1]}, h{x[2], x[3]};
        return lift_splat(b, f, h, targets, dims);
      },
      o, 12);
}

double check_geometry_mask(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(57);
  Rng rng(58);
  Tensor occ({4, 4, 4});
  for (double& v : occ.data()) v = rng.below(5) == 0 ? 1.0 : 0.0;
  return check_module(
      p, names_with_prefix(p, "enc.mask"), {random_tensor({3, 4, 4, 4}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return apply_mask(x[0], geometry_mask(b, occ, 1)); }, o, 13);
}

double check_adaptive_fuse(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(59);
  Rng rng(60);
  return check_module(
      p, names_with_prefix(p, "enc.fuse"), {random_tensor({3, 4, 4, 4}, rng), random_tensor({3, 4, 4, 4}, rng)},
      [&](BoundParams& b, std::span<const Var> x) { return adaptive_fuse(b, x[0], x[1]); }, o, 14);
}

double check_backbone(const GradCheckOptions& o) {
  const ParamSet p = encoder_params(61);
  Rng rng(62);
  return check_module(
      p, names_with_prefix(p, "enc.bb"), {random_tensor({3, 8, 8, 8}, rng)},
      [&](BoundParams& b, std::span<const Var> x) {
        const FusionVolume levels = backbone(b, x[0]);
        Var total = random_projection(levels[0], 15);
        for (std::size_t i = 1; i < levels.size(); ++i) total = add(total, random_projection(levels[i], 15 + i));
        return total;
      },
      o, 15);
}

// The straight-through forward equals the hard sample, so subtracting it and
// adding the soft probabilities as constants leaves a function whose value is
// the soft surrogate while its tape gradient is the straight-through one.
double check_hard_gumbel(const GradCheckOptions& o) {
  Rng rng(63);
  const double tau = 0.7;
  const Tensor g = gumbel_noise({4, 3, 2}, rng);
  ScalarFn fn = [&](Tape& tape, std::span<const Var> x) {
    const Var hard = hard_gumbel_onehot(x[0], tau, g);
    Tape scratch;
    const Var z = scratch.constant(x[0].value());
    const Tensor soft = softmax(affine(add(z, scratch.constant(g)), 1.0 / tau), 0).value();
    const Var surrogate = add(sub(hard, tape.constant(hard.value())), tape.constant(soft));
    return random_projection(surrogate, 16);
  };
  return gradient_relative_error(fn, {random_tensor({4, 3, 2}, rng, -1.0, 1.0)}, o);
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases() {
  return {
      {"elementwise", kTight, check_elementwise},
      {"tensor_ops", kTight, check_tensor_ops},
      {"conv3d", kTight, check_conv3d},
      {"softmax", kTight, check_softmax},
      {"pooling", kTight, check_pooling},
      {"trilinear_sample", kTight, check_trilinear},
      {"weighted_point_sum", kTight, check_weighted_point_sum},
      {"da3d", kLoose, check_da3d},
      {"dca3d", kLoose, check_dca3d},
      {"dsa3d", kLoose, check_dsa3d},
      {"film", kLoose, check_film},
      {"time_embed", kTight, check_time_embed},
      {"downsample_noise", kTight, check_downsample},
      {"upsample_merge", kTight, check_upsample_merge},
      {"occ_head", kTight, check_occ_head},
      {"refine_once", kLoose, check_refine_once},
      {"ce_loss", kTight, check_ce},
      {"lovasz_softmax", kLoose, check_lovasz},
      {"scal_geo", kLoose, [](const GradCheckOptions& o) { return check_scal(ScalMode::Geometric, 43, o); }},
      {"scal_sem", kLoose, [](const GradCheckOptions& o) { return check_scal(ScalMode::Semantic, 44, o); }},
      {"depth_loss", kTight, check_depth_loss},
      {"lidar_stream", kTight, check_lidar_stream},
      {"depth_head", kTight, check_depth_head},
      {"lift_splat", kTight, check_lift_splat},
      {"geometry_mask", kTight, check_geometry_mask},
      {"adaptive_fuse", kTight, check_adaptive_fuse},
      {"backbone", kTight, check_backbone},
      {"hard_gumbel_onehot", kTight, check_hard_gumbel},
  };
}

}  // namespace occgen
