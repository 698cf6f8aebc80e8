// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "occgen/error.hpp"
#include "occgen/ops.hpp"

namespace occgen {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "linear") return ScheduleKind::Linear;
  throw ValueError("unknown noise schedule '" + std::string(name) + "'");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Cosine ? "cosine" : "linear"; }

SamplerStrategy parse_sampler_strategy(std::string_view name) {
  if (name == "ddim") return SamplerStrategy::DDIM;
  if (name == "ddpm") return SamplerStrategy::DDPM;
  throw ValueError("unknown sampler strategy '" + std::string(name) + "'");
}

std::string to_string(SamplerStrategy strategy) { return strategy == SamplerStrategy::DDIM ? "ddim" : "ddpm"; }

NoiseSchedule NoiseSchedule::from_betas(ScheduleKind kind, std::vector<double> betas) {
  if (betas.size() < 2) throw ValueError("a noise schedule needs at least 2 steps");
  NoiseSchedule s;
  s.kind = kind;
  s.steps = static_cast<int>(betas.size());
  s.alpha_bars.assign(betas.size() + 1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw ValueError("beta values must lie in (0, 1)");
    s.alpha_bars[i + 1] = s.alpha_bars[i] * (1.0 - betas[i]);
  }
  s.betas = std::move(betas);
  return s;
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps) {
  if (steps < 2) throw ValueError("noise schedule needs T >= 2");
  const auto T = static_cast<std::size_t>(steps);
  std::vector<double> betas(T);
  if (kind == ScheduleKind::Cosine) {
    constexpr double kOffset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    for (std::size_t t = 1; t <= T; ++t) {
      const double prev = f(static_cast<double>(t - 1)) / f0;
      const double cur = f(static_cast<double>(t)) / f0;
      betas[t - 1] = std::min(1.0 - cur / prev, 0.999);
    }
  } else {
    for (std::size_t i = 0; i < T; ++i) betas[i] = 1e-4 + (0.02 - 1e-4) * static_cast<double>(i) / static_cast<double>(T - 1);
  }
  return NoiseSchedule::from_betas(kind, std::move(betas));
}

AnalogMap corrupt(const AnalogMap& y0, int t, const Tensor& noise, const NoiseSchedule& schedule) {
  if (noise.shape() != y0.values.shape()) {
    throw ShapeError("corrupt: noise " + shape_string(noise.shape()) + " vs " + shape_string(y0.values.shape()));
  }
  if (t < 0 || t > schedule.steps) throw ValueError("corrupt: t out of range");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  AnalogMap out{Tensor(y0.values.shape()), y0.scale};
  for (std::size_t i = 0; i < noise.numel(); ++i) out.values[i] = a * y0.values[i] + b * noise[i];
  return out;
}

void SamplerConfig::validate(int total_steps) const {
  if (steps < 1 || steps > total_steps) throw ValueError("sampling steps must be in [1, T]");
  if (td < 0) throw ValueError("td must be non-negative");
  if (static_cast<double>(total_steps) / steps < td + 1.0) {
    throw ValueError("T / steps must be at least td + 1 so that sampling times stay distinct");
  }
}

std::vector<std::pair<int, int>> time_pairs(const SamplerConfig& config, int total_steps) {
  config.validate(total_steps);
  std::vector<int> times;
  const double hi = total_steps - config.td;
  const double lo = -config.td;
  for (int i = 0; i <= config.steps; ++i) {
    const double v = hi + (lo - hi) * static_cast<double>(i) / config.steps;
    times.push_back(std::clamp(static_cast<int>(std::trunc(v)), 0, total_steps));
  }
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i + 1 < times.size(); ++i) pairs.emplace_back(times[i], times[i + 1]);
  return pairs;
}

AnalogMap ddim_step(const AnalogMap& z_t, const AnalogMap& z0_hat, int t_now, int t_next,
                    const NoiseSchedule& schedule) {
  if (t_now <= 0 || t_now > schedule.steps) throw ValueError("ddim_step: t_now must be in [1, T]");
  if (t_next < 0 || t_next >= t_now) throw ValueError("ddim_step: t_next must be in [0, t_now)");
  if (z_t.values.shape() != z0_hat.values.shape()) throw ShapeError("ddim_step: state shape mismatch");
  const double s = z0_hat.scale;
  const double ab_now = schedule.alpha_bar(t_now);
  const double ab_next = schedule.alpha_bar(t_next);
  const double sa_now = std::sqrt(ab_now), sb_now = std::sqrt(1.0 - ab_now);
  const double sa_next = std::sqrt(ab_next), sb_next = std::sqrt(1.0 - ab_next);
  AnalogMap out{Tensor(z_t.values.shape()), z_t.scale};
  for (std::size_t i = 0; i < out.values.numel(); ++i) {
    const double x0 = std::clamp(z0_hat.values[i], -s, s);
    const double eps = (z_t.values[i] - sa_now * x0) / sb_now;
    out.values[i] = sa_next * x0 + sb_next * eps;
  }
  return out;
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int t_now, int t_next) {
  if (t_now <= 0 || t_now > schedule.steps) throw ValueError("posterior: t_now must be in [1, T]");
  if (t_next < 0 || t_next >= t_now) throw ValueError("posterior: t_next must be in [0, t_now)");
  const double ab_now = schedule.alpha_bar(t_now);
  const double ab_next = schedule.alpha_bar(t_next);
  const double alpha = ab_now / ab_next;  // alpha of the (possibly multi-step) jump
  const double beta = 1.0 - alpha;
  PosteriorCoefficients c;
  c.coef_x0 = beta * std::sqrt(ab_next) / (1.0 - ab_now);
  c.coef_xt = (1.0 - ab_next) * std::sqrt(alpha) / (1.0 - ab_now);
  c.variance = beta * (1.0 - ab_next) / (1.0 - ab_now);
  return c;
}

AnalogMap ddpm_step(const AnalogMap& z_t, const AnalogMap& z0_hat, int t_now, int t_next,
                    const NoiseSchedule& schedule, Rng& rng) {
  if (z_t.values.shape() != z0_hat.values.shape()) throw ShapeError("ddpm_step: state shape mismatch");
  const PosteriorCoefficients c = posterior_coefficients(schedule, t_now, t_next);
  const double sigma = t_next > 0 ? std::sqrt(c.variance) : 0.0;
  AnalogMap out{Tensor(z_t.values.shape()), z_t.scale};
  for (std::size_t i = 0; i < out.values.numel(); ++i) {
    out.values[i] = c.coef_x0 * z0_hat.values[i] + c.coef_xt * z_t.values[i];
    if (sigma > 0.0) out.values[i] += sigma * rng.normal();
  }
  return out;
}

Tensor sinusoidal_embedding(double t, int dim) {
  if (dim < 4 || dim % 2) throw ValueError("sinusoid width must be even and >= 4");
  const int half = dim / 2;
  Tensor out(Shape{static_cast<std::size_t>(dim)});
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / (half - 1));
    out[static_cast<std::size_t>(i)] = std::sin(t * freq);
    out[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return out;
}

void init_time_embed(ParamSet& params, const std::string& prefix, const TimeEmbedConfig& config, Rng& rng) {
  const auto raw = static_cast<std::size_t>(config.raw_dim);
  const auto dim = static_cast<std::size_t>(config.dim);
  params.add(prefix + ".fc1.w", init_normal({raw, dim}, 1.0 / std::sqrt(static_cast<double>(raw)), rng));
  params.add(prefix + ".fc1.b", Tensor(Shape{dim}));
  params.add(prefix + ".fc2.w", init_normal({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
  params.add(prefix + ".fc2.b", Tensor(Shape{dim}));
}

Var embed_time(BoundParams& params, const std::string& prefix, int t, const TimeEmbedConfig& config) {
  Tape& tape = params.tape();
  const auto raw = static_cast<std::size_t>(config.raw_dim);
  Var x = tape.constant(sinusoidal_embedding(t, config.raw_dim).reshaped({1, raw}));
  Var h = silu(linear(x, params(prefix + ".fc1.w"), params(prefix + ".fc1.b")));
  Var out = linear(h, params(prefix + ".fc2.w"), params(prefix + ".fc2.b"));
  return reshape(out, {static_cast<std::size_t>(config.dim)});
}

}  // namespace occgen
