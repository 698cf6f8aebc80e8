// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "occgen/autodiff.hpp"
#include "occgen/occupancy.hpp"
#include "occgen/params.hpp"
#include "occgen/rng.hpp"

namespace occgen {

enum class ScheduleKind { Cosine, Linear };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

/// betas[t-1] = beta_t for t in 1..T; alpha_bars[t] = prod_{i<=t} (1 - beta_i), alpha_bars[0] = 1.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Cosine;
  int steps = 0;  // T
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }

  /// Builds the cumulative table from explicit betas; each must lie in (0, 1).
  static NoiseSchedule from_betas(ScheduleKind kind, std::vector<double> betas);
};

/// cosine: alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + 0.008)/1.008) * pi/2), beta clipped at 0.999.
/// linear: betas evenly spaced from 1e-4 to 0.02.
NoiseSchedule make_schedule(ScheduleKind kind, int steps);

/// z_t = sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * noise, for 0 <= t <= T.
AnalogMap corrupt(const AnalogMap& y0, int t, const Tensor& noise, const NoiseSchedule& schedule);

enum class SamplerStrategy { DDIM, DDPM };

SamplerStrategy parse_sampler_strategy(std::string_view name);
std::string to_string(SamplerStrategy strategy);

struct SamplerConfig {
  SamplerStrategy strategy = SamplerStrategy::DDIM;
  int steps = 1;
  int td = 1;  // asymmetric time offset

  /// 1 <= steps <= T, td >= 0, and the clamped grid must stay strictly decreasing
  /// (T / steps >= td + 1).
  void validate(int total_steps) const;
};

/// Takes steps+1 evenly spaced times over [T - td, -td] (descending), truncates
/// them to integers, clamps to [0, T] and pairs neighbours as (t_now, t_next).
std::vector<std::pair<int, int>> time_pairs(const SamplerConfig& config, int total_steps);

/// Deterministic DDIM update (eta = 0). z0_hat is clamped to [-s, s] first.
AnalogMap ddim_step(const AnalogMap& z_t, const AnalogMap& z0_hat, int t_now, int t_next,
                    const NoiseSchedule& schedule);

/// Ancestral step drawn from the posterior q(z_{t_next} | z_t, z0_hat). Fresh
/// Gaussian noise is added unless t_next == 0.
AnalogMap ddpm_step(const AnalogMap& z_t, const AnalogMap& z0_hat, int t_now, int t_next,
                    const NoiseSchedule& schedule, Rng& rng);
inline AnalogMap ddpm_step(const AnalogMap& z_t, const AnalogMap& z0_hat, int t_now, const NoiseSchedule& schedule,
                           Rng& rng) {
  return ddpm_step(z_t, z0_hat, t_now, t_now - 1, schedule, rng);
}

/// Posterior mean coefficients (on z0_hat, on z_t) and variance of q(z_{t_next} | z_t, z0).
struct PosteriorCoefficients {
  double coef_x0 = 0.0;
  double coef_xt = 0.0;
  double variance = 0.0;
};
PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int t_now, int t_next);

struct TimeEmbedConfig {
  int raw_dim = 16;  // sinusoid width (even)
  int dim = 16;      // output width
};

/// [sin(t * f_0..f_{h-1}), cos(t * f_0..f_{h-1})] with f_i = 10000^(-i/(h-1)), h = dim/2.
Tensor sinusoidal_embedding(double t, int dim);

void init_time_embed(ParamSet& params, const std::string& prefix, const TimeEmbedConfig& config, Rng& rng);

/// Sinusoid followed by a two-layer SiLU MLP. Returns [dim].
Var embed_time(BoundParams& params, const std::string& prefix, int t, const TimeEmbedConfig& config);

}  // namespace occgen
