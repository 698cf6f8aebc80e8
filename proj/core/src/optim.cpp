// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/optim.hpp"

#include <cmath>
#include <numbers>

#include "occgen/error.hpp"

namespace occgen {

void adamw_step(ParamSet& params, const GradMap& grads, OptimizerState& state, double lr) {
  const AdamWConfig& cfg = state.config;
  state.step += 1;
  state.lr = lr;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, param] : params.tensors()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.shape() != param.shape()) throw ShapeError("adamw: gradient shape mismatch for " + name);
    auto [mit, m_new] = state.first_moment.try_emplace(name, param.shape());
    auto [vit, v_new] = state.second_moment.try_emplace(name, param.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < param.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      param[i] = param[i] * (1.0 - lr * cfg.weight_decay) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    if (!param.all_finite()) throw NumericalError("adamw produced non-finite values in " + name);
  }
}

double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup) {
  if (warmup > total) throw ValueError("lr_schedule: warmup exceeds total steps");
  if (step > total) throw ValueError("lr_schedule: step beyond total");
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return 1.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [_, g] : grads) g.scale_(f);
  }
  return norm;
}

}  // namespace occgen
