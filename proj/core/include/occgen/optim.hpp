// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "occgen/params.hpp"

namespace occgen {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  double lr = 2e-4;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// Moments are created lazily with the shape of their parameter.
void adamw_step(ParamSet& params, const GradMap& grads, OptimizerState& state, double lr);

/// Linear warm-up from 0 to 1 over `warmup` steps, then cosine decay to 0 at `total`.
double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace occgen
