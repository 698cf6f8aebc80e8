// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "occgen/autodiff.hpp"
#include "occgen/tensor.hpp"

namespace occgen {

/// Scalar-valued function of leaf inputs, rebuilt on a fresh tape per evaluation.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Multiplies the analytic gradient before comparison; anything but 1.0 is a
  /// deliberate fault injection used to prove the harness can fail.
  double analytic_scale = 1.0;
  /// Which inputs to differentiate (empty = all).
  std::vector<bool> wrt;
};

/// Norm-wise relative error max|a - n| / max(|a|_inf, |n|_inf), both maxima taken
/// jointly over all checked inputs, where a is the tape gradient and n the central
/// difference. Inputs whose true gradient vanishes are compared against the scale
/// of the others.
double gradient_relative_error(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& opts = {});

/// sum(out * R) with a fixed pseudo-random R, turning any output into a scalar
/// whose gradient exercises every output element.
Var random_projection(const Var& out, std::uint64_t seed);

}  // namespace occgen
