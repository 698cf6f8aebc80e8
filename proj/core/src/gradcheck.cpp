// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "occgen/error.hpp"
#include "occgen/ops.hpp"
#include "occgen/rng.hpp"

namespace occgen {
namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  return fn(tape, leaves).value().item();
}

}  // namespace

double gradient_relative_error(const ScalarFn& fn, const std::vector<Tensor>& inputs, const GradCheckOptions& opts) {
  auto checked = [&](std::size_t i) { return opts.wrt.empty() || (i < opts.wrt.size() && opts.wrt[i]); };

  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], checked(i)));
  Var loss = fn(tape, leaves);
  Gradients grads = tape.backward(loss);

  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!checked(i)) continue;
    Tensor analytic = grads[leaves[i]];
    analytic.scale_(opts.analytic_scale);
    Tensor numeric(inputs[i].shape());
    std::vector<Tensor> probe = inputs;
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + opts.step;
      const double fp = evaluate(fn, probe);
      probe[i][j] = x0 - opts.step;
      const double fm = evaluate(fn, probe);
      probe[i][j] = x0;
      numeric[j] = (fp - fm) / (2.0 * opts.step);
    }
    scale = std::max({scale, max_abs(analytic), max_abs(numeric)});
    diff = std::max(diff, max_abs_diff(analytic, numeric));
  }
  return diff / scale;
}

Var random_projection(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r(out.shape());
  for (double& v : r.data()) v = rng.uniform(-1.0, 1.0);
  Var weights = out.tape()->constant(std::move(r));
  return sum(mul(out, weights));
}

}  // namespace occgen
