// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "occgen/autodiff.hpp"
#include "occgen/rng.hpp"
#include "occgen/tensor.hpp"

namespace occgen {

using GradMap = std::map<std::string, Tensor>;

/// Named model parameters in canonical (name-sorted) order.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t total_elements() const;
  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
  std::map<std::string, Tensor>& tensors() noexcept { return tensors_; }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Parameters bound as leaves of one tape. Binding happens on first use, so a
/// forward pass only pays for what it touches.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamSet& params, bool requires_grad = true)
      : tape_(&tape), params_(&params), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name);
  /// Uses `value` for `name` instead of a fresh leaf. Must precede first use.
  void bind(const std::string& name, const Var& value);
  Tape& tape() const noexcept { return *tape_; }
  bool requires_grad() const noexcept { return requires_grad_; }

  /// Gradient for every parameter of the set; parameters not used in the
  /// forward pass get zeros.
  GradMap gradients(const Gradients& grads) const;

 private:
  Tape* tape_;
  const ParamSet* params_;
  bool requires_grad_;
  std::map<std::string, Var> bound_;
};

/// N(0, stddev^2) initialization.
Tensor init_normal(Shape shape, double stddev, Rng& rng);

}  // namespace occgen
