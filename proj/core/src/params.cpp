// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/params.hpp"

#include "occgen/error.hpp"

namespace occgen {

void ParamSet::add(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) throw Error("duplicate parameter " + name);
}

void ParamSet::set(const std::string& name, Tensor value) {
  Tensor& slot = at(name);
  if (slot.shape() != value.shape()) {
    throw ShapeError("parameter " + name + ": " + shape_string(value.shape()) + " vs " + shape_string(slot.shape()));
  }
  slot = std::move(value);
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

Var BoundParams::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_->leaf(params_->at(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

void BoundParams::bind(const std::string& name, const Var& value) {
  if (params_->at(name).shape() != value.shape()) throw ShapeError("bind " + name + ": shape mismatch");
  if (!bound_.emplace(name, value).second) throw Error("parameter " + name + " already bound");
}

GradMap BoundParams::gradients(const Gradients& grads) const {
  GradMap out;
  for (const auto& [name, tensor] : params_->tensors()) {
    auto it = bound_.find(name);
    if (it != bound_.end() && grads.contains(it->second)) {
      out.emplace(name, grads[it->second]);
    } else {
      out.emplace(name, Tensor(tensor.shape(), 0.0));
    }
  }
  return out;
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace occgen
