// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "occgen/tensor.hpp"

namespace occgen {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;

  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward rule of a recorded op. Implementations must *accumulate* into each
/// non-null grad_in slot; a slot is null when that input does not need a gradient.
using BackwardFn =
    std::function<void(const Tensor& out, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

/// Gradients of a scalar with respect to every requires_grad leaf of a tape.
class Gradients {
 public:
  const Tensor& operator[](const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Reverse-mode tape. Nodes are appended in execution order, so the node list is
/// already a topological order and backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. Throws NumericalError if `value` is not finite.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  Gradients backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const char* op = "leaf";
    bool requires_grad = false;
    bool is_leaf = true;
  };

  std::deque<Node> nodes_;  // stable addresses: values stay valid while recording
};

}  // namespace occgen
