// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/autodiff.hpp"

#include "occgen/error.hpp"

namespace occgen {

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(leaf.id()));
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("non-finite leaf value");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite output from ") + op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  node.is_leaf = false;
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error(std::string(op) + ": input recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(nodes_[loss.id()].value.shape()));
  }
  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_leaf || !node.backward || grads[i].empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[k] = &grads[in];
    }
    node.backward(node.value, grads[i], slots);
    grads[i] = Tensor();  // intermediate gradients are no longer needed
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    if (i < grads.size() && !grads[i].empty()) {
      out.grads_.emplace(i, std::move(grads[i]));
    } else {
      out.grads_.emplace(i, Tensor(node.value.shape(), 0.0));
    }
  }
  return out;
}

}  // namespace occgen
