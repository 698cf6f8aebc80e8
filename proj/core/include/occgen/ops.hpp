// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "occgen/autodiff.hpp"
#include "occgen/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the tape of its
// first input; all inputs must live on the same tape.
namespace occgen {

enum class Elementwise { Add, Sub, Mul, Div, Neg, Sigmoid, Silu, Exp, Log, Square };

/// Binary kinds broadcast `b` over `a` when b's shape is a trailing suffix of a's
/// shape (or b is a one-element tensor). Unary kinds ignore `b`.
Var elementwise(Elementwise kind, const Var& a, const Var& b = {});

inline Var add(const Var& a, const Var& b) { return elementwise(Elementwise::Add, a, b); }
inline Var sub(const Var& a, const Var& b) { return elementwise(Elementwise::Sub, a, b); }
inline Var mul(const Var& a, const Var& b) { return elementwise(Elementwise::Mul, a, b); }
inline Var div(const Var& a, const Var& b) { return elementwise(Elementwise::Div, a, b); }
inline Var neg(const Var& a) { return elementwise(Elementwise::Neg, a); }
inline Var sigmoid(const Var& a) { return elementwise(Elementwise::Sigmoid, a); }
inline Var silu(const Var& a) { return elementwise(Elementwise::Silu, a); }
inline Var exp(const Var& a) { return elementwise(Elementwise::Exp, a); }
inline Var log(const Var& a) { return elementwise(Elementwise::Log, a); }
inline Var square(const Var& a) { return elementwise(Elementwise::Square, a); }

/// a * factor + offset
Var affine(const Var& a, double factor, double offset = 0.0);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
/// Rank-2 transpose.
Var transpose(const Var& a);
/// Concatenation along axis 0.
Var concat(std::span<const Var> parts);
/// Rows [begin, end) along axis 0.
Var slice(const Var& a, std::size_t begin, std::size_t end);

/// [m x k] . [k x n]
Var matmul(const Var& a, const Var& b);
/// x[n x k] . w[k x m] + bias[m]; bias may be unbound.
Var linear(const Var& x, const Var& w, const Var& bias = {});

struct Conv3dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Cross-correlation. x: [C_in, D, H, W], w: [C_out, C_in, k, k, k] (k odd),
/// bias: [C_out] or unbound.
Var conv3d(const Var& x, const Var& w, const Var& bias = {}, Conv3dOptions opts = {});

/// Max-stabilized softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);
Var log_softmax(const Var& x, std::size_t axis);

/// Trilinear sampling of F: [C, D, H, W] at continuous voxel coordinates
/// pts: [M, 3] (axis order D, H, W; integer coordinates hit stored values).
/// Corners outside the grid contribute zero. Returns [M, C].
Var trilinear_sample(const Var& field, const Var& pts);

/// 2x2x2 average pooling with stride 2. x: [C, D, H, W] with even extents.
Var avg_pool3d(const Var& x);
/// Nearest-neighbour upsampling by an integer factor on the three spatial axes.
Var upsample_nearest3d(const Var& x, std::size_t factor);

/// Normalization over the last axis with learnable gain/bias of that width.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Forward value is `hard`; the gradient is passed unchanged to `soft`.
Var straight_through(Tensor hard, const Var& soft);

/// samples: [n, P, C], weights: [n, P] -> [n, C] with out[i] = sum_k w[i,k] * samples[i,k].
Var weighted_point_sum(const Var& samples, const Var& weights);

}  // namespace occgen
