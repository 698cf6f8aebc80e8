// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "occgen/error.hpp"

namespace occgen {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Tape& tape_of(const Var& v) {
  if (!v) throw Error("op applied to an unbound Var");
  return *v.tape();
}

bool is_trailing_suffix(const Shape& small, const Shape& big) {
  if (shape_numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const char* kind_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::Add: return "add";
    case Elementwise::Sub: return "sub";
    case Elementwise::Mul: return "mul";
    case Elementwise::Div: return "div";
    case Elementwise::Neg: return "neg";
    case Elementwise::Sigmoid: return "sigmoid";
    case Elementwise::Silu: return "silu";
    case Elementwise::Exp: return "exp";
    case Elementwise::Log: return "log";
    case Elementwise::Square: return "square";
  }
  return "elementwise";
}

bool is_binary(Elementwise kind) {
  return kind == Elementwise::Add || kind == Elementwise::Sub || kind == Elementwise::Mul ||
         kind == Elementwise::Div;
}

Var binary_op(Elementwise kind, const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_trailing_suffix(bv.shape(), av.shape())) {
    const bool commutes = kind == Elementwise::Add || kind == Elementwise::Mul;
    if (commutes && is_trailing_suffix(av.shape(), bv.shape())) return binary_op(kind, b, a);
    throw ShapeError(std::string(kind_name(kind)) + ": cannot broadcast " + shape_string(bv.shape()) +
                     " onto " + shape_string(av.shape()));
  }
  const std::size_t n = av.numel();
  const std::size_t m = bv.numel();
  Tensor out(av.shape());
  const double* pa = av.ptr();
  const double* pb = bv.ptr();
  double* po = out.ptr();
  switch (kind) {
    case Elementwise::Add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % m];
      break;
    case Elementwise::Sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % m];
      break;
    case Elementwise::Mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % m];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i % m];
      break;
  }
  return tape.record(kind_name(kind), std::move(out), {a, b},
                     [a, b, kind](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       const Tensor& av = a.value();
                       const Tensor& bv = b.value();
                       const std::size_t n = av.numel();
                       const std::size_t m = bv.numel();
                       const double* pg = g.ptr();
                       if (Tensor* ga = gin[0]) {
                         double* p = ga->ptr();
                         for (std::size_t i = 0; i < n; ++i) {
                           switch (kind) {
                             case Elementwise::Add:
                             case Elementwise::Sub: p[i] += pg[i]; break;
                             case Elementwise::Mul: p[i] += pg[i] * bv[i % m]; break;
                             default: p[i] += pg[i] / bv[i % m]; break;
                           }
                         }
                       }
                       if (Tensor* gb = gin[1]) {
                         double* p = gb->ptr();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = i % m;
                           switch (kind) {
                             case Elementwise::Add: p[j] += pg[i]; break;
                             case Elementwise::Sub: p[j] -= pg[i]; break;
                             case Elementwise::Mul: p[j] += pg[i] * av[i]; break;
                             default: p[j] -= pg[i] * av[i] / (bv[j] * bv[j]); break;
                           }
                         }
                       }
                     });
}

}  // namespace

Var elementwise(Elementwise kind, const Var& a, const Var& b) {
  if (is_binary(kind)) {
    if (!b) throw Error(std::string(kind_name(kind)) + " needs two operands");
    return binary_op(kind, a, b);
  }
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t n = av.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    switch (kind) {
      case Elementwise::Neg: out[i] = -x; break;
      case Elementwise::Sigmoid: out[i] = sigmoid_scalar(x); break;
      case Elementwise::Silu: out[i] = x * sigmoid_scalar(x); break;
      case Elementwise::Exp: out[i] = std::exp(x); break;
      case Elementwise::Log: out[i] = std::log(x); break;
      default: out[i] = x * x; break;
    }
  }
  return tape.record(kind_name(kind), std::move(out), {a},
                     [a, kind](const Tensor& y, const Tensor& g, std::span<Tensor* const> gin) {
                       Tensor* ga = gin[0];
                       if (!ga) return;
                       const Tensor& x = a.value();
                       for (std::size_t i = 0; i < x.numel(); ++i) {
                         double d = 0.0;
                         switch (kind) {
                           case Elementwise::Neg: d = -1.0; break;
                           case Elementwise::Sigmoid: d = y[i] * (1.0 - y[i]); break;
                           case Elementwise::Silu: {
                             const double s = sigmoid_scalar(x[i]);
                             d = s * (1.0 + x[i] * (1.0 - s));
                             break;
                           }
                           case Elementwise::Exp: d = y[i]; break;
                           case Elementwise::Log: d = 1.0 / x[i]; break;
                           default: d = 2.0 * x[i]; break;
                         }
                         (*ga)[i] += g[i] * d;
                       }
                     });
}

Var affine(const Var& a, double factor, double offset) {
  Tape& tape = tape_of(a);
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * factor + offset;
  return tape.record("affine", std::move(out), {a},
                     [factor](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* ga = gin[0]) {
                         for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * factor;
                       }
                     });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape.record("sum", Tensor::scalar(s), {a},
                     [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* ga = gin[0]) {
                         const double gv = g[0];
                         for (double& v : ga->data()) v += gv;
                       }
                     });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.numel());
  return affine(sum(a), 1.0 / n);
}

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {a},
                     [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* ga = gin[0]) {
                         for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                       }
                     });
}

Var transpose(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_string(av.shape()));
  const std::size_t r = av.dim(0);
  const std::size_t c = av.dim(1);
  Tensor out(Shape{c, r});
  MapMat(out.ptr(), c, r) = MapConstMat(av.ptr(), r, c).transpose();
  return tape.record("transpose", std::move(out), {a},
                     [r, c](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* ga = gin[0]) {
                         MapMat(ga->ptr(), r, c) += MapConstMat(g.ptr(), c, r).transpose();
                       }
                     });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Tape& tape = tape_of(parts[0]);
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat of scalars");
  std::size_t rows = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      throw ShapeError("concat: " + shape_string(s) + " incompatible with " + shape_string(shape));
    }
    rows += s[0];
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + offset);
    offset += p.numel();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat", std::move(out), inputs,
                     [offsets](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       for (std::size_t k = 0; k < gin.size(); ++k) {
                         if (Tensor* gk = gin[k]) {
                           for (std::size_t i = 0; i < gk->numel(); ++i) (*gk)[i] += g[offsets[k] + i];
                         }
                       }
                     });
}

Var slice(const Var& a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  Shape shape = a.shape();
  if (shape.empty() || begin > end || end > shape[0]) throw ShapeError("slice out of range");
  const std::size_t row = a.numel() / shape[0];
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy(a.value().ptr() + begin * row, a.value().ptr() + end * row, out.ptr());
  return tape.record("slice", std::move(out), {a},
                     [begin, row](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* ga = gin[0]) {
                         for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[begin * row + i] += g[i];
                       }
                     });
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " . " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  MapMat(out.ptr(), m, n).noalias() = MapConstMat(av.ptr(), m, k) * MapConstMat(bv.ptr(), k, n);
  return tape.record("matmul", std::move(out), {a, b},
                     [a, b, m, k, n](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       MapConstMat gm(g.ptr(), m, n);
                       if (Tensor* ga = gin[0]) {
                         MapMat(ga->ptr(), m, k).noalias() += gm * MapConstMat(b.value().ptr(), k, n).transpose();
                       }
                       if (Tensor* gb = gin[1]) {
                         MapMat(gb->ptr(), k, n).noalias() += MapConstMat(a.value().ptr(), m, k).transpose() * gm;
                       }
                     });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  Var y = matmul(x, w);
  return bias ? add(y, bias) : y;
}

namespace {

struct ConvGeom {
  std::size_t cin, d, h, w, k, stride, pad, od, oh, ow;
  std::size_t rows() const { return cin * k * k * k; }
  std::size_t cols() const { return od * oh * ow; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t P = g.cols();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* xc = x + ci * g.d * g.h * g.w;
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          double* row = col + (((ci * g.k + kd) * g.k + kh) * g.k + kw) * P;
          for (std::size_t od = 0; od < g.od; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - pad;
            double* rd = row + od * g.oh * g.ow;
            if (id < 0 || id >= static_cast<long>(g.d)) {
              std::fill(rd, rd + g.oh * g.ow, 0.0);
              continue;
            }
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - pad;
              double* rh = rd + oh * g.ow;
              if (ih < 0 || ih >= static_cast<long>(g.h)) {
                std::fill(rh, rh + g.ow, 0.0);
                continue;
              }
              const double* xr = xc + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
              for (std::size_t ow = 0; ow < g.ow; ++ow) {
                const long iw = static_cast<long>(ow * g.stride + kw) - pad;
                rh[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : xr[iw];
              }
            }
          }
        }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
  const std::size_t P = g.cols();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* xc = x + ci * g.d * g.h * g.w;
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const double* row = col + (((ci * g.k + kd) * g.k + kh) * g.k + kw) * P;
          for (std::size_t od = 0; od < g.od; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - pad;
            if (id < 0 || id >= static_cast<long>(g.d)) continue;
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
              const double* rh = row + (od * g.oh + oh) * g.ow;
              double* xr = xc + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
              for (std::size_t ow = 0; ow < g.ow; ++ow) {
                const long iw = static_cast<long>(ow * g.stride + kw) - pad;
                if (iw >= 0 && iw < static_cast<long>(g.w)) xr[iw] += rh[ow];
              }
            }
          }
        }
  }
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& bias, Conv3dOptions opts) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 5 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) ||
      wv.dim(3) != wv.dim(4)) {
    throw ShapeError("conv3d: input " + shape_string(xv.shape()) + " kernel " + shape_string(wv.shape()));
  }
  const std::size_t k = wv.dim(2);
  if (k % 2 == 0) throw ShapeError("conv3d: kernel size must be odd");
  if (opts.stride == 0) throw ShapeError("conv3d: stride must be positive");
  const std::size_t cout = wv.dim(0);
  if (bias && (bias.value().rank() != 1 || bias.value().dim(0) != cout)) {
    throw ShapeError("conv3d: bias shape " + shape_string(bias.shape()));
  }
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), k, opts.stride, opts.pad, 0, 0, 0};
  auto extent = [&](std::size_t n) -> std::size_t {
    if (n + 2 * g.pad < k) throw ShapeError("conv3d: output extent <= 0");
    return (n + 2 * g.pad - k) / g.stride + 1;
  };
  g.od = extent(g.d);
  g.oh = extent(g.h);
  g.ow = extent(g.w);
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();

  Tensor out(Shape{cout, g.od, g.oh, g.ow});
  MapMat om(out.ptr(), cout, P);
  MapConstMat wm(wv.ptr(), cout, K);
  if (is_pointwise(g)) {
    om.noalias() = wm * MapConstMat(xv.ptr(), K, P);
  } else {
    Storage col(K * P);
    im2col(xv.ptr(), g, col.data());
    om.noalias() = wm * MapConstMat(col.data(), K, P);
  }
  if (bias) {
    const Tensor& bv = bias.value();
    for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bv[c];
  }

  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return tape.record("conv3d", std::move(out), inputs,
                     [x, w, g, cout](const Tensor&, const Tensor& grad, std::span<Tensor* const> gin) {
                       const std::size_t K = g.rows();
                       const std::size_t P = g.cols();
                       MapConstMat gm(grad.ptr(), cout, P);
                       const bool pointwise = is_pointwise(g);
                       Storage col;
                       if (gin[1]) {
                         MapMat gw(gin[1]->ptr(), cout, K);
                         if (pointwise) {
                           gw.noalias() += gm * MapConstMat(x.value().ptr(), K, P).transpose();
                         } else {
                           col.resize(K * P);
                           im2col(x.value().ptr(), g, col.data());
                           gw.noalias() += gm * MapConstMat(col.data(), K, P).transpose();
                         }
                       }
                       if (gin[0]) {
                         MapConstMat wm(w.value().ptr(), cout, K);
                         if (pointwise) {
                           MapMat(gin[0]->ptr(), K, P).noalias() += wm.transpose() * gm;
                         } else {
                           col.resize(K * P);
                           MapMat(col.data(), K, P).noalias() = wm.transpose() * gm;
                           col2im_add(col.data(), g, gin[0]->ptr());
                         }
                       }
                       if (gin.size() > 2 && gin[2]) {
                         Tensor& gb = *gin[2];
                         for (std::size_t c = 0; c < cout; ++c) gb[c] += gm.row(c).sum();
                       }
                     });
}

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var softmax(const Var& x, std::size_t axis) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  return tape.record("softmax", std::move(out), {x},
                     [s](const Tensor& y, const Tensor& g, std::span<Tensor* const> gin) {
                       Tensor* gx = gin[0];
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = o * s.len * s.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t j = base + k * s.inner;
                             (*gx)[j] += y[j] * (g[j] - dot);
                           }
                         }
                     });
}

Var log_softmax(const Var& x, std::size_t axis) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(xv[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] = xv[base + k * s.inner] - lse;
    }
  return tape.record("log_softmax", std::move(out), {x},
                     [s](const Tensor& y, const Tensor& g, std::span<Tensor* const> gin) {
                       Tensor* gx = gin[0];
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = o * s.len * s.inner + i;
                           double gs = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k) gs += g[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t j = base + k * s.inner;
                             (*gx)[j] += g[j] - std::exp(y[j]) * gs;
                           }
                         }
                     });
}

namespace {

// One sample point's 8 corners: flat offsets into a [D,H,W] volume (-1 when
// outside) and the per-axis fractional parts.
struct Corners {
  long idx[8];
  double frac[3];
  double weight[8];
  double dweight[8][3];
};

Corners corners_of(const double* p, std::size_t d, std::size_t h, std::size_t w) {
  Corners c{};
  long base[3];
  const std::size_t ext[3] = {d, h, w};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(p[a]);
    base[a] = static_cast<long>(f);
    c.frac[a] = p[a] - f;
  }
  for (int corner = 0; corner < 8; ++corner) {
    const int bit[3] = {(corner >> 2) & 1, (corner >> 1) & 1, corner & 1};
    long pos[3];
    bool inside = true;
    double wa[3];
    for (int a = 0; a < 3; ++a) {
      pos[a] = base[a] + bit[a];
      inside = inside && pos[a] >= 0 && pos[a] < static_cast<long>(ext[a]);
      wa[a] = bit[a] ? c.frac[a] : 1.0 - c.frac[a];
    }
    c.idx[corner] = inside ? (pos[0] * static_cast<long>(h) + pos[1]) * static_cast<long>(w) + pos[2] : -1;
    c.weight[corner] = wa[0] * wa[1] * wa[2];
    for (int a = 0; a < 3; ++a) {
      const double sign = bit[a] ? 1.0 : -1.0;
      c.dweight[corner][a] = sign * wa[(a + 1) % 3] * wa[(a + 2) % 3];
    }
  }
  return c;
}

}  // namespace

Var trilinear_sample(const Var& field, const Var& pts) {
  Tape& tape = tape_of(field);
  const Tensor& fv = field.value();
  const Tensor& pv = pts.value();
  if (fv.rank() != 4 || pv.rank() != 2 || pv.dim(1) != 3) {
    throw ShapeError("trilinear_sample: field " + shape_string(fv.shape()) + " points " + shape_string(pv.shape()));
  }
  const std::size_t C = fv.dim(0), D = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
  const std::size_t vol = D * H * W;
  const std::size_t M = pv.dim(0);
  Tensor out(Shape{M, C});
  for (std::size_t m = 0; m < M; ++m) {
    const Corners cs = corners_of(pv.ptr() + 3 * m, D, H, W);
    double* o = out.ptr() + m * C;
    for (int k = 0; k < 8; ++k) {
      if (cs.idx[k] < 0 || cs.weight[k] == 0.0) continue;
      const double wk = cs.weight[k];
      const double* f = fv.ptr() + cs.idx[k];
      for (std::size_t c = 0; c < C; ++c) o[c] += wk * f[c * vol];
    }
  }
  return tape.record("trilinear_sample", std::move(out), {field, pts},
                     [field, pts, C, D, H, W, vol, M](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       const Tensor& fv = field.value();
                       const Tensor& pv = pts.value();
                       for (std::size_t m = 0; m < M; ++m) {
                         const Corners cs = corners_of(pv.ptr() + 3 * m, D, H, W);
                         const double* gm = g.ptr() + m * C;
                         for (int k = 0; k < 8; ++k) {
                           if (cs.idx[k] < 0) continue;
                           if (gin[0]) {
                             double* gf = gin[0]->ptr() + cs.idx[k];
                             for (std::size_t c = 0; c < C; ++c) gf[c * vol] += cs.weight[k] * gm[c];
                           }
                           if (gin[1]) {
                             const double* f = fv.ptr() + cs.idx[k];
                             double dot = 0.0;
                             for (std::size_t c = 0; c < C; ++c) dot += gm[c] * f[c * vol];
                             double* gp = gin[1]->ptr() + 3 * m;
                             for (int a = 0; a < 3; ++a) gp[a] += dot * cs.dweight[k][a];
                           }
                         }
                       }
                     });
}

Var avg_pool3d(const Var& x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) % 2 || xv.dim(2) % 2 || xv.dim(3) % 2) {
    throw ShapeError("avg_pool3d needs [C,D,H,W] with even extents, got " + shape_string(xv.shape()));
  }
  const std::size_t C = xv.dim(0), D = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t d = D / 2, h = H / 2, w = W / 2;
  Tensor out(Shape{C, d, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < H; ++j)
        for (std::size_t k = 0; k < W; ++k)
          out[((c * d + i / 2) * h + j / 2) * w + k / 2] += 0.125 * xv[((c * D + i) * H + j) * W + k];
  return tape.record("avg_pool3d", std::move(out), {x},
                     [C, D, H, W, d, h, w](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       Tensor* gx = gin[0];
                       if (!gx) return;
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t i = 0; i < D; ++i)
                           for (std::size_t j = 0; j < H; ++j)
                             for (std::size_t k = 0; k < W; ++k)
                               (*gx)[((c * D + i) * H + j) * W + k] += 0.125 * g[((c * d + i / 2) * h + j / 2) * w + k / 2];
                     });
}

Var upsample_nearest3d(const Var& x, std::size_t factor) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || factor == 0) throw ShapeError("upsample_nearest3d needs [C,D,H,W] and factor >= 1");
  const std::size_t C = xv.dim(0), d = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t D = d * factor, H = h * factor, W = w * factor;
  Tensor out(Shape{C, D, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < H; ++j) {
        const double* src = xv.ptr() + ((c * d + i / factor) * h + j / factor) * w;
        double* dst = out.ptr() + ((c * D + i) * H + j) * W;
        for (std::size_t k = 0; k < W; ++k) dst[k] = src[k / factor];
      }
  return tape.record("upsample_nearest3d", std::move(out), {x},
                     [C, d, h, w, D, H, W, factor](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       Tensor* gx = gin[0];
                       if (!gx) return;
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t i = 0; i < D; ++i)
                           for (std::size_t j = 0; j < H; ++j) {
                             double* dst = gx->ptr() + ((c * d + i / factor) * h + j / factor) * w;
                             const double* src = g.ptr() + ((c * D + i) * H + j) * W;
                             for (std::size_t k = 0; k < W; ++k) dst[k / factor] += src[k];
                           }
                     });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm on a scalar");
  const std::size_t d = xv.shape().back();
  if (gain.numel() != d || bias.numel() != d) throw ShapeError("layer_norm: gain/bias width mismatch");
  const std::size_t rows = xv.numel() / d;
  Tensor out(xv.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.ptr() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      out[r * d + i] = (xr[i] - mu) * rstd[r] * gain.value()[i] + bias.value()[i];
    }
  }
  return tape.record("layer_norm", std::move(out), {x, gain, bias},
                     [x, gain, d, rows, rstd = std::move(rstd)](const Tensor&, const Tensor& g,
                                                                std::span<Tensor* const> gin) {
                       const Tensor& xv = x.value();
                       const Tensor& gv = gain.value();
                       std::vector<double> xhat(d), gxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = xv.ptr() + r * d;
                         const double* gr = g.ptr() + r * d;
                         double mu = 0.0;
                         for (std::size_t i = 0; i < d; ++i) mu += xr[i];
                         mu /= static_cast<double>(d);
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t i = 0; i < d; ++i) {
                           xhat[i] = (xr[i] - mu) * rstd[r];
                           gxhat[i] = gr[i] * gv[i];
                           m1 += gxhat[i];
                           m2 += gxhat[i] * xhat[i];
                         }
                         m1 /= static_cast<double>(d);
                         m2 /= static_cast<double>(d);
                         if (gin[0]) {
                           double* gx = gin[0]->ptr() + r * d;
                           for (std::size_t i = 0; i < d; ++i) gx[i] += rstd[r] * (gxhat[i] - m1 - xhat[i] * m2);
                         }
                         if (gin[1]) {
                           for (std::size_t i = 0; i < d; ++i) (*gin[1])[i] += gr[i] * xhat[i];
                         }
                         if (gin[2]) {
                           for (std::size_t i = 0; i < d; ++i) (*gin[2])[i] += gr[i];
                         }
                       }
                     });
}

Var straight_through(Tensor hard, const Var& soft) {
  Tape& tape = tape_of(soft);
  if (hard.shape() != soft.shape()) {
    throw ShapeError("straight_through: " + shape_string(hard.shape()) + " vs " + shape_string(soft.shape()));
  }
  return tape.record("straight_through", std::move(hard), {soft},
                     [](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       if (Tensor* gs = gin[0]) gs->add_(g);
                     });
}

Var weighted_point_sum(const Var& samples, const Var& weights) {
  Tape& tape = tape_of(samples);
  const Tensor& sv = samples.value();
  const Tensor& wv = weights.value();
  if (sv.rank() != 3 || wv.rank() != 2 || sv.dim(0) != wv.dim(0) || sv.dim(1) != wv.dim(1)) {
    throw ShapeError("weighted_point_sum: samples " + shape_string(sv.shape()) + " weights " +
                     shape_string(wv.shape()));
  }
  const std::size_t n = sv.dim(0), P = sv.dim(1), C = sv.dim(2);
  Tensor out(Shape{n, C});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < P; ++k) {
      const double wk = wv[i * P + k];
      const double* s = sv.ptr() + (i * P + k) * C;
      double* o = out.ptr() + i * C;
      for (std::size_t c = 0; c < C; ++c) o[c] += wk * s[c];
    }
  return tape.record("weighted_point_sum", std::move(out), {samples, weights},
                     [samples, weights, n, P, C](const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
                       const Tensor& sv = samples.value();
                       const Tensor& wv = weights.value();
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t k = 0; k < P; ++k) {
                           const double* gi = g.ptr() + i * C;
                           if (gin[0]) {
                             double* gs = gin[0]->ptr() + (i * P + k) * C;
                             for (std::size_t c = 0; c < C; ++c) gs[c] += wv[i * P + k] * gi[c];
                           }
                           if (gin[1]) {
                             const double* s = sv.ptr() + (i * P + k) * C;
                             double dot = 0.0;
                             for (std::size_t c = 0; c < C; ++c) dot += s[c] * gi[c];
                             (*gin[1])[i * P + k] += dot;
                           }
                         }
                     });
}

}  // namespace occgen
