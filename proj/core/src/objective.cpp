// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/objective.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "occgen/error.hpp"
#include "occgen/ops.hpp"

namespace occgen {

namespace {

void check_volume(const Var& v, const SemanticGrid& gt, const char* what) {
  const Shape& s = v.shape();
  const GridDims& d = gt.geometry.dims;
  if (s.size() != 4 || s[0] != gt.num_classes || s[1] != d.x || s[2] != d.y || s[3] != d.z) {
    throw ShapeError(std::string(what) + ": " + shape_string(s) + " does not match the ground-truth grid");
  }
}

Tensor one_hot(const SemanticGrid& gt) {
  const std::size_t vol = gt.labels.size();
  Tensor t(Shape{gt.num_classes, gt.geometry.dims.x, gt.geometry.dims.y, gt.geometry.dims.z});
  for (std::size_t v = 0; v < vol; ++v) t[gt.labels[v] * vol + v] = 1.0;
  return t;
}

Tensor indicator(const SemanticGrid& gt, std::uint8_t cls, bool equal) {
  const GridDims& d = gt.geometry.dims;
  Tensor t(Shape{d.x, d.y, d.z});
  for (std::size_t v = 0; v < gt.labels.size(); ++v) t[v] = (gt.labels[v] == cls) == equal ? 1.0 : 0.0;
  return t;
}

/// -log of the precision/recall/specificity ratios for one binary problem.
/// p: predicted probability of the positive class; pos: gt indicator.
Var scal_terms(const Var& p, const Tensor& pos) {
  Tape& tape = *p.tape();
  const double n_pos = std::accumulate(pos.data().begin(), pos.data().end(), 0.0);
  const double n_neg = static_cast<double>(pos.numel()) - n_pos;
  const double p_sum = std::accumulate(p.value().data().begin(), p.value().data().end(), 0.0);
  const Var hit = sum(mul(p, tape.constant(pos)));
  Var loss;
  auto accumulate_term = [&](const Var& ratio) {
    const Var term = neg(log(ratio));
    loss = loss ? add(loss, term) : term;
  };
  if (p_sum > 0.0) accumulate_term(div(hit, sum(p)));
  if (n_pos > 0.0) accumulate_term(affine(hit, 1.0 / n_pos));
  if (n_neg > 0.0) {
    Tensor negs = pos;
    for (double& v : negs.data()) v = 1.0 - v;
    const Var spec = sum(mul(affine(p, -1.0, 1.0), tape.constant(std::move(negs))));
    accumulate_term(affine(spec, 1.0 / n_neg));
  }
  return loss ? loss : tape.constant(Tensor::scalar(0.0));
}

Var channel(const Var& probs, std::size_t c) {
  const Shape& s = probs.shape();
  return reshape(slice(probs, c, c + 1), {s[1], s[2], s[3]});
}

Var named_term(const char* name, const std::function<Var()>& make) {
  try {
    Var v = make();
    if (!v.value().all_finite()) throw NumericalError(std::string("loss term '") + name + "' is not finite");
    return v;
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    if (msg.rfind("loss term", 0) == 0) throw;
    throw NumericalError(std::string("loss term '") + name + "' is not finite: " + msg);
  }
}

}  // namespace

Var ce_loss(const Var& logits, const SemanticGrid& gt) {
  check_volume(logits, gt, "ce_loss");
  Tape& tape = *logits.tape();
  const Var picked = sum(mul(log_softmax(logits, 0), tape.constant(one_hot(gt))));
  return affine(picked, -1.0 / static_cast<double>(gt.labels.size()));
}

std::vector<double> lovasz_grad(std::span<const std::uint8_t> sorted_fg) {
  const std::size_t n = sorted_fg.size();
  std::vector<double> g(n);
  const double gts = static_cast<double>(std::count(sorted_fg.begin(), sorted_fg.end(), std::uint8_t{1}));
  double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_fg += sorted_fg[i];
    cum_bg += 1.0 - sorted_fg[i];
    const double jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    g[i] = jaccard - prev;
    prev = jaccard;
  }
  return g;
}

Var lovasz_softmax(const Var& probs, const SemanticGrid& gt) {
  check_volume(probs, gt, "lovasz_softmax");
  const std::size_t C = gt.num_classes;
  const std::size_t vol = gt.labels.size();
  std::vector<std::uint8_t> present(C, 0);
  for (std::uint8_t l : gt.labels) present[l] = 1;
  const auto n_present = static_cast<double>(std::count(present.begin(), present.end(), std::uint8_t{1}));

  // Per present class: voxel order by decreasing error and the matching gradient weights.
  struct ClassTerm {
    std::size_t cls;
    std::vector<std::size_t> order;
    std::vector<double> grad;
  };
  std::vector<ClassTerm> terms;
  const Tensor& p = probs.value();
  double loss = 0.0;
  std::vector<double> err(vol);
  std::vector<std::uint8_t> fg_sorted(vol);
  for (std::size_t c = 0; c < C; ++c) {
    if (!present[c]) continue;
    ClassTerm term{c, std::vector<std::size_t>(vol), {}};
    for (std::size_t v = 0; v < vol; ++v) {
      const bool fg = gt.labels[v] == c;
      err[v] = fg ? 1.0 - p[c * vol + v] : p[c * vol + v];
    }
    std::iota(term.order.begin(), term.order.end(), std::size_t{0});
    std::stable_sort(term.order.begin(), term.order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    for (std::size_t i = 0; i < vol; ++i) fg_sorted[i] = gt.labels[term.order[i]] == c ? 1 : 0;
    term.grad = lovasz_grad(fg_sorted);
    double lc = 0.0;
    for (std::size_t i = 0; i < vol; ++i) lc += err[term.order[i]] * term.grad[i];
    loss += lc / n_present;
    terms.push_back(std::move(term));
  }
  std::vector<std::uint8_t> labels = gt.labels;
  return probs.tape()->record(
      "lovasz_softmax", Tensor::scalar(loss), {probs},
      [terms = std::move(terms), labels = std::move(labels), vol, n_present](const Tensor&, const Tensor& g,
                                                                               std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const double scale = g.item() / n_present;
        for (const ClassTerm& term : terms) {
          for (std::size_t i = 0; i < vol; ++i) {
            const std::size_t v = term.order[i];
            const double sign = labels[v] == term.cls ? -1.0 : 1.0;
            (*gin[0])[term.cls * vol + v] += scale * sign * term.grad[i];
          }
        }
      });
}

Var scal_loss(const Var& probs, const SemanticGrid& gt, ScalMode mode) {
  check_volume(probs, gt, "scal_loss");
  if (mode == ScalMode::Geometric) {
    const Var occupied = affine(channel(probs, 0), -1.0, 1.0);
    return scal_terms(occupied, indicator(gt, 0, false));
  }
  std::vector<std::uint8_t> present(gt.num_classes, 0);
  for (std::uint8_t l : gt.labels) present[l] = 1;
  Var total;
  std::size_t count = 0;
  for (std::size_t c = 0; c < gt.num_classes; ++c) {
    if (!present[c]) continue;
    const Var term = scal_terms(channel(probs, c), indicator(gt, static_cast<std::uint8_t>(c), true));
    total = total ? add(total, term) : term;
    ++count;
  }
  return affine(total, 1.0 / static_cast<double>(count));
}

Var depth_loss(std::span<const Var> logits, std::span<const std::vector<std::uint16_t>> gt_bins) {
  if (logits.empty() || logits.size() != gt_bins.size()) throw ShapeError("depth_loss: need one gt bin map per view");
  Tape& tape = *logits[0].tape();
  Var total;
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Shape& s = logits[i].shape();
    if (s.size() != 3 || gt_bins[i].size() != s[1] * s[2]) throw ShapeError("depth_loss: logits/bins mismatch");
    const std::size_t plane = s[1] * s[2];
    Tensor target(s);
    for (std::size_t p = 0; p < plane; ++p) {
      if (gt_bins[i][p] >= s[0]) throw ValueError("depth_loss: gt bin out of range");
      target[gt_bins[i][p] * plane + p] = 1.0;
    }
    const Var picked = sum(mul(log_softmax(logits[i], 0), tape.constant(std::move(target))));
    total = total ? add(total, picked) : picked;
    pixels += plane;
  }
  return affine(total, -1.0 / static_cast<double>(pixels));
}

LossReport LossTerms::report() const {
  return {ce.value().item(),       lovasz.value().item(), scal_geo.value().item(),
          scal_sem.value().item(), depth.value().item(),  total.value().item()};
}

LossTerms total_loss(const Var& logits, const SemanticGrid& gt, std::span<const Var> depth_logits,
                     std::span<const std::vector<std::uint16_t>> depth_gt, const LossWeights& weights) {
  LossTerms t;
  t.ce = named_term("ce", [&] { return ce_loss(logits, gt); });
  const Var probs = named_term("probs", [&] { return softmax(logits, 0); });
  t.lovasz = named_term("lovasz", [&] { return lovasz_softmax(probs, gt); });
  t.scal_geo = named_term("scal_geo", [&] { return scal_loss(probs, gt, ScalMode::Geometric); });
  t.scal_sem = named_term("scal_sem", [&] { return scal_loss(probs, gt, ScalMode::Semantic); });
  t.depth = named_term("depth", [&] { return depth_loss(depth_logits, depth_gt); });
  t.total = named_term("total", [&] {
    Var s = affine(t.ce, weights.ce);
    s = add(s, affine(t.lovasz, weights.lovasz));
    s = add(s, affine(t.scal_geo, weights.scal_geo));
    s = add(s, affine(t.scal_sem, weights.scal_sem));
    return add(s, affine(t.depth, weights.depth));
  });
  return t;
}

ConfusionStats confusion(const SemanticGrid& pred, const SemanticGrid& gt) {
  if (pred.geometry.dims != gt.geometry.dims) throw ShapeError("confusion: grid dimensions differ");
  const std::size_t C = std::max(pred.num_classes, gt.num_classes);
  ConfusionStats s{std::vector<std::size_t>(C), std::vector<std::size_t>(C), std::vector<std::size_t>(C)};
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    const std::uint8_t p = pred.labels[v], g = gt.labels[v];
    if (p == g) {
      ++s.tp[g];
    } else {
      ++s.fp[p];
      ++s.fn[g];
    }
  }
  return s;
}

double iou(const SemanticGrid& pred, const SemanticGrid& gt) {
  if (pred.geometry.dims != gt.geometry.dims) throw ShapeError("iou: grid dimensions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t v = 0; v < gt.labels.size(); ++v) {
    const bool p = pred.labels[v] > 0, g = gt.labels[v] > 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double class_iou(const ConfusionStats& stats, std::size_t c) {
  const std::size_t denom = stats.tp[c] + stats.fp[c] + stats.fn[c];
  return denom == 0 ? -1.0 : static_cast<double>(stats.tp[c]) / static_cast<double>(denom);
}

double miou(const SemanticGrid& pred, const SemanticGrid& gt) {
  const ConfusionStats s = confusion(pred, gt);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 1; c < s.tp.size(); ++c) {
    const double v = class_iou(s, c);
    if (v < 0.0) continue;
    total += v;
    ++count;
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

}  // namespace occgen
