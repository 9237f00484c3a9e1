#pragma once

#include "litseg/layers.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

namespace litseg {

template <class S>
using Column = Eigen::Array<S, Eigen::Dynamic, 1>;

/// Per-pixel class indices, laid out (n, y, x) like one channel of a Tensor.
using ClassMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

struct LossWeights {
  double lambda = 0.5;  // weighted cross-entropy
  double gamma = 0.5;   // dice term
  double l2 = 1e-6;
  double dice_epsilon = 1e-5;
};

namespace detail {

template <class S>
void check_pixels(const Tensor<S>& probs, Eigen::Index target, Eigen::Index weights) {
  const Eigen::Index pixels = Eigen::Index(probs.n) * probs.plane();
  if (target != pixels || weights != pixels)
    throw Error(ErrorCode::ShapeMismatch, "loss inputs disagree on pixel count");
  if (!probs.data.allFinite()) throw Error(ErrorCode::NonfiniteInput, "non-finite probabilities");
}

template <class S>
constexpr S log_floor() {
  return S(1e-12);
}

}  // namespace detail

/// sum_x w(x) * -log p(x, t(x)) / sum_x w(x). When `dprobs` is given it is
/// overwritten with d(loss)/d(probs).
template <class S>
S weighted_cross_entropy(const Tensor<S>& probs, const ClassMap& target, const Column<S>& weights,
                         Tensor<S>* dprobs = nullptr) {
  detail::check_pixels(probs, target.size(), weights.size());
  if (!weights.allFinite()) throw Error(ErrorCode::NonfiniteInput, "non-finite weights");
  const S total_w = weights.sum();
  if (!(total_w > S(0))) throw Error(ErrorCode::NonfiniteInput, "weight map sums to zero");
  if (dprobs) *dprobs = Tensor<S>(probs.n, probs.c, probs.h, probs.w);
  S acc = 0;
  const Eigen::Index plane = probs.plane();
  for (int i = 0; i < probs.n; ++i)
    for (Eigen::Index px = 0; px < plane; ++px) {
      const Eigen::Index flat = Eigen::Index(i) * plane + px;
      const int t = target[flat];
      if (t >= probs.c) throw Error(ErrorCode::ShapeMismatch, "target class exceeds channel count");
      const S p = probs.channel(i, t)[px];
      const S w = weights[flat];
      if (p > detail::log_floor<S>()) {
        acc -= w * std::log(p);
        if (dprobs) dprobs->channel(i, t)[px] = -w / (p * total_w);
      } else {
        acc -= w * std::log(detail::log_floor<S>());
      }
    }
  return acc / total_w;
}

/// (2 sum p g + eps) / (sum p^2 + sum g^2 + eps). `grad`, when given, is
/// overwritten with d(dice)/d(p).
template <class S>
S dice_coefficient(const Column<S>& p, const Column<S>& g, S epsilon, Column<S>* grad = nullptr) {
  if (p.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "dice inputs differ in length");
  const S num = S(2) * (p * g).sum() + epsilon;
  const S den = p.square().sum() + g.square().sum() + epsilon;
  if (grad) {
    if (den > S(0))
      *grad = (S(2) * g * den - num * S(2) * p) / (den * den);
    else
      *grad = Column<S>::Zero(p.size());
  }
  if (!(den > S(0))) return S(1);
  return num / den;
}

/// Class-1 probabilities of every pixel in the batch, (n, y, x) order.
template <class S>
Column<S> foreground(const Tensor<S>& probs) {
  Column<S> fg(Eigen::Index(probs.n) * probs.plane());
  for (int i = 0; i < probs.n; ++i)
    fg.segment(Eigen::Index(i) * probs.plane(), probs.plane()) =
        Eigen::Map<const Column<S>>(probs.channel(i, 1), probs.plane());
  return fg;
}

inline Column<double> binary_target(const ClassMap& target) { return (target == 1).cast<double>(); }

/// Sum of squared conv weights (biases and BN parameters excluded).
template <class S>
S l2_penalty(std::span<Param<S>* const> params) {
  S acc = 0;
  for (const auto* p : params)
    if (p->decay) acc += p->value.square().sum();
  return acc;
}

template <class S>
void add_l2_gradient(std::span<Param<S>* const> params, S l2) {
  for (auto* p : params)
    if (p->decay) p->grad += S(2) * l2 * p->value;
}

/// weighted_cross_entropy + l2 * ||conv weights||^2. With `dprobs`, also
/// accumulates the L2 gradient into the parameters.
template <class S>
S liver_total_loss(const Tensor<S>& probs, const ClassMap& target, const Column<S>& weights,
                   std::span<Param<S>* const> params, const LossWeights& lw, Tensor<S>* dprobs = nullptr) {
  const S wce = weighted_cross_entropy(probs, target, weights, dprobs);
  if (dprobs && lw.l2 != 0.0) add_l2_gradient(params, S(lw.l2));
  return wce + S(lw.l2) * l2_penalty(params);
}

/// lambda * WCE + gamma * (1 - dice(p_fg, g)) + l2 * ||conv weights||^2,
/// with dice pooled over every pixel of the batch.
template <class S>
S tumor_total_loss(const Tensor<S>& probs, const ClassMap& target, const Column<S>& weights,
                   std::span<Param<S>* const> params, const LossWeights& lw, Tensor<S>* dprobs = nullptr) {
  const S wce = weighted_cross_entropy(probs, target, weights, dprobs);
  const Column<S> g = binary_target(target).template cast<S>();
  Column<S> dd;
  const S dice = dice_coefficient(foreground(probs), g, S(lw.dice_epsilon), dprobs ? &dd : nullptr);
  if (dprobs) {
    dprobs->data *= S(lw.lambda);
    for (int i = 0; i < probs.n; ++i)
      Eigen::Map<Column<S>>(dprobs->channel(i, 1), probs.plane()) -=
          S(lw.gamma) * dd.segment(Eigen::Index(i) * probs.plane(), probs.plane());
    if (lw.l2 != 0.0) add_l2_gradient(params, S(lw.l2));
  }
  return S(lw.lambda) * wce + S(lw.gamma) * (S(1) - dice) + S(lw.l2) * l2_penalty(params);
}

}  // namespace litseg
