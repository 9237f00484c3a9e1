#pragma once

#include "litseg/error.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>

namespace litseg {

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Batch of feature maps in NCHW order.
template <class S>
struct Tensor {
  using Scalar = S;

  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Eigen::Array<S, Eigen::Dynamic, 1> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(Eigen::Index(n_) * c_ * h_ * w_)) {}

  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  Eigen::Index sample_size() const { return Eigen::Index(c) * plane(); }

  S* sample(int i) { return data.data() + i * sample_size(); }
  const S* sample(int i) const { return data.data() + i * sample_size(); }
  S* channel(int i, int ch) { return sample(i) + ch * plane(); }
  const S* channel(int i, int ch) const { return sample(i) + ch * plane(); }

  S& operator()(int i, int ch, int y, int x) { return channel(i, ch)[Eigen::Index(y) * w + x]; }
  const S& operator()(int i, int ch, int y, int x) const { return channel(i, ch)[Eigen::Index(y) * w + x]; }

  /// Sample `i` viewed as a (channels x pixels) matrix.
  Eigen::Map<RowMatrix<S>> matrix(int i) { return {sample(i), c, plane()}; }
  Eigen::Map<const RowMatrix<S>> matrix(int i) const { return {sample(i), c, plane()}; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Channel-wise concatenation [a, b].
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw Error(ErrorCode::ShapeMismatch, "concat " + a.shape_string() + " with " + b.shape_string());
  Tensor<S> out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.sample(i), a.sample(i) + a.sample_size(), out.sample(i));
    std::copy(b.sample(i), b.sample(i) + b.sample_size(), out.channel(i, a.c));
  }
  return out;
}

/// Channels [first, first + count).
template <class S>
Tensor<S> slice_channels(const Tensor<S>& t, int first, int count) {
  Tensor<S> out(t.n, count, t.h, t.w);
  for (int i = 0; i < t.n; ++i) std::copy(t.channel(i, first), t.channel(i, first + count), out.sample(i));
  return out;
}

/// dst[:, first:first+src.c] += src
template <class S>
void add_channels(Tensor<S>& dst, int first, const Tensor<S>& src) {
  for (int i = 0; i < src.n; ++i) {
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> d(dst.channel(i, first), src.sample_size());
    d += Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(src.sample(i), src.sample_size());
  }
}

}  // namespace litseg
