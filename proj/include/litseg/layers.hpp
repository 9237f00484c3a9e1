#pragma once

#include "litseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace litseg {

/// Train: batch BN statistics, dropout on, caches kept for backward.
/// Frozen: running BN statistics, dropout off, caches kept (a fixed
/// differentiable function, used for gradient checks).
/// Infer: running statistics, dropout off, nothing cached.
enum class Mode { Train, Frozen, Infer };

struct ForwardContext {
  Mode mode = Mode::Infer;
  std::mt19937_64* rng = nullptr;

  bool caching() const { return mode != Mode::Infer; }
};

template <class S>
struct Param {
  std::string name;
  Eigen::Array<S, Eigen::Dynamic, 1> value;
  Eigen::Array<S, Eigen::Dynamic, 1> grad;
  bool decay = false;  // conv weights only
  Eigen::Index fan_in = 0;

  Param() = default;
  Param(std::string n, Eigen::Index size, S init, bool is_decayed)
      : name(std::move(n)),
        value(Eigen::Array<S, Eigen::Dynamic, 1>::Constant(size, init)),
        grad(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(size)),
        decay(is_decayed) {}
};

/// Non-trainable state that is still checkpointed (BN running statistics).
template <class S>
struct Buffer {
  std::string name;
  Eigen::Array<S, Eigen::Dynamic, 1>* value;
};

inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

/// Square convolution, stride 1, zero padding k/2. Weights are laid out as
/// an (out x in*k*k) matrix.
template <class S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int ksize)
      : in_(in), out_(out), k_(ksize),
        weight_(name + ".weight", Eigen::Index(out) * in * ksize * ksize, S(0), true),
        bias_(name + ".bias", out, S(0), false) {
    weight_.fan_in = Eigen::Index(in) * ksize * ksize;
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

  Tensor<S> forward(const Tensor<S>& x) const {
    check_input(x);
    Tensor<S> y(x.n, out_, x.h, x.w);
    const auto wm = weights();
    const Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias_.value.data(), out_);
    for (int i = 0; i < x.n; ++i) {
      auto ym = y.matrix(i);
      if (k_ == 1) {
        ym.noalias() = wm * x.matrix(i);
      } else {
        RowMatrix<S> col;
        for (int r0 = 0; r0 < x.h; r0 += chunk_rows(x)) {
          const int r1 = std::min(x.h, r0 + chunk_rows(x));
          im2col(x, i, r0, r1, col);
          ym.middleCols(Eigen::Index(r0) * x.w, col.cols()).noalias() = wm * col;
        }
      }
      ym.colwise() += b;
    }
    return y;
  }

  /// Accumulates weight/bias gradients; returns d(loss)/d(x).
  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& dy) {
    Tensor<S> dx(x.n, x.c, x.h, x.w);
    const auto wm = weights();
    Eigen::Map<RowMatrix<S>> dw(weight_.grad.data(), out_, Eigen::Index(in_) * k_ * k_);
    for (int i = 0; i < x.n; ++i) {
      const auto dym = dy.matrix(i);
      bias_.grad += dym.rowwise().sum().array();
      if (k_ == 1) {
        dw.noalias() += dym * x.matrix(i).transpose();
        dx.matrix(i).noalias() = wm.transpose() * dym;
      } else {
        RowMatrix<S> col, dcol;
        for (int r0 = 0; r0 < x.h; r0 += chunk_rows(x)) {
          const int r1 = std::min(x.h, r0 + chunk_rows(x));
          im2col(x, i, r0, r1, col);
          const auto dyc = dym.middleCols(Eigen::Index(r0) * x.w, col.cols());
          dw.noalias() += dyc * col.transpose();
          dcol.noalias() = wm.transpose() * dyc;
          col2im(dcol, i, r0, r1, dx);
        }
      }
    }
    return dx;
  }

  Param<S>& weight() { return weight_; }
  Param<S>& bias() { return bias_; }
  const Param<S>& weight() const { return weight_; }

 private:
  Eigen::Map<const RowMatrix<S>> weights() const {
    return {weight_.value.data(), out_, Eigen::Index(in_) * k_ * k_};
  }

  void check_input(const Tensor<S>& x) const {
    if (x.c != in_)
      throw Error(ErrorCode::ShapeMismatch, weight_.name + " expects " + std::to_string(in_) + " channels, got " +
                                                std::to_string(x.c));
  }

  // Bounds the im2col buffer to about 2M entries.
  int chunk_rows(const Tensor<S>& x) const {
    const Eigen::Index per_row = Eigen::Index(in_) * k_ * k_ * x.w;
    return int(std::max<Eigen::Index>(1, (Eigen::Index(1) << 21) / per_row));
  }

  void im2col(const Tensor<S>& x, int i, int r0, int r1, RowMatrix<S>& col) const {
    const int pad = k_ / 2;
    const Eigen::Index cols = Eigen::Index(r1 - r0) * x.w;
    col.resize(Eigen::Index(in_) * k_ * k_, cols);
    for (int ci = 0; ci < in_; ++ci) {
      const S* src = x.channel(i, ci);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          S* dst = col.row((Eigen::Index(ci) * k_ + ky) * k_ + kx).data();
          for (int r = r0; r < r1; ++r) {
            const int sy = r + ky - pad;
            S* out = dst + Eigen::Index(r - r0) * x.w;
            if (sy < 0 || sy >= x.h) {
              std::fill(out, out + x.w, S(0));
              continue;
            }
            const S* row = src + Eigen::Index(sy) * x.w;
            for (int xx = 0; xx < x.w; ++xx) {
              const int sx = xx + kx - pad;
              out[xx] = (sx >= 0 && sx < x.w) ? row[sx] : S(0);
            }
          }
        }
    }
  }

  void col2im(const RowMatrix<S>& dcol, int i, int r0, int r1, Tensor<S>& dx) const {
    const int pad = k_ / 2;
    for (int ci = 0; ci < in_; ++ci) {
      S* dst = dx.channel(i, ci);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const S* src = dcol.row((Eigen::Index(ci) * k_ + ky) * k_ + kx).data();
          for (int r = r0; r < r1; ++r) {
            const int sy = r + ky - pad;
            if (sy < 0 || sy >= dx.h) continue;
            const S* in = src + Eigen::Index(r - r0) * dx.w;
            S* row = dst + Eigen::Index(sy) * dx.w;
            for (int xx = 0; xx < dx.w; ++xx) {
              const int sx = xx + kx - pad;
              if (sx >= 0 && sx < dx.w) row[sx] += in[xx];
            }
          }
        }
    }
  }

  int in_ = 0, out_ = 0, k_ = 1;
  Param<S> weight_;
  Param<S> bias_;
};

template <class S>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels)
      : gamma_(name + ".gamma", channels, S(1), false),
        beta_(name + ".beta", channels, S(0), false),
        running_mean_(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(channels)),
        running_var_(Eigen::Array<S, Eigen::Dynamic, 1>::Ones(channels)),
        name_(name) {}

  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) {
    const int c = int(gamma_.value.size());
    if (x.c != c) throw Error(ErrorCode::ShapeMismatch, name_ + " channel mismatch");
    const bool batch_stats = ctx.mode == Mode::Train;
    Eigen::Array<S, Eigen::Dynamic, 1> mean, var;
    if (batch_stats) {
      const double m = double(x.n) * double(x.plane());
      mean.setZero(c);
      var.setZero(c);
      for (int i = 0; i < x.n; ++i) mean += x.matrix(i).array().rowwise().sum();
      mean /= S(m);
      for (int i = 0; i < x.n; ++i) var += (x.matrix(i).array().colwise() - mean).square().rowwise().sum();
      var /= S(m);
      const S unbias = m > 1 ? S(m / (m - 1)) : S(1);
      running_mean_ = S(1 - kMomentum) * running_mean_ + S(kMomentum) * mean;
      running_var_ = S(1 - kMomentum) * running_var_ + S(kMomentum) * unbias * var;
    } else {
      mean = running_mean_;
      var = running_var_;
    }
    const Eigen::Array<S, Eigen::Dynamic, 1> inv_std = (var + S(kEpsilon)).rsqrt();
    Tensor<S> xhat(x.n, x.c, x.h, x.w), y(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
      xhat.matrix(i).array() = (x.matrix(i).array().colwise() - mean).colwise() * inv_std;
      y.matrix(i).array() = (xhat.matrix(i).array().colwise() * gamma_.value).colwise() + beta_.value;
    }
    if (ctx.caching()) {
      xhat_ = std::move(xhat);
      inv_std_ = inv_std;
      batch_stats_ = batch_stats;
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int c = int(gamma_.value.size());
    Eigen::Array<S, Eigen::Dynamic, 1> sum_dy = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(c);
    Eigen::Array<S, Eigen::Dynamic, 1> sum_dy_xhat = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(c);
    for (int i = 0; i < dy.n; ++i) {
      sum_dy += dy.matrix(i).array().rowwise().sum();
      sum_dy_xhat += (dy.matrix(i).array() * xhat_.matrix(i).array()).rowwise().sum();
    }
    gamma_.grad += sum_dy_xhat;
    beta_.grad += sum_dy;
    Tensor<S> dx(dy.n, dy.c, dy.h, dy.w);
    const Eigen::Array<S, Eigen::Dynamic, 1> scale = gamma_.value * inv_std_;
    if (batch_stats_) {
      const S m = S(double(dy.n) * double(dy.plane()));
      for (int i = 0; i < dy.n; ++i) {
        auto d = dx.matrix(i);
        d.array() = ((dy.matrix(i).array() * m).colwise() - sum_dy) - xhat_.matrix(i).array().colwise() * sum_dy_xhat;
        d.array().colwise() *= scale / m;
      }
    } else {
      for (int i = 0; i < dy.n; ++i) dx.matrix(i).array() = dy.matrix(i).array().colwise() * scale;
    }
    return dx;
  }

  Param<S>& gamma() { return gamma_; }
  Param<S>& beta() { return beta_; }
  Eigen::Array<S, Eigen::Dynamic, 1>& running_mean() { return running_mean_; }
  Eigen::Array<S, Eigen::Dynamic, 1>& running_var() { return running_var_; }
  const std::string& name() const { return name_; }

 private:
  Param<S> gamma_;
  Param<S> beta_;
  Eigen::Array<S, Eigen::Dynamic, 1> running_mean_;
  Eigen::Array<S, Eigen::Dynamic, 1> running_var_;
  std::string name_;
  Tensor<S> xhat_;
  Eigen::Array<S, Eigen::Dynamic, 1> inv_std_;
  bool batch_stats_ = false;
};

/// ELU with alpha = 1.
template <class S>
Tensor<S> elu(const Tensor<S>& x) {
  Tensor<S> y = x;
  y.data = (x.data > S(0)).select(x.data, x.data.exp() - S(1));
  return y;
}

/// Backward through ELU given its output `y`.
template <class S>
Tensor<S> elu_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  Tensor<S> dx = dy;
  dx.data = (y.data > S(0)).select(dy.data, dy.data * (y.data + S(1)));
  return dx;
}

/// Inverted dropout: kept units are scaled by 1/(1-p) during training.
template <class S>
class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) {
    active_ = ctx.mode == Mode::Train && p_ > 0.0;
    if (!active_) return x;
    if (!ctx.rng) throw Error(ErrorCode::InvalidSpec, "dropout in training mode needs an RNG");
    mask_.resize(x.data.size());
    const S keep = S(1.0 / (1.0 - p_));
    for (Eigen::Index j = 0; j < mask_.size(); ++j) mask_[j] = uniform01(*ctx.rng) >= p_ ? keep : S(0);
    Tensor<S> y = x;
    y.data *= mask_;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) const {
    if (!active_) return dy;
    Tensor<S> dx = dy;
    dx.data *= mask_;
    return dx;
  }

  double p() const { return p_; }

 private:
  double p_;
  bool active_ = false;
  Eigen::Array<S, Eigen::Dynamic, 1> mask_;
};

/// 2x2 max pooling, stride 2, no padding.
template <class S>
class MaxPool2 {
 public:
  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
      throw Error(ErrorCode::OddDimension, "max pooling needs even spatial size, got " + x.shape_string());
    Tensor<S> y(x.n, x.c, x.h / 2, x.w / 2);
    const bool cache = ctx.caching();
    if (cache) {
      argmax_.resize(y.data.size());
      in_shape_ = {x.n, x.c, x.h, x.w};
    }
    Eigen::Index o = 0;
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < x.c; ++c) {
        const S* src = x.channel(i, c);
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx, ++o) {
            Eigen::Index best = Eigen::Index(2 * yy) * x.w + 2 * xx;
            for (const Eigen::Index cand : {best + 1, best + x.w, best + x.w + 1})
              if (src[cand] > src[best]) best = cand;
            y.data[o] = src[best];
            if (cache) argmax_[o] = (Eigen::Index(i) * x.c + c) * x.plane() + best;
          }
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) const {
    Tensor<S> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (Eigen::Index o = 0; o < dy.data.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
    return dx;
  }

 private:
  Eigen::Array<Eigen::Index, Eigen::Dynamic, 1> argmax_;
  std::array<int, 4> in_shape_{};
};

namespace detail {

// Source taps for factor-2 bilinear upsampling with half-pixel centres.
inline void upsample_taps(int out, int in, int& lo, int& hi, double& w_hi) {
  const double src = (out + 0.5) / 2.0 - 0.5;
  const int base = int(std::floor(src));
  w_hi = src - base;
  lo = std::clamp(base, 0, in - 1);
  hi = std::clamp(base + 1, 0, in - 1);
}

}  // namespace detail

/// Factor-2 bilinear upsampling (half-pixel centres, edge clamped).
template <class S>
Tensor<S> upsample_bilinear2(const Tensor<S>& x) {
  Tensor<S> y(x.n, x.c, 2 * x.h, 2 * x.w);
  RowMatrix<S> tmp(x.h, y.w);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S* src = x.channel(i, c);
      S* dst = y.channel(i, c);
      for (int r = 0; r < x.h; ++r)
        for (int ox = 0; ox < y.w; ++ox) {
          int lo, hi;
          double wh;
          detail::upsample_taps(ox, x.w, lo, hi, wh);
          tmp(r, ox) = S(1 - wh) * src[Eigen::Index(r) * x.w + lo] + S(wh) * src[Eigen::Index(r) * x.w + hi];
        }
      for (int oy = 0; oy < y.h; ++oy) {
        int lo, hi;
        double wh;
        detail::upsample_taps(oy, x.h, lo, hi, wh);
        for (int ox = 0; ox < y.w; ++ox) dst[Eigen::Index(oy) * y.w + ox] = S(1 - wh) * tmp(lo, ox) + S(wh) * tmp(hi, ox);
      }
    }
  return y;
}

/// Adjoint of upsample_bilinear2.
template <class S>
Tensor<S> upsample_bilinear2_backward(const Tensor<S>& dy) {
  Tensor<S> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  RowMatrix<S> tmp(dx.h, dy.w);
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c) {
      const S* src = dy.channel(i, c);
      S* dst = dx.channel(i, c);
      tmp.setZero();
      for (int oy = 0; oy < dy.h; ++oy) {
        int lo, hi;
        double wh;
        detail::upsample_taps(oy, dx.h, lo, hi, wh);
        for (int ox = 0; ox < dy.w; ++ox) {
          const S g = src[Eigen::Index(oy) * dy.w + ox];
          tmp(lo, ox) += S(1 - wh) * g;
          tmp(hi, ox) += S(wh) * g;
        }
      }
      for (int r = 0; r < dx.h; ++r)
        for (int ox = 0; ox < dy.w; ++ox) {
          int lo, hi;
          double wh;
          detail::upsample_taps(ox, dx.w, lo, hi, wh);
          dst[Eigen::Index(r) * dx.w + lo] += S(1 - wh) * tmp(r, ox);
          dst[Eigen::Index(r) * dx.w + hi] += S(wh) * tmp(r, ox);
        }
    }
  return dx;
}

/// Per-pixel softmax over channels.
template <class S>
Tensor<S> softmax_channels(const Tensor<S>& logits) {
  Tensor<S> p = logits;
  for (int i = 0; i < logits.n; ++i) {
    auto m = p.matrix(i);
    const Eigen::Matrix<S, 1, Eigen::Dynamic> peak = m.colwise().maxCoeff();
    m.rowwise() -= peak;
    m = m.array().exp().matrix();
    const Eigen::Array<S, 1, Eigen::Dynamic> total = m.colwise().sum().array();
    m.array().rowwise() /= total;
  }
  return p;
}

/// d(loss)/d(logits) from d(loss)/d(probs) and the softmax output.
template <class S>
Tensor<S> softmax_channels_backward(const Tensor<S>& probs, const Tensor<S>& dprobs) {
  Tensor<S> dl = dprobs;
  for (int i = 0; i < probs.n; ++i) {
    const auto p = probs.matrix(i).array();
    const auto dp = dprobs.matrix(i).array();
    const Eigen::Array<S, 1, Eigen::Dynamic> dot = (p * dp).colwise().sum();
    dl.matrix(i).array() = p * (dp.rowwise() - dot);
  }
  return dl;
}

}  // namespace litseg
