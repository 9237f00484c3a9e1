#pragma once

#include "litseg/layers.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace litseg {

/// Declarative description of a dense FCN. Down path: InitConv, then
/// n_pool x (dense block, TD), then the bottleneck block. Up path:
/// n_pool x (TU, dense block), optional SBU, then the 3x3 softmax head.
/// There are no encoder-decoder skip connections.
struct NetworkSpec {
  int in_channels = 1;
  int initial_filters = 48;
  int growth_rate = 12;
  int layers_per_block = 4;
  int n_pool = 4;
  double dropout_p = 0.2;
  int n_classes = 2;
  bool final_sbu = true;

  /// Throws InvalidSpec.
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

NetworkSpec default_liver_spec();
NetworkSpec default_tumor_spec();
/// Desk-scale variants: growth rate 2, two pooling stages.
NetworkSpec tiny_liver_spec();
NetworkSpec tiny_tumor_spec();

enum class BlockKind { InitConv, DenseBlock, TD, Bottleneck, TU, SBU, Head };
const char* to_string(BlockKind kind);

struct PlannedBlock {
  BlockKind kind;
  int in_channels;
  int out_channels;
  double scale;  // spatial size relative to the network input
  bool concat_input = false;  // dense blocks only

  bool operator==(const PlannedBlock&) const = default;
};

using LayerPlan = std::vector<PlannedBlock>;

LayerPlan plan_network(const NetworkSpec& spec);

/// Runtime record of one block's execution, compared against the plan.
struct BlockTrace {
  BlockKind kind;
  int in_channels;
  int out_channels;
  int height;
  int width;
};

template <class S>
class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) = 0;
  virtual Tensor<S> backward(const Tensor<S>& dy) = 0;
  virtual void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) = 0;
  virtual BlockKind kind() const = 0;
};

namespace detail {

template <class S>
void collect_bn(BatchNorm<S>& bn, std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) {
  params.push_back(&bn.gamma());
  params.push_back(&bn.beta());
  buffers.push_back({bn.name() + ".running_mean", &bn.running_mean()});
  buffers.push_back({bn.name() + ".running_var", &bn.running_var()});
}

template <class S>
void collect_conv(Conv2d<S>& conv, std::vector<Param<S>*>& params) {
  params.push_back(&conv.weight());
  params.push_back(&conv.bias());
}

}  // namespace detail

/// BN -> ELU -> 3x3 conv -> dropout, emitting `growth` channels.
template <class S>
class DenseLayer {
 public:
  DenseLayer(const std::string& name, int in, int growth, double dropout)
      : bn_(name + ".bn", in), conv_(name + ".conv", in, growth, 3), dropout_(dropout) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) {
    Tensor<S> a = elu(bn_.forward(x, ctx));
    Tensor<S> y = dropout_.forward(conv_.forward(a), ctx);
    if (ctx.caching()) act_ = std::move(a);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Tensor<S> dconv = conv_.backward(act_, dropout_.backward(dy));
    return bn_.backward(elu_backward(act_, dconv));
  }

  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) {
    detail::collect_bn(bn_, params, buffers);
    detail::collect_conv(conv_, params);
  }

  int in_channels() const { return conv_.in_channels(); }

 private:
  BatchNorm<S> bn_;
  Conv2d<S> conv_;
  Dropout<S> dropout_;
  Tensor<S> act_;
};

/// Layer l sees the block input concatenated with all earlier layer outputs.
/// Output is the concatenation of the layer outputs, preceded by the block
/// input when `concat_input` is set.
template <class S>
class DenseBlock final : public Block<S> {
 public:
  DenseBlock(const std::string& name, BlockKind kind, int in, int growth, int layers, double dropout, bool concat_input)
      : kind_(kind), in_(in), growth_(growth), concat_input_(concat_input) {
    for (int l = 0; l < layers; ++l)
      layers_.emplace_back(name + ".layer" + std::to_string(l), in + l * growth, growth, dropout);
  }

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) override {
    if (x.c != in_) throw Error(ErrorCode::ShapeMismatch, "dense block input channels");
    Tensor<S> features = x;
    for (auto& layer : layers_) features = concat_channels(features, layer.forward(features, ctx));
    if (concat_input_) return features;
    return slice_channels(features, in_, int(layers_.size()) * growth_);
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const int total = in_ + int(layers_.size()) * growth_;
    Tensor<S> dfeat(dy.n, total, dy.h, dy.w);
    add_channels(dfeat, concat_input_ ? 0 : in_, dy);
    for (int l = int(layers_.size()) - 1; l >= 0; --l) {
      const int first = in_ + l * growth_;
      const Tensor<S> din = layers_[std::size_t(l)].backward(slice_channels(dfeat, first, growth_));
      add_channels(dfeat, 0, din);
    }
    return slice_channels(dfeat, 0, in_);
  }

  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) override {
    for (auto& layer : layers_) layer.collect(params, buffers);
  }

  BlockKind kind() const override { return kind_; }
  /// Input channel count seen by layer `l`.
  int layer_input_channels(int l) const { return layers_[std::size_t(l)].in_channels(); }

 private:
  BlockKind kind_;
  int in_;
  int growth_;
  bool concat_input_;
  std::vector<DenseLayer<S>> layers_;
};

/// BN -> ELU -> 1x1 conv -> dropout -> 2x2 max-pool; channel preserving.
template <class S>
class TransitionDown final : public Block<S> {
 public:
  TransitionDown(const std::string& name, int channels, double dropout)
      : bn_(name + ".bn", channels), conv_(name + ".conv", channels, channels, 1), dropout_(dropout) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) override {
    if (x.h % 2 != 0 || x.w % 2 != 0)
      throw Error(ErrorCode::OddDimension, "transition down needs even spatial size, got " + x.shape_string());
    Tensor<S> a = elu(bn_.forward(x, ctx));
    Tensor<S> y = pool_.forward(dropout_.forward(conv_.forward(a), ctx), ctx);
    if (ctx.caching()) act_ = std::move(a);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const Tensor<S> dconv = conv_.backward(act_, dropout_.backward(pool_.backward(dy)));
    return bn_.backward(elu_backward(act_, dconv));
  }

  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) override {
    detail::collect_bn(bn_, params, buffers);
    detail::collect_conv(conv_, params);
  }

  BlockKind kind() const override { return BlockKind::TD; }
  Conv2d<S>& conv() { return conv_; }
  BatchNorm<S>& bn() { return bn_; }

 private:
  BatchNorm<S> bn_;
  Conv2d<S> conv_;
  Dropout<S> dropout_;
  MaxPool2<S> pool_;
  Tensor<S> act_;
};

/// Bilinear x2 -> 3x3 conv -> BN.
template <class S>
class TransitionUp final : public Block<S> {
 public:
  TransitionUp(const std::string& name, int in, int out) : conv_(name + ".conv", in, out, 3), bn_(name + ".bn", out) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) override {
    Tensor<S> up = upsample_bilinear2(x);
    Tensor<S> y = bn_.forward(conv_.forward(up), ctx);
    if (ctx.caching()) up_ = std::move(up);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    return upsample_bilinear2_backward(conv_.backward(up_, bn_.backward(dy)));
  }

  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>& buffers) override {
    detail::collect_conv(conv_, params);
    detail::collect_bn(bn_, params, buffers);
  }

  BlockKind kind() const override { return BlockKind::TU; }
  Conv2d<S>& conv() { return conv_; }

 private:
  Conv2d<S> conv_;
  BatchNorm<S> bn_;
  Tensor<S> up_;
};

template <class S>
class InitConv final : public Block<S> {
 public:
  InitConv(const std::string& name, int in, int out) : conv_(name + ".conv", in, out, 3) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) override {
    if (ctx.caching()) x_ = x;
    return conv_.forward(x);
  }
  Tensor<S> backward(const Tensor<S>& dy) override { return conv_.backward(x_, dy); }
  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>&) override { detail::collect_conv(conv_, params); }
  BlockKind kind() const override { return BlockKind::InitConv; }

 private:
  Conv2d<S> conv_;
  Tensor<S> x_;
};

template <class S>
class SpatialUpsample final : public Block<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, const ForwardContext&) override { return upsample_bilinear2(x); }
  Tensor<S> backward(const Tensor<S>& dy) override { return upsample_bilinear2_backward(dy); }
  void collect(std::vector<Param<S>*>&, std::vector<Buffer<S>>&) override {}
  BlockKind kind() const override { return BlockKind::SBU; }
};

/// 3x3 conv to class scores followed by a per-pixel softmax. backward()
/// takes d(loss)/d(probabilities).
template <class S>
class SoftmaxHead final : public Block<S> {
 public:
  SoftmaxHead(const std::string& name, int in, int classes) : conv_(name + ".conv", in, classes, 3) {}

  Tensor<S> forward(const Tensor<S>& x, const ForwardContext& ctx) override {
    Tensor<S> p = softmax_channels(conv_.forward(x));
    if (ctx.caching()) {
      x_ = x;
      probs_ = p;
    }
    return p;
  }
  Tensor<S> backward(const Tensor<S>& dprobs) override {
    return conv_.backward(x_, softmax_channels_backward(probs_, dprobs));
  }
  void collect(std::vector<Param<S>*>& params, std::vector<Buffer<S>>&) override { detail::collect_conv(conv_, params); }
  BlockKind kind() const override { return BlockKind::Head; }

 private:
  Conv2d<S> conv_;
  Tensor<S> x_;
  Tensor<S> probs_;
};

/// Executable dense FCN. Parameters are He-initialised (normal, variance
/// 2/fan_in) with zero biases from `seed`; the same seed also starts the
/// dropout stream.
template <class S>
class Model {
 public:
  Model(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    spec.validate();
    for (const auto& pb : plan_network(spec)) add_block(pb);
    for (auto& b : blocks_) b->collect(params_, buffers_);
    std::mt19937_64 init(seed);
    for (auto* p : params_) {
      if (!p->decay) continue;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(p->fan_in)));
      for (Eigen::Index j = 0; j < p->value.size(); ++j) p->value[j] = S(dist(init));
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const NetworkSpec& spec() const { return spec_; }

  /// Returns class probabilities, NCHW with n_classes channels.
  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    check_input(x);
    ForwardContext ctx{mode, &rng_};
    trace_.clear();
    Tensor<S> h = x;
    for (auto& b : blocks_) {
      Tensor<S> next = b->forward(h, ctx);
      trace_.push_back({b->kind(), h.c, next.c, next.h, next.w});
      h = std::move(next);
    }
    return h;
  }

  /// Accumulates parameter gradients from d(loss)/d(probabilities); valid
  /// after a Train or Frozen forward. Returns d(loss)/d(input).
  Tensor<S> backward(const Tensor<S>& dprobs) {
    Tensor<S> g = dprobs;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  const std::vector<Param<S>*>& params() const { return params_; }
  const std::vector<Buffer<S>>& buffers() const { return buffers_; }
  const std::vector<BlockTrace>& trace() const { return trace_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params_) n += std::size_t(p->value.size());
    return n;
  }

  /// Output spatial size factor relative to the input.
  int output_scale() const { return spec_.final_sbu ? 2 : 1; }

  void check_input(const Tensor<S>& x) const {
    if (x.c != spec_.in_channels)
      throw Error(ErrorCode::ModelInputMismatch, "model expects " + std::to_string(spec_.in_channels) +
                                                     " input channels, got " + std::to_string(x.c));
    const int div = 1 << spec_.n_pool;
    if (x.h % div != 0 || x.w % div != 0 || x.h == 0 || x.w == 0)
      throw Error(ErrorCode::ModelInputMismatch, "input size " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                                                     " not divisible by " + std::to_string(div));
  }

 private:
  void add_block(const PlannedBlock& pb) {
    const std::string id = std::to_string(blocks_.size());
    switch (pb.kind) {
      case BlockKind::InitConv:
        blocks_.push_back(std::make_unique<InitConv<S>>("b" + id + ".init", pb.in_channels, pb.out_channels));
        break;
      case BlockKind::DenseBlock:
      case BlockKind::Bottleneck:
        blocks_.push_back(std::make_unique<DenseBlock<S>>("b" + id + ".dense", pb.kind, pb.in_channels,
                                                          spec_.growth_rate, spec_.layers_per_block,
                                                          spec_.dropout_p, pb.concat_input));
        break;
      case BlockKind::TD:
        blocks_.push_back(std::make_unique<TransitionDown<S>>("b" + id + ".td", pb.in_channels, spec_.dropout_p));
        break;
      case BlockKind::TU:
        blocks_.push_back(std::make_unique<TransitionUp<S>>("b" + id + ".tu", pb.in_channels, pb.out_channels));
        break;
      case BlockKind::SBU:
        blocks_.push_back(std::make_unique<SpatialUpsample<S>>());
        break;
      case BlockKind::Head:
        blocks_.push_back(std::make_unique<SoftmaxHead<S>>("b" + id + ".head", pb.in_channels, pb.out_channels));
        break;
    }
  }

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Block<S>>> blocks_;
  std::vector<Param<S>*> params_;
  std::vector<Buffer<S>> buffers_;
  std::vector<BlockTrace> trace_;
  std::mt19937_64 rng_;
};

/// Requires in_channels == 1 and final_sbu.
template <class S>
std::unique_ptr<Model<S>> build_liver_model(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.in_channels != 1 || !spec.final_sbu)
    throw Error(ErrorCode::InvalidSpec, "liver model needs in_channels=1 and final_sbu=true");
  return std::make_unique<Model<S>>(spec, seed);
}

/// Requires in_channels == 3 and no SBU.
template <class S>
std::unique_ptr<Model<S>> build_tumor_model(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.in_channels != 3 || spec.final_sbu)
    throw Error(ErrorCode::InvalidSpec, "tumor model needs in_channels=3 and final_sbu=false");
  return std::make_unique<Model<S>>(spec, seed);
}

}  // namespace litseg
