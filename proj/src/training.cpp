#include "litseg/training.hpp"

#include "litseg/checkpoint.hpp"
#include "litseg/bounded_queue.hpp"
#include "litseg/error.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

namespace litseg {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <class Rng>
std::string rng_text(const Rng& r) {
  std::ostringstream o;
  o << r;
  return o.str();
}

template <class Rng>
void rng_from_text(Rng& r, const std::string& text) {
  std::istringstream in(text);
  in >> r;
  if (!in) throw Error(ErrorCode::CheckpointMismatch, "corrupt random generator state");
}

}  // namespace

BatchSampler::BatchSampler(const std::vector<TrainingCase>& cases, const TrainConfig& cfg, std::uint64_t seed)
    : cases_(&cases), cfg_(cfg), rng_(seed) {
  for (std::size_t c = 0; c < cases.size(); ++c) {
    try {
      for (int z : plan_slices(cases[c].labels, cfg.target).indices) pairs_.push_back({int(c), z});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyTarget) throw;
    }
  }
  if (pairs_.empty())
    throw Error(ErrorCode::NoEligibleSlices, std::string("no case has eligible ") + to_string(cfg.target) + " slices");
}

SliceRef BatchSampler::draw() {
  std::uniform_int_distribution<std::size_t> pick(0, pairs_.size() - 1);
  ++drawn_;
  return pairs_[pick(rng_)];
}

std::vector<SliceRef> BatchSampler::draw(std::size_t count) {
  std::vector<SliceRef> out(count);
  for (auto& r : out) r = draw();
  return out;
}

Batch BatchSampler::assemble(std::span<const SliceRef> refs) const {
  if (refs.empty()) throw Error(ErrorCode::InvalidCount, "empty batch");
  const Shape3 shape = (*cases_)[std::size_t(refs[0].first)].ct.shape;
  const bool liver = cfg_.target == Target::Liver;
  const int n = int(refs.size());
  Batch b;
  b.input = liver ? Tensor<float>(n, 1, shape.y / 2, shape.x / 2) : Tensor<float>(n, 3, shape.y, shape.x);
  const Eigen::Index plane = Eigen::Index(shape.y) * shape.x;
  b.target.resize(n * plane);
  b.weights.resize(n * plane);
  for (int i = 0; i < n; ++i) {
    const auto& tc = (*cases_)[std::size_t(refs[std::size_t(i)].first)];
    const int z = refs[std::size_t(i)].second;
    if (!(tc.ct.shape == shape))
      throw Error(ErrorCode::ShapeMismatch, "batch mixes slice sizes (" + tc.ct.id + ")");
    Image<bool> mask;
    if (liver) {
      const Image<float> in = liver_input(tc.ct, z);
      std::copy(in.data(), in.data() + in.size(), b.input.channel(i, 0));
      mask = tc.labels.slice(z) >= kLiver;
      const auto w = liver_boundary_weights(mask, cfg_.weights.edge_band, cfg_.weights.w_edge);
      b.weights.segment(i * plane, plane) = Eigen::Map<const Column<float>>(w.data.data(), plane);
    } else {
      const auto ch = stack_tumor_channels(tc.ct, z);
      for (int c = 0; c < 3; ++c) std::copy(ch[c].data(), ch[c].data() + plane, b.input.channel(i, c));
      mask = tc.labels.slice(z) == kTumor;
      const auto w = tumor_class_weights(mask, cfg_.weights.w_tumor);
      b.weights.segment(i * plane, plane) = Eigen::Map<const Column<float>>(w.data.data(), plane);
    }
    b.target.segment(i * plane, plane) = Eigen::Map<const Eigen::Array<bool, Eigen::Dynamic, 1>>(mask.data(), plane)
                                             .cast<std::uint8_t>();
  }
  return b;
}

Adam::Adam(std::span<Param<float>* const> params, double lr) : params_(params.begin(), params.end()), lr_(lr) {
  for (const auto* p : params_) {
    state_.m.push_back(Eigen::ArrayXf::Zero(p->value.size()));
    state_.v.push_back(Eigen::ArrayXf::Zero(p->value.size()));
  }
}

void Adam::step() {
  ++state_.step;
  const double c1 = 1.0 - std::pow(kBeta1, double(state_.step));
  const double c2 = 1.0 - std::pow(kBeta2, double(state_.step));
  const float b1 = float(kBeta1), b2 = float(kBeta2);
  const float step = float(lr_ / c1), eps = float(kEpsilon), root_c2 = float(std::sqrt(c2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    const auto& g = params_[i]->grad;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.square();
    // lr * m_hat / (sqrt(v_hat) + eps)
    params_[i]->value -= step * m / (v.sqrt() / root_c2 + eps);
  }
}

Trainer::Trainer(const TrainConfig& cfg, const std::vector<TrainingCase>& train, const std::vector<TrainingCase>& val)
    : cfg_(cfg) {
  cfg_.validate();
  model_ = cfg_.target == Target::Liver ? build_liver_model<float>(cfg_.network, cfg_.seed)
                                        : build_tumor_model<float>(cfg_.network, cfg_.seed);
  adam_ = std::make_unique<Adam>(std::span<Param<float>* const>(model_->params()), cfg_.lr);
  train_sampler_ = std::make_unique<BatchSampler>(train, cfg_, mix(cfg_.seed, 1));
  if (cfg_.iters_val_per_epoch > 0 && !val.empty()) val_sampler_ = std::make_unique<BatchSampler>(val, cfg_, mix(cfg_.seed, 2));
}

Trainer::~Trainer() = default;

namespace {

// Assembles batches for pre-drawn references, on a producer thread when
// capacity > 0. Batch order is fixed by the references, not by timing.
template <class Fn>
void for_each_batch(const BatchSampler& sampler, const std::vector<SliceRef>& refs, int batch_size, int capacity,
                    Fn&& fn) {
  const std::size_t iters = refs.size() / std::size_t(batch_size);
  auto batch_refs = [&](std::size_t it) {
    return std::span<const SliceRef>(refs).subspan(it * std::size_t(batch_size), std::size_t(batch_size));
  };
  if (capacity == 0) {
    for (std::size_t it = 0; it < iters; ++it) fn(it, sampler.assemble(batch_refs(it)));
    return;
  }
  BoundedQueue<Batch> queue{static_cast<std::size_t>(capacity)};
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (std::size_t it = 0; it < iters; ++it)
        if (!queue.push(sampler.assemble(batch_refs(it)))) return;
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  struct Join {
    BoundedQueue<Batch>& q;
    std::thread& t;
    void operator()() {
      q.close();
      if (t.joinable()) t.join();
    }
    ~Join() { (*this)(); }
  } join{queue, producer};
  for (std::size_t it = 0; it < iters; ++it) {
    auto b = queue.pop();
    if (!b) break;
    fn(it, *b);
  }
  join();
  if (producer_error) std::rethrow_exception(producer_error);
}

}  // namespace

double Trainer::train_step(const Batch& b) {
  model_->zero_grad();
  const auto probs = model_->forward(b.input, Mode::Train);
  Tensor<float> dprobs;
  const std::span<Param<float>* const> params(model_->params());
  float loss;
  try {
    loss = cfg_.target == Target::Liver
               ? liver_total_loss(probs, b.target, b.weights, params, cfg_.loss_weights(), &dprobs)
               : tumor_total_loss(probs, b.target, b.weights, params, cfg_.loss_weights(), &dprobs);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonfiniteInput) throw;
    throw Error(ErrorCode::NonfiniteLoss, std::string("training diverged: ") + e.what());
  }
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonfiniteLoss, "non-finite training loss");
  model_->backward(dprobs);
  adam_->step();
  return loss;
}

EpochReport Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  EpochReport r;
  r.epoch = epoch_ + 1;
  const std::uint64_t before = train_sampler_->samples_drawn();
  const auto refs = train_sampler_->draw(std::size_t(cfg_.iters_train_per_epoch) * std::size_t(cfg_.batch_size));
  double loss_sum = 0;
  for_each_batch(*train_sampler_, refs, cfg_.batch_size, cfg_.prefetch_capacity,
                 [&](std::size_t it, const Batch& b) {
                   try {
                     loss_sum += train_step(b);
                   } catch (const Error& e) {
                     if (e.code() != ErrorCode::NonfiniteLoss) throw;
                     throw Error(ErrorCode::NonfiniteLoss, "epoch " + std::to_string(r.epoch) + " iteration " +
                                                               std::to_string(it + 1) + ": " + e.what());
                   }
                 });
  r.train_samples = train_sampler_->samples_drawn() - before;
  r.train_loss = loss_sum / cfg_.iters_train_per_epoch;

  if (val_sampler_) {
    const std::uint64_t vbefore = val_sampler_->samples_drawn();
    const auto vrefs = val_sampler_->draw(std::size_t(cfg_.iters_val_per_epoch) * std::size_t(cfg_.batch_size));
    double vloss = 0, vdice = 0;
    const std::span<Param<float>* const> params(model_->params());
    const auto lw = cfg_.loss_weights();
    for_each_batch(*val_sampler_, vrefs, cfg_.batch_size, cfg_.prefetch_capacity, [&](std::size_t, const Batch& b) {
      const auto probs = model_->forward(b.input, Mode::Infer);
      vloss += cfg_.target == Target::Liver ? liver_total_loss(probs, b.target, b.weights, params, lw)
                                            : tumor_total_loss(probs, b.target, b.weights, params, lw);
      vdice += dice_coefficient(foreground(probs), Column<float>(binary_target(b.target).cast<float>()),
                                float(cfg_.dice_epsilon));
    });
    r.val_samples = val_sampler_->samples_drawn() - vbefore;
    r.val_loss = vloss / cfg_.iters_val_per_epoch;
    r.val_dice = vdice / cfg_.iters_val_per_epoch;
    if (!std::isfinite(r.val_loss)) throw Error(ErrorCode::NonfiniteLoss, "non-finite validation loss");
  }
  ++epoch_;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Checkpoint Trainer::capture() const {
  Checkpoint ck = Checkpoint::of(cfg_, *model_);
  TrainingState t;
  t.epoch = epoch_;
  t.best_val_dice = best_val_dice_;
  t.adam_step = adam_->state().step;
  t.adam_m = adam_->state().m;
  t.adam_v = adam_->state().v;
  t.train_rng = rng_text(train_sampler_->rng());
  t.train_samples = train_sampler_->samples_drawn();
  if (val_sampler_) {
    t.val_rng = rng_text(val_sampler_->rng());
    t.val_samples = val_sampler_->samples_drawn();
  }
  t.model_rng = rng_text(model_->rng());
  ck.training = std::move(t);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (!(ck.config.network == cfg_.network) || ck.config.target != cfg_.target)
    throw Error(ErrorCode::CheckpointMismatch, "checkpoint was trained with a different network or target");
  ck.apply_to(*model_);
  if (!ck.training) return;
  const auto& t = *ck.training;
  if (t.adam_m.size() != adam_->state().m.size())
    throw Error(ErrorCode::CheckpointMismatch, "optimizer state does not match the model");
  adam_->state().step = t.adam_step;
  adam_->state().m = t.adam_m;
  adam_->state().v = t.adam_v;
  rng_from_text(train_sampler_->rng(), t.train_rng);
  train_sampler_->set_samples_drawn(t.train_samples);
  if (val_sampler_ && !t.val_rng.empty()) {
    rng_from_text(val_sampler_->rng(), t.val_rng);
    val_sampler_->set_samples_drawn(t.val_samples);
  }
  rng_from_text(model_->rng(), t.model_rng);
  epoch_ = t.epoch;
  best_val_dice_ = t.best_val_dice;
}

namespace {

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

TrainResult train_model(const TrainConfig& cfg, const std::vector<TrainingCase>& train,
                        const std::vector<TrainingCase>& val, const std::filesystem::path& out, bool resume,
                        const std::function<void(const EpochReport&)>& on_epoch) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out.string() + ": " + ec.message());
  TrainResult result{out / "best.ckpt", out / "final.ckpt", {}};
  const fs::path csv = out / "epochs.csv";

  Trainer trainer(cfg, train, val);
  if (resume && fs::exists(result.final_checkpoint)) {
    const auto ck = load_checkpoint(result.final_checkpoint);
    if (!ck.training) throw Error(ErrorCode::CheckpointMismatch, "final checkpoint has no training state");
    trainer.restore(ck);
  } else {
    std::ofstream f(csv, std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + csv.string());
    f << "epoch,train_loss,val_loss,val_dice,seconds\n";
  }

  while (trainer.epochs_done() < cfg.epochs) {
    const EpochReport r = trainer.run_epoch();
    {
      std::ofstream f(csv, std::ios::app);
      f << r.epoch << ',' << csv_number(r.train_loss) << ',' << csv_number(r.val_loss) << ','
        << csv_number(r.val_dice) << ',' << csv_number(r.seconds) << '\n';
      if (!f) throw Error(ErrorCode::IoError, "cannot append to " + csv.string());
    }
    if (std::isnan(r.val_dice) || r.val_dice > trainer.best_val_dice()) {
      if (!std::isnan(r.val_dice)) trainer.set_best_val_dice(r.val_dice);
      save_checkpoint(trainer.capture(), result.best_checkpoint);
    }
    save_checkpoint(trainer.capture(), result.final_checkpoint);
    result.epochs.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  return result;
}

}  // namespace litseg
