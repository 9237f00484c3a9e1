#pragma once

#include "litseg/config.hpp"
#include "litseg/losses.hpp"
#include "litseg/network.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace litseg {

struct TrainingCase {
  CtVolume ct;
  LabelVolume labels;
};

/// Model inputs, binarized targets and loss weights for one batch.
struct Batch {
  Tensor<float> input;
  ClassMap target;
  Column<float> weights;
};

/// (case index, slice index)
using SliceRef = std::pair<int, int>;

/// Draws (case, slice) pairs uniformly over every eligible slice of every
/// case. Eligibility follows plan_slices; cases without the target class
/// contribute nothing.
class BatchSampler {
 public:
  BatchSampler(const std::vector<TrainingCase>& cases, const TrainConfig& cfg, std::uint64_t seed);

  SliceRef draw();
  std::vector<SliceRef> draw(std::size_t count);

  /// Pure function of the references; safe to call from another thread.
  Batch assemble(std::span<const SliceRef> refs) const;
  Batch sample_batch(int batch_size) { return assemble(draw(std::size_t(batch_size))); }

  std::size_t eligible_count() const { return pairs_.size(); }
  std::uint64_t samples_drawn() const { return drawn_; }
  std::mt19937_64& rng() { return rng_; }
  void set_samples_drawn(std::uint64_t n) { drawn_ = n; }

 private:
  const std::vector<TrainingCase>* cases_;
  TrainConfig cfg_;
  std::vector<SliceRef> pairs_;
  std::mt19937_64 rng_;
  std::uint64_t drawn_ = 0;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Eigen::ArrayXf> m, v;
};

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Adam(std::span<Param<float>* const> params, double lr);

  void step();
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  std::vector<Param<float>*> params_;
  double lr_;
  AdamState state_;
};

struct EpochReport {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // no validation iterations
  double val_dice = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0;
  std::uint64_t train_samples = 0;
  std::uint64_t val_samples = 0;
};

class Checkpoint;

/// Owns the model, optimizer and samplers of one training run. The case
/// vectors must outlive it. An empty validation set skips validation.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<TrainingCase>& train, const std::vector<TrainingCase>& val);
  ~Trainer();

  /// iters_train_per_epoch Adam steps (batch statistics, dropout), then
  /// iters_val_per_epoch forward-only steps with running statistics.
  /// Throws NonfiniteLoss.
  EpochReport run_epoch();

  Model<float>& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return *adam_; }
  BatchSampler& train_sampler() { return *train_sampler_; }
  int epochs_done() const { return epoch_; }
  double best_val_dice() const { return best_val_dice_; }
  void set_best_val_dice(double d) { best_val_dice_ = d; }

  Checkpoint capture() const;
  /// Restores parameters, buffers, optimizer and sampler state.
  void restore(const Checkpoint& ck);

 private:
  std::vector<Batch> prefetch_all(BatchSampler& sampler, int iterations, const std::atomic<bool>& cancel);
  double train_step(const Batch& b);

  TrainConfig cfg_;
  std::unique_ptr<Model<float>> model_;
  std::unique_ptr<Adam> adam_;
  std::unique_ptr<BatchSampler> train_sampler_;
  std::unique_ptr<BatchSampler> val_sampler_;
  int epoch_ = 0;
  double best_val_dice_ = -1.0;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::vector<EpochReport> epochs;
};

/// Runs cfg.epochs epochs, writing `<out>/epochs.csv`, `<out>/best.ckpt`
/// (highest validation soft dice; latest epoch when there is no validation)
/// and `<out>/final.ckpt` after every epoch. With `resume`, continues from
/// `<out>/final.ckpt` when it exists.
TrainResult train_model(const TrainConfig& cfg, const std::vector<TrainingCase>& train,
                        const std::vector<TrainingCase>& val, const std::filesystem::path& out, bool resume = false,
                        const std::function<void(const EpochReport&)>& on_epoch = {});

}  // namespace litseg
