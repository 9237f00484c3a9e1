#pragma once

#include "litseg/config.hpp"
#include "litseg/network.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace litseg {

struct NamedArray {
  std::string name;
  Eigen::ArrayXf values;
};

struct TrainingState {
  int epoch = 0;
  double best_val_dice = -1.0;
  std::int64_t adam_step = 0;
  std::vector<Eigen::ArrayXf> adam_m, adam_v;
  std::string train_rng, val_rng, model_rng;  // std::mt19937_64 stream text
  std::uint64_t train_samples = 0, val_samples = 0;
};

/// Everything needed to rebuild a model and, optionally, resume training.
class Checkpoint {
 public:
  TrainConfig config;
  std::vector<NamedArray> params;
  std::vector<NamedArray> buffers;
  std::optional<TrainingState> training;

  static Checkpoint of(const TrainConfig& cfg, const Model<float>& model);

  /// Copies parameters and buffers into `model`; throws CheckpointMismatch
  /// when names or sizes differ.
  void apply_to(Model<float>& model) const;

  std::unique_ptr<Model<float>> build_model() const;
};

/// Writes atomically (temporary file, then rename). Throws IoError.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);

/// Throws FileNotFound, CheckpointMismatch (bad magic/version/truncation).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace litseg
