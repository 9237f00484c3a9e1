#pragma once

#include "litseg/losses.hpp"
#include "litseg/network.hpp"
#include "litseg/preprocess.hpp"
#include "litseg/weightmap.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace litseg {

struct TrainConfig {
  Target target = Target::Liver;
  bool desk_scale = false;
  int batch_size = 4;
  int epochs = 80;
  double lr = 1e-4;
  double l2 = 1e-6;
  int iters_train_per_epoch = 1000;
  int iters_val_per_epoch = 250;
  std::uint64_t seed = 0;
  int prefetch_capacity = 2;  // 0 assembles batches on the training thread
  double lambda = 0.5;
  double gamma = 0.5;
  double dice_epsilon = 1e-5;
  WeightMapConfig weights;
  NetworkSpec network = default_liver_spec();

  /// Throws InvalidConfig.
  void validate() const;
  LossWeights loss_weights() const { return {lambda, gamma, l2, dice_epsilon}; }
  bool operator==(const TrainConfig&) const = default;
};

/// Full-scale recipe: batch 4, 80 epochs of 1000/250 iterations, default net.
TrainConfig default_train_config(Target target);

/// Phantom-sized recipe: tiny net, 50/10 iterations per epoch.
TrainConfig desk_train_config(Target target);

/// Flat `key = value` text, `#` starts a comment. `target` and `desk_scale`
/// pick the base recipe, every other key overrides it. Unknown keys,
/// duplicates and malformed values throw InvalidConfig naming the line.
TrainConfig parse_train_config(const std::string& text, const std::string& source = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);

/// Round-trips through parse_train_config.
std::string to_config_text(const TrainConfig& cfg);

}  // namespace litseg
