#pragma once

// The CLI subcommands as library calls, so tests can drive them directly.

#include "litseg/metrics.hpp"
#include "litseg/preprocess.hpp"
#include "litseg/volumes.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace litseg {

namespace fs = std::filesystem;

struct PhantomArgs {
  fs::path out;
  int count = 13;
  std::uint64_t seed = 0;
  Shape3 shape{24, 64, 64};
  int tumors = 2;
};

struct TrainArgs {
  fs::path config;  // empty: the desk recipe for the target
  Target target = Target::Liver;
  fs::path data;
  fs::path out;
  bool resume = false;
  bool verbose = false;
};

struct PredictArgs {
  fs::path liver_checkpoint;
  fs::path tumor_checkpoint;
  std::vector<fs::path> inputs;
  fs::path out;
  bool overlay = false;
};

struct EvaluateArgs {
  fs::path pred;
  fs::path gt;
  fs::path out;
  fs::path split;  // optional: restrict ground truth to the split's test ids
};

/// Writes `<id>_ct.nii.gz`, `<id>_label.nii.gz` per phantom and `split.json`.
/// Phantom i uses seed + i. Throws InvalidCount for count < 1.
DatasetSplit cmd_phantom(const PhantomArgs& args);

/// Trains on the split's train/validation ids found in `data`.
fs::path cmd_train(const TrainArgs& args);

/// Writes `<id>_label.nii.gz` and `<id>.json` per input, plus overlays
/// under `overlay/<id>/` when requested. Returns the label paths.
std::vector<fs::path> cmd_predict(const PredictArgs& args);

/// Pairs `*_label.nii[.gz]` files by case id. Throws UnmatchedCases.
MetricsReport cmd_evaluate(const EvaluateArgs& args);

/// LITSEG_THREADS when set to a positive integer, else the hardware count.
int thread_count();

/// `*_label.nii[.gz]` files in `dir`, keyed and sorted by case id.
std::vector<std::pair<std::string, fs::path>> label_files(const fs::path& dir);

/// Locates `<dir>/<id>_ct.nii.gz` (or .nii). Throws FileNotFound.
fs::path ct_path(const fs::path& dir, const std::string& id);

}  // namespace litseg
