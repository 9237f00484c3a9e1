#pragma once

#include "litseg/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace litseg {

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// Throws InvalidConfig if any id appears in more than one list.
  void validate() const;
};

/// Reads a 3D scalar NIfTI-1 image (.nii or .nii.gz), reoriented so that
/// array axes run (z, y, x) with positive world direction along each axis.
CtVolume load_volume(const std::filesystem::path& path);

/// As load_volume, but values must be integers in {0, 1, 2}.
LabelVolume load_labels(const std::filesystem::path& path);

/// Labels are written as uint8.
void save_labels(const LabelVolume& vol, const std::filesystem::path& path);

/// HU volumes are written as float32 so phantoms round-trip exactly.
void save_volume(const CtVolume& vol, const std::filesystem::path& path);

/// Strips .nii / .nii.gz and a trailing _ct / _label tag.
std::string case_id_from_path(const std::filesystem::path& path);

struct PhantomOptions {
  double liver_hu = 60.0;
  double liver_sigma = 6.0;
  double tumor_hu = 30.0;
  double tumor_sigma = 5.0;
  double fat_hu = -90.0;
  double muscle_hu = 35.0;
  double distractor_hu = 40.0;
  double noise_sigma = 5.0;
  Spacing spacing{2.5, 1.5, 1.5};
};

/// Synthetic abdomen: air outside an elliptic body of fat and muscle, an
/// ellipsoidal liver, a small spleen-like distractor, and spherical tumors
/// placed strictly inside the liver. Deterministic in `seed`.
std::pair<CtVolume, LabelVolume> generate_phantom(std::uint64_t seed, Shape3 shape, int n_tumors,
                                                  const PhantomOptions& opts = {});

/// Counts scaled from 90:26:14: train = floor(n*90/130), validation =
/// floor(n*26/130), test takes the rest; train is kept non-empty.
DatasetSplit make_split(const std::vector<std::string>& ids);

void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace litseg
