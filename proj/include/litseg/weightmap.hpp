#pragma once

#include "litseg/volume.hpp"

namespace litseg {

/// Per-pixel loss weights aligned with a label slice; entries > 0.
struct WeightMap {
  Image<float> data;
};

struct WeightMapConfig {
  int edge_band = 3;
  float w_edge = 5.0f;
  float w_tumor = 10.0f;

  bool operator==(const WeightMapConfig&) const = default;
};

/// Mask pixels with a 4-neighbour outside the mask; pixels beyond the image
/// border count as outside.
Image<bool> mask_boundary(const Image<bool>& mask);

/// w_edge on pixels within Chebyshev distance `band` of the mask boundary,
/// 1 elsewhere.
WeightMap liver_boundary_weights(const Image<bool>& mask, int band, float w_edge);

/// w_tumor on tumor pixels, 1 elsewhere.
WeightMap tumor_class_weights(const Image<bool>& mask, float w_tumor);

}  // namespace litseg
