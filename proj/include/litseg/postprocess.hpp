#pragma once

#include "litseg/volume.hpp"

#include <cstdint>
#include <vector>

namespace litseg {

enum class StructuringElement { Cross6, Cube26 };

enum class Connectivity { Six = 6, TwentySix = 26 };

/// Voxels outside the grid count as background.
Mask3D binary_erode(const Mask3D& mask, StructuringElement element, int iterations);
Mask3D binary_dilate(const Mask3D& mask, StructuringElement element, int iterations);

/// Component ids start at 1 and follow the lexicographic (z, y, x) order of
/// each component's first voxel; 0 is background.
struct Components {
  Volume<std::int32_t> labels;
  std::vector<std::size_t> sizes;  // sizes[id - 1]
};

Components label_components(const Mask3D& mask, Connectivity connectivity);

/// Keeps the component with most voxels; ties go to the component whose
/// first voxel comes first in (z, y, x) order.
Mask3D largest_connected_component(const Mask3D& mask, Connectivity connectivity);

struct PostprocessConfig {
  StructuringElement element = StructuringElement::Cross6;
  int erode_iterations = 1;
  int dilate_iterations = 1;
  Connectivity connectivity = Connectivity::TwentySix;
};

/// Erosion, largest component, dilation, in that order.
Mask3D liver_postprocess(const Mask3D& pred, const PostprocessConfig& cfg = {});

/// Voxelwise AND.
Mask3D mask_tumor_by_liver(const Mask3D& tumor_pred, const Mask3D& liver_post);

}  // namespace litseg
