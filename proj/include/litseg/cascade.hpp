#pragma once

#include "litseg/network.hpp"
#include "litseg/postprocess.hpp"
#include "litseg/volume.hpp"

#include <cstdint>

namespace litseg {

/// Inclusive axial range; empty when hi < lo.
struct SliceRange {
  int lo = 0;
  int hi = -1;

  bool empty() const { return hi < lo; }
  int size() const { return empty() ? 0 : hi - lo + 1; }
  bool operator==(const SliceRange&) const = default;
};

struct CascadeConfig {
  int margin = 2;
  PostprocessConfig post;
  int slices_per_forward = 4;
  bool restrict_tumor_range = true;  // false runs the tumor model on every slice
};

struct StageSeconds {
  double liver = 0;
  double postprocess = 0;
  double tumor = 0;
  double total = 0;
};

struct CascadePrediction {
  LabelVolume labels;
  Mask3D liver_raw, liver_post, tumor_raw, tumor_final;
  SliceRange tumor_range;
  StageSeconds seconds;
};

/// Liver window, half-size input, argmax of the full-size output, per slice.
Mask3D predict_liver(const CtVolume& vol, Model<float>& model, int slices_per_forward = 4);

/// Tight z-range of `liver_post` widened by `margin` and clipped.
SliceRange localize(const Mask3D& liver_post, int margin = 2);

/// Three-window stack at full size, argmax; slices outside `range` stay 0.
Mask3D predict_tumor(const CtVolume& vol, SliceRange range, Model<float>& model, int slices_per_forward = 4);

/// Liver stage, postprocess, localize, tumor stage, masking, label assembly
/// (tumor over liver). Every call is recorded by cascade_audit().
CascadePrediction predict_case(const CtVolume& vol, Model<float>& liver, Model<float>& tumor,
                               const CascadeConfig& cfg = {});

struct CascadeAudit {
  std::uint64_t predictions = 0;
  std::uint64_t tumor_outside_liver = 0;  // voxels, summed over predictions
};

/// Process-wide tally of containment checks made by predict_case.
CascadeAudit cascade_audit();

}  // namespace litseg
