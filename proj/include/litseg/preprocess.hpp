#pragma once

#include "litseg/volume.hpp"

#include <array>
#include <string>
#include <vector>

namespace litseg {

enum class Target { Liver, Tumor };

const char* to_string(Target t);
/// Accepts "liver" or "tumor"; throws InvalidConfig otherwise.
Target parse_target(const std::string& s);

/// HU clamp range; construction enforces low < high.
class HuWindow {
 public:
  HuWindow(double low, double high);

  double low() const { return low_; }
  double high() const { return high_; }

  /// Clamp to the window, then map linearly onto [0, 1] using the window
  /// bounds (not the volume extrema).
  template <class Derived>
  auto apply(const Eigen::ArrayBase<Derived>& hu) const {
    using S = typename Derived::Scalar;
    return (hu.max(S(low_)).min(S(high_)) - S(low_)) / S(high_ - low_);
  }

 private:
  double low_;
  double high_;
};

inline const HuWindow kLiverWindow{-100.0, 300.0};
/// Channel order of the tumor model input.
inline const std::array<HuWindow, 3> kTumorWindows{HuWindow{0.0, 100.0}, HuWindow{-100.0, 200.0},
                                                   HuWindow{-100.0, 400.0}};

inline constexpr int kLiverSliceMargin = 10;
inline constexpr int kTumorSliceMargin = 5;

struct SlicePlan {
  std::string case_id;
  std::vector<int> indices;  // strictly increasing
  Target target = Target::Liver;
};

Volume<float> window_and_normalize(const CtVolume& vol, const HuWindow& w);

/// Factor-2 bilinear downsampling with half-pixel centres, which reduces to
/// the mean of each 2x2 block.
Image<float> downsample_slice(const Image<float>& img);

/// Three windowed copies of axial slice `z`, in kTumorWindows order.
std::array<Image<float>, 3> stack_tumor_channels(const CtVolume& vol, int z);

/// Liver-model input for slice `z`: liver window, then downsampled.
Image<float> liver_input(const CtVolume& vol, int z);

/// Slices containing the target class, from the first to the last, widened
/// by the target's margin and clipped to the volume.
SlicePlan plan_slices(const LabelVolume& labels, Target target);

}  // namespace litseg
