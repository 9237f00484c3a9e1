#include "litseg/preprocess.hpp"

#include "litseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace litseg {

const char* to_string(Target t) { return t == Target::Liver ? "liver" : "tumor"; }

Target parse_target(const std::string& s) {
  if (s == "liver") return Target::Liver;
  if (s == "tumor") return Target::Tumor;
  throw Error(ErrorCode::InvalidConfig, "target must be 'liver' or 'tumor', got '" + s + "'");
}

HuWindow::HuWindow(double low, double high) : low_(low), high_(high) {
  if (!(low < high) || !std::isfinite(low) || !std::isfinite(high))
    throw Error(ErrorCode::InvalidConfig, "HU window requires low < high");
}

Volume<float> window_and_normalize(const CtVolume& vol, const HuWindow& w) {
  Volume<float> out = vol.like<float>();
  out.data = w.apply(vol.data);
  return out;
}

Image<float> downsample_slice(const Image<float>& img) {
  if (img.rows() % 2 != 0 || img.cols() % 2 != 0)
    throw Error(ErrorCode::OddDimension, "downsample_slice needs even height and width, got " +
                                             std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
  const Eigen::Index h = img.rows() / 2, w = img.cols() / 2;
  Image<float> out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = 0.25f * (img(2 * y, 2 * x) + img(2 * y, 2 * x + 1) + img(2 * y + 1, 2 * x) + img(2 * y + 1, 2 * x + 1));
  return out;
}

std::array<Image<float>, 3> stack_tumor_channels(const CtVolume& vol, int z) {
  if (z < 0 || z >= vol.shape.z)
    throw Error(ErrorCode::IndexOutOfRange, "slice " + std::to_string(z) + " outside [0," +
                                                std::to_string(vol.shape.z) + ")");
  const auto slice = vol.slice(z);
  return {Image<float>(kTumorWindows[0].apply(slice)), Image<float>(kTumorWindows[1].apply(slice)),
          Image<float>(kTumorWindows[2].apply(slice))};
}

Image<float> liver_input(const CtVolume& vol, int z) {
  if (z < 0 || z >= vol.shape.z)
    throw Error(ErrorCode::IndexOutOfRange, "slice " + std::to_string(z) + " outside [0," +
                                                std::to_string(vol.shape.z) + ")");
  return downsample_slice(Image<float>(kLiverWindow.apply(vol.slice(z))));
}

SlicePlan plan_slices(const LabelVolume& labels, Target target) {
  const std::uint8_t min_label = target == Target::Liver ? kLiver : kTumor;
  int first = -1, last = -1;
  for (int z = 0; z < labels.shape.z; ++z) {
    if ((labels.slice(z) >= min_label).any()) {
      if (first < 0) first = z;
      last = z;
    }
  }
  if (first < 0)
    throw Error(ErrorCode::EmptyTarget, labels.id + " has no " + std::string(to_string(target)) + " voxels");
  const int margin = target == Target::Liver ? kLiverSliceMargin : kTumorSliceMargin;
  SlicePlan plan;
  plan.case_id = labels.id;
  plan.target = target;
  for (int z = std::max(0, first - margin); z <= std::min(labels.shape.z - 1, last + margin); ++z)
    plan.indices.push_back(z);
  return plan;
}

}  // namespace litseg
