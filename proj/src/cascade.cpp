#include "litseg/cascade.hpp"

#include "litseg/error.hpp"
#include "litseg/losses.hpp"
#include "litseg/preprocess.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>

namespace litseg {

namespace {

std::atomic<std::uint64_t> g_predictions{0};
std::atomic<std::uint64_t> g_violations{0};

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `model` over slices [lo, hi] in groups, writing argmax into `out`.
template <class Fill>
void run_slices(Model<float>& model, int lo, int hi, int group, int channels, int h, int w, Fill&& fill,
                Mask3D& out) {
  const int scale = model.output_scale();
  for (int z0 = lo; z0 <= hi; z0 += group) {
    const int n = std::min(group, hi - z0 + 1);
    Tensor<float> x(n, channels, h, w);
    for (int i = 0; i < n; ++i) fill(z0 + i, x, i);
    const auto probs = model.forward(x, Mode::Infer);
    if (probs.h != h * scale || probs.w != w * scale || probs.h != out.shape.y || probs.w != out.shape.x)
      throw Error(ErrorCode::ModelInputMismatch, "model output " + probs.shape_string() + " does not match the volume");
    for (int i = 0; i < n; ++i) {
      const Eigen::Map<const Column<float>> bg(probs.channel(i, 0), probs.plane());
      const Eigen::Map<const Column<float>> fg(probs.channel(i, 1), probs.plane());
      auto dst = out.slice(z0 + i);
      Eigen::Map<Eigen::Array<bool, Eigen::Dynamic, 1>>(dst.data(), probs.plane()) = fg > bg;
    }
  }
}

}  // namespace

Mask3D predict_liver(const CtVolume& vol, Model<float>& model, int slices_per_forward) {
  const auto& spec = model.spec();
  if (spec.in_channels != 1 || !spec.final_sbu)
    throw Error(ErrorCode::ModelInputMismatch, "not a liver model (needs 1 input channel and the final upsampler)");
  if (vol.shape.y % 2 || vol.shape.x % 2)
    throw Error(ErrorCode::ModelInputMismatch, "liver stage needs even slice dimensions");
  Mask3D out = vol.like<bool>(false);
  run_slices(
      model, 0, vol.shape.z - 1, std::max(1, slices_per_forward), 1, vol.shape.y / 2, vol.shape.x / 2,
      [&](int z, Tensor<float>& x, int i) {
        const Image<float> in = liver_input(vol, z);
        std::copy(in.data(), in.data() + in.size(), x.channel(i, 0));
      },
      out);
  return out;
}

SliceRange localize(const Mask3D& liver_post, int margin) {
  SliceRange r;
  for (int z = 0; z < liver_post.shape.z; ++z) {
    if (!liver_post.slice(z).any()) continue;
    if (r.empty()) r.lo = z;
    r.hi = z;
  }
  if (r.empty()) return {};
  r.lo = std::max(0, r.lo - margin);
  r.hi = std::min(liver_post.shape.z - 1, r.hi + margin);
  return r;
}

Mask3D predict_tumor(const CtVolume& vol, SliceRange range, Model<float>& model, int slices_per_forward) {
  const auto& spec = model.spec();
  if (spec.in_channels != 3 || spec.final_sbu)
    throw Error(ErrorCode::ModelInputMismatch, "not a tumor model (needs 3 input channels, no upsampler)");
  Mask3D out = vol.like<bool>(false);
  if (range.empty()) return out;
  range.lo = std::max(range.lo, 0);
  range.hi = std::min(range.hi, vol.shape.z - 1);
  run_slices(
      model, range.lo, range.hi, std::max(1, slices_per_forward), 3, vol.shape.y, vol.shape.x,
      [&](int z, Tensor<float>& x, int i) {
        const auto ch = stack_tumor_channels(vol, z);
        for (int c = 0; c < 3; ++c) std::copy(ch[c].data(), ch[c].data() + ch[c].size(), x.channel(i, c));
      },
      out);
  return out;
}

CascadePrediction predict_case(const CtVolume& vol, Model<float>& liver, Model<float>& tumor,
                               const CascadeConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  CascadePrediction p;
  auto t = std::chrono::steady_clock::now();
  p.liver_raw = predict_liver(vol, liver, cfg.slices_per_forward);
  p.seconds.liver = since(t);

  t = std::chrono::steady_clock::now();
  p.liver_post = liver_postprocess(p.liver_raw, cfg.post);
  p.seconds.postprocess = since(t);

  t = std::chrono::steady_clock::now();
  p.tumor_range = cfg.restrict_tumor_range ? localize(p.liver_post, cfg.margin) : SliceRange{0, vol.shape.z - 1};
  p.tumor_raw = predict_tumor(vol, p.tumor_range, tumor, cfg.slices_per_forward);
  p.tumor_final = mask_tumor_by_liver(p.tumor_raw, p.liver_post);
  p.seconds.tumor = since(t);

  p.labels = vol.like<std::uint8_t>(kBackground);
  for (Eigen::Index i = 0; i < p.labels.data.size(); ++i)
    p.labels.data[i] = p.tumor_final.data[i] ? kTumor : (p.liver_post.data[i] ? kLiver : kBackground);

  const auto outside = std::uint64_t((p.tumor_final.data && !p.liver_post.data).count());
  ++g_predictions;
  g_violations += outside;
  if (outside) throw Error(ErrorCode::ShapeMismatch, "tumor prediction escaped the liver mask");
  p.seconds.total = since(start);
  return p;
}

CascadeAudit cascade_audit() { return {g_predictions.load(), g_violations.load()}; }

}  // namespace litseg
