#include "litseg/postprocess.hpp"

#include "litseg/error.hpp"

#include <array>
#include <deque>

namespace litseg {
namespace {

std::vector<std::array<int, 3>> offsets(StructuringElement element) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (element == StructuringElement::Cross6 && manhattan > 1) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

std::vector<std::array<int, 3>> offsets(Connectivity c) {
  return offsets(c == Connectivity::Six ? StructuringElement::Cross6 : StructuringElement::Cube26);
}

Mask3D morph_step(const Mask3D& in, const std::vector<std::array<int, 3>>& nb, bool erode) {
  Mask3D out = in;
  const Shape3& s = in.shape;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const bool v = in(z, y, x);
        if (erode ? !v : v) continue;
        for (const auto& o : nb) {
          const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
          const bool n = in.contains(zz, yy, xx) && in(zz, yy, xx);
          if (erode && !n) {
            out(z, y, x) = false;
            break;
          }
          if (!erode && n) {
            out(z, y, x) = true;
            break;
          }
        }
      }
  return out;
}

void check_iterations(int iterations) {
  if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "morphology iterations must be >= 1");
}

}  // namespace

Mask3D binary_erode(const Mask3D& mask, StructuringElement element, int iterations) {
  check_iterations(iterations);
  const auto nb = offsets(element);
  Mask3D out = mask;
  for (int i = 0; i < iterations; ++i) out = morph_step(out, nb, true);
  return out;
}

Mask3D binary_dilate(const Mask3D& mask, StructuringElement element, int iterations) {
  check_iterations(iterations);
  const auto nb = offsets(element);
  Mask3D out = mask;
  for (int i = 0; i < iterations; ++i) out = morph_step(out, nb, false);
  return out;
}

Components label_components(const Mask3D& mask, Connectivity connectivity) {
  const auto nb = offsets(connectivity);
  Components c{mask.like<std::int32_t>(0), {}};
  const Shape3& s = mask.shape;
  std::deque<std::array<int, 3>> queue;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        if (!mask(z, y, x) || c.labels(z, y, x) != 0) continue;
        const auto id = std::int32_t(c.sizes.size() + 1);
        std::size_t size = 0;
        c.labels(z, y, x) = id;
        queue.push_back({z, y, x});
        while (!queue.empty()) {
          const auto v = queue.front();
          queue.pop_front();
          ++size;
          for (const auto& o : nb) {
            const int zz = v[0] + o[0], yy = v[1] + o[1], xx = v[2] + o[2];
            if (mask.contains(zz, yy, xx) && mask(zz, yy, xx) && c.labels(zz, yy, xx) == 0) {
              c.labels(zz, yy, xx) = id;
              queue.push_back({zz, yy, xx});
            }
          }
        }
        c.sizes.push_back(size);
      }
  return c;
}

Mask3D largest_connected_component(const Mask3D& mask, Connectivity connectivity) {
  const Components c = label_components(mask, connectivity);
  Mask3D out = mask.like<bool>(false);
  if (c.sizes.empty()) return out;
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.sizes.size(); ++i)
    if (c.sizes[i] > c.sizes[best]) best = i;
  out.data = c.labels.data == std::int32_t(best + 1);
  return out;
}

Mask3D liver_postprocess(const Mask3D& pred, const PostprocessConfig& cfg) {
  const Mask3D eroded = binary_erode(pred, cfg.element, cfg.erode_iterations);
  const Mask3D largest = largest_connected_component(eroded, cfg.connectivity);
  return binary_dilate(largest, cfg.element, cfg.dilate_iterations);
}

Mask3D mask_tumor_by_liver(const Mask3D& tumor_pred, const Mask3D& liver_post) {
  if (!(tumor_pred.shape == liver_post.shape))
    throw Error(ErrorCode::ShapeMismatch, "tumor and liver masks differ in shape");
  Mask3D out = tumor_pred;
  out.data = tumor_pred.data && liver_post.data;
  return out;
}

}  // namespace litseg
