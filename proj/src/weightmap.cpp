#include "litseg/weightmap.hpp"

#include "litseg/error.hpp"

namespace litseg {

Image<bool> mask_boundary(const Image<bool>& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  Image<bool> out = Image<bool>::Constant(h, w, false);
  auto inside = [&](Eigen::Index y, Eigen::Index x) { return y >= 0 && x >= 0 && y < h && x < w && mask(y, x); };
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = mask(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1));
  return out;
}

WeightMap liver_boundary_weights(const Image<bool>& mask, int band, float w_edge) {
  if (band < 0) throw Error(ErrorCode::InvalidConfig, "edge band must be >= 0");
  if (!(w_edge > 0.0f)) throw Error(ErrorCode::InvalidConfig, "edge weight must be positive");
  Image<bool> region = mask_boundary(mask);
  const Eigen::Index h = mask.rows(), w = mask.cols();
  // Chebyshev dilation, one 3x3 step per band pixel, done separably.
  for (int step = 0; step < band; ++step) {
    Image<bool> rows = region;
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x)
        rows(y, x) = region(y, x) || (x > 0 && region(y, x - 1)) || (x + 1 < w && region(y, x + 1));
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x)
        region(y, x) = rows(y, x) || (y > 0 && rows(y - 1, x)) || (y + 1 < h && rows(y + 1, x));
  }
  return {region.select(Image<float>::Constant(h, w, w_edge), Image<float>::Ones(h, w))};
}

WeightMap tumor_class_weights(const Image<bool>& mask, float w_tumor) {
  if (!(w_tumor > 0.0f)) throw Error(ErrorCode::InvalidConfig, "tumor weight must be positive");
  return {mask.select(Image<float>::Constant(mask.rows(), mask.cols(), w_tumor),
                      Image<float>::Ones(mask.rows(), mask.cols()))};
}

}  // namespace litseg
