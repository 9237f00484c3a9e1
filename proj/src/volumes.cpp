#include "litseg/volumes.hpp"

#include "litseg/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace litseg {

void DatasetSplit::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&train, &validation, &test})
    for (const auto& id : *list)
      if (!seen.insert(id).second) throw Error(ErrorCode::InvalidConfig, "case id in more than one split: " + id);
}

namespace {

struct Ellipsoid {
  Eigen::Vector3d center;  // normalized (x, y, z) in [-1, 1]
  Eigen::Vector3d radii;

  bool contains(const Eigen::Vector3d& p) const {
    return ((p - center).array() / radii.array()).square().sum() <= 1.0;
  }
};

Eigen::Vector3d normalized(const Shape3& s, int z, int y, int x) {
  return {(x + 0.5) / s.x * 2.0 - 1.0, (y + 0.5) / s.y * 2.0 - 1.0, (z + 0.5) / s.z * 2.0 - 1.0};
}

}  // namespace

std::pair<CtVolume, LabelVolume> generate_phantom(std::uint64_t seed, Shape3 shape, int n_tumors,
                                                  const PhantomOptions& opts) {
  if (shape.z < 16 || shape.y < 16 || shape.x < 16)
    throw Error(ErrorCode::InvalidShape, "phantom dimensions must all be >= 16");
  if (n_tumors < 0) throw Error(ErrorCode::InvalidCount, "n_tumors must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  auto around = [&](double v, double spread) { return v + spread * jitter(rng); };

  const Ellipsoid liver{{around(-0.22, 0.05), around(-0.05, 0.05), around(0.0, 0.08)},
                        {around(0.42, 0.04), around(0.40, 0.04), around(0.68, 0.06)}};
  const Ellipsoid spleen{{around(0.52, 0.04), around(0.15, 0.05), around(0.05, 0.1)},
                         {around(0.14, 0.02), around(0.20, 0.03), around(0.35, 0.05)}};
  const double body_rx = 0.94, body_ry = 0.80, wall = 0.86;

  LabelVolume labels(shape, opts.spacing, kBackground);
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x)
        if (liver.contains(normalized(shape, z, y, x))) labels(z, y, x) = kLiver;

  // Tumor radii scale with the liver's in-plane radius in voxels.
  const double liver_rx_vox = liver.radii.x() * shape.x / 2.0;
  const double r_min = 0.18 * liver_rx_vox, r_max = 0.36 * liver_rx_vox;
  const double z_scale = opts.spacing.x / opts.spacing.z;
  std::uniform_real_distribution<double> radius_dist(r_min, r_max);

  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    const int n = a == 0 ? shape.x : (a == 1 ? shape.y : shape.z);
    lo[a] = std::max(0, int(std::floor((liver.center[a] - liver.radii[a] + 1.0) / 2.0 * n)));
    hi[a] = std::min(n - 1, int(std::ceil((liver.center[a] + liver.radii[a] + 1.0) / 2.0 * n)));
  }

  std::vector<std::array<int, 3>> blob;
  for (int t = 0; t < n_tumors; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const double r = radius_dist(rng);
      const double rz = std::max(1.0, r * z_scale);
      const double cx = std::uniform_real_distribution<double>(lo[0], hi[0])(rng);
      const double cy = std::uniform_real_distribution<double>(lo[1], hi[1])(rng);
      const double cz = std::uniform_real_distribution<double>(lo[2], hi[2])(rng);
      blob.clear();
      for (int z = int(std::floor(cz - rz)); z <= int(std::ceil(cz + rz)); ++z)
        for (int y = int(std::floor(cy - r)); y <= int(std::ceil(cy + r)); ++y)
          for (int x = int(std::floor(cx - r)); x <= int(std::ceil(cx + r)); ++x) {
            const double d = std::pow((x - cx) / r, 2) + std::pow((y - cy) / r, 2) + std::pow((z - cz) / rz, 2);
            if (d <= 1.0) blob.push_back({z, y, x});
          }
      if (blob.empty()) continue;
      // Every tumor voxel and its 26-neighbourhood must be plain liver, so
      // tumors stay strictly interior and never touch each other.
      bool ok = true;
      for (const auto& v : blob) {
        for (int dz = -1; dz <= 1 && ok; ++dz)
          for (int dy = -1; dy <= 1 && ok; ++dy)
            for (int dx = -1; dx <= 1 && ok; ++dx) {
              const int z = v[0] + dz, y = v[1] + dy, x = v[2] + dx;
              ok = labels.contains(z, y, x) && labels(z, y, x) == kLiver;
            }
        if (!ok) break;
      }
      if (!ok) continue;
      for (const auto& v : blob) labels(v[0], v[1], v[2]) = kTumor;
      placed = true;
    }
    if (!placed) throw Error(ErrorCode::InvalidShape, "could not place tumor inside liver; shape too small");
  }

  CtVolume ct(shape, opts.spacing, -1000.0f);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x) {
        const Eigen::Vector3d p = normalized(shape, z, y, x);
        const double noise = unit(rng);
        double hu;
        switch (labels(z, y, x)) {
          case kLiver: hu = opts.liver_hu + opts.liver_sigma * noise; break;
          case kTumor: hu = opts.tumor_hu + opts.tumor_sigma * noise; break;
          default: {
            const double body = std::sqrt(std::pow(p.x() / body_rx, 2) + std::pow(p.y() / body_ry, 2));
            if (body > 1.0) {
              hu = -1000.0 + std::abs(opts.noise_sigma * noise);
            } else if (spleen.contains(p)) {
              hu = opts.distractor_hu + opts.noise_sigma * noise;
            } else if (body > wall) {
              hu = opts.muscle_hu + opts.noise_sigma * noise;
            } else {
              hu = opts.fat_hu + 2.0 * opts.noise_sigma * noise;
            }
            hu = std::clamp(hu, -1000.0, 40.0);
          }
        }
        ct(z, y, x) = float(hu);
      }

  const std::string id = "phantom_" + std::to_string(seed);
  ct.id = id;
  labels.id = id;
  return {std::move(ct), std::move(labels)};
}

DatasetSplit make_split(const std::vector<std::string>& ids) {
  const std::size_t n = ids.size();
  std::size_t n_train = n * 90 / 130;
  std::size_t n_val = n * 26 / 130;
  if (n_train == 0 && n > 0) {
    n_train = 1;
    n_val = std::min(n_val, n - 1);
  }
  DatasetSplit split;
  split.train.assign(ids.begin(), ids.begin() + std::ptrdiff_t(n_train));
  split.validation.assign(ids.begin() + std::ptrdiff_t(n_train), ids.begin() + std::ptrdiff_t(n_train + n_val));
  split.test.assign(ids.begin() + std::ptrdiff_t(n_train + n_val), ids.end());
  return split;
}

void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write split file: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  DatasetSplit split;
  try {
    const auto j = nlohmann::json::parse(in);
    split.train = j.at("train").get<std::vector<std::string>>();
    split.validation = j.at("validation").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  split.validate();
  return split;
}

}  // namespace litseg
