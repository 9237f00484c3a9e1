#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace litseg {

/// Grid extent in canonical (z, y, x) order; z is the axial slice axis.
struct Shape3 {
  int z = 0;
  int y = 0;
  int x = 0;

  std::size_t size() const { return std::size_t(z) * std::size_t(y) * std::size_t(x); }
  std::size_t slice_size() const { return std::size_t(y) * std::size_t(x); }
  bool operator==(const Shape3&) const = default;
};

/// Physical voxel size in millimetres, (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  bool operator==(const Spacing&) const = default;
};

template <class T>
using Image = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense 3D grid stored z-major (x fastest). `affine` maps voxel indices
/// (x, y, z, 1) to scanner world coordinates and is carried through I/O so
/// predictions can be written back in the source geometry.
template <class T>
struct Volume {
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;
  using SliceMap = Eigen::Map<Image<T>>;
  using ConstSliceMap = Eigen::Map<const Image<T>>;

  Shape3 shape;
  Spacing spacing;
  std::string id;
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  Storage data;

  Volume() = default;
  Volume(Shape3 s, Spacing sp, T fill = T{}) : shape(s), spacing(sp), data(Storage::Constant(Eigen::Index(s.size()), fill)) {
    affine = default_affine(sp);
  }

  std::size_t index(int z, int y, int x) const {
    return (std::size_t(z) * std::size_t(shape.y) + std::size_t(y)) * std::size_t(shape.x) + std::size_t(x);
  }
  T& operator()(int z, int y, int x) { return data[Eigen::Index(index(z, y, x))]; }
  const T& operator()(int z, int y, int x) const { return data[Eigen::Index(index(z, y, x))]; }

  bool contains(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < shape.z && y < shape.y && x < shape.x;
  }

  SliceMap slice(int z) { return SliceMap(data.data() + std::size_t(z) * shape.slice_size(), shape.y, shape.x); }
  ConstSliceMap slice(int z) const {
    return ConstSliceMap(data.data() + std::size_t(z) * shape.slice_size(), shape.y, shape.x);
  }

  /// Same geometry, new payload type.
  template <class U>
  Volume<U> like(U fill = U{}) const {
    Volume<U> out(shape, spacing, fill);
    out.id = id;
    out.affine = affine;
    return out;
  }

  static Eigen::Matrix4d default_affine(const Spacing& sp) {
    Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
    a(0, 0) = sp.x;
    a(1, 1) = sp.y;
    a(2, 2) = sp.z;
    return a;
  }
};

using CtVolume = Volume<float>;
/// Exclusive classes: 0 background, 1 liver, 2 tumor.
using LabelVolume = Volume<std::uint8_t>;
using Mask3D = Volume<bool>;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kLiver = 1;
inline constexpr std::uint8_t kTumor = 2;

/// Liver extent is label in {1, 2}.
inline Mask3D liver_region(const LabelVolume& labels) {
  Mask3D m = labels.like<bool>();
  m.data = labels.data >= kLiver;
  return m;
}

inline Mask3D tumor_region(const LabelVolume& labels) {
  Mask3D m = labels.like<bool>();
  m.data = labels.data == kTumor;
  return m;
}

}  // namespace litseg
