#include "litseg/error.hpp"
#include "litseg/volumes.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>

namespace litseg {
namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum NiftiType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kComplex64 = 32,
  kFloat64 = 64,
  kRgb24 = 128,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
  kRgba32 = 2304,
};

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

template <class T>
T get(const std::array<char, kHeaderSize>& h, int offset, bool swap) {
  T v;
  std::array<char, sizeof(T)> raw;
  std::memcpy(raw.data(), h.data() + offset, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  std::memcpy(&v, raw.data(), sizeof(T));
  return v;
}

template <class T>
void put(std::array<char, kHeaderSize>& h, int offset, T v) {
  std::memcpy(h.data() + offset, &v, sizeof(T));
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUint8:
    case kInt8: return 1;
    case kInt16:
    case kUint16: return 2;
    case kInt32:
    case kUint32:
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

double decode(const char* p, std::int16_t datatype, bool swap) {
  std::array<char, 8> raw{};
  const int n = bytes_per_voxel(datatype);
  std::memcpy(raw.data(), p, n);
  if (swap) std::reverse(raw.begin(), raw.begin() + n);
  switch (datatype) {
    case kUint8: { std::uint8_t v; std::memcpy(&v, raw.data(), 1); return v; }
    case kInt8: { std::int8_t v; std::memcpy(&v, raw.data(), 1); return v; }
    case kInt16: { std::int16_t v; std::memcpy(&v, raw.data(), 2); return v; }
    case kUint16: { std::uint16_t v; std::memcpy(&v, raw.data(), 2); return v; }
    case kInt32: { std::int32_t v; std::memcpy(&v, raw.data(), 4); return v; }
    case kUint32: { std::uint32_t v; std::memcpy(&v, raw.data(), 4); return v; }
    case kFloat32: { float v; std::memcpy(&v, raw.data(), 4); return v; }
    case kFloat64: { double v; std::memcpy(&v, raw.data(), 8); return v; }
    default: return 0.0;
  }
}

Eigen::Matrix4d quaternion_affine(const std::array<char, kHeaderSize>& h, bool swap, const std::array<double, 3>& pix,
                                  double qfac) {
  const double b = get<float>(h, 256, swap);
  const double c = get<float>(h, 260, swap);
  const double d = get<float>(h, 264, swap);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r * Eigen::Vector3d(pix[0], pix[1], qfac * pix[2]).asDiagonal();
  m(0, 3) = get<float>(h, 268, swap);
  m(1, 3) = get<float>(h, 272, swap);
  m(2, 3) = get<float>(h, 276, swap);
  return m;
}

struct RawImage {
  std::array<int, 3> dims{};  // i, j, k
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  std::vector<double> values;  // i fastest
};

RawImage read_nifti(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw Error(ErrorCode::FileNotFound, path.string());

  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw Error(ErrorCode::FileNotFound, path.string());

  std::array<char, kHeaderSize> h{};
  if (gzread(f.get(), h.data(), kHeaderSize) != kHeaderSize)
    throw Error(ErrorCode::MalformedHeader, path.string() + ": truncated header");

  bool swap = false;
  if (get<std::int32_t>(h, 0, false) != kHeaderSize) {
    if (get<std::int32_t>(h, 0, true) != kHeaderSize)
      throw Error(ErrorCode::MalformedHeader, path.string() + ": sizeof_hdr is not 348");
    swap = true;
  }
  if (std::memcmp(h.data() + 344, "n+1", 4) != 0)
    throw Error(ErrorCode::MalformedHeader, path.string() + ": not a single-file NIfTI-1 image");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(h, 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw Error(ErrorCode::MalformedHeader, path.string() + ": bad dim[0]");
  if (dim[0] < 3) throw Error(ErrorCode::NonScalarImage, path.string() + ": image has fewer than 3 dimensions");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw Error(ErrorCode::NonScalarImage, path.string() + ": 4D or vector-valued image");
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw Error(ErrorCode::MalformedHeader, path.string() + ": non-positive dimension");

  const auto intent = get<std::int16_t>(h, 68, swap);
  if (intent == 1007) throw Error(ErrorCode::NonScalarImage, path.string() + ": vector intent");
  const auto datatype = get<std::int16_t>(h, 70, swap);
  if (datatype == kRgb24 || datatype == kRgba32 || datatype == kComplex64)
    throw Error(ErrorCode::NonScalarImage, path.string() + ": multi-component datatype");
  const int bpv = bytes_per_voxel(datatype);
  if (bpv == 0) throw Error(ErrorCode::MalformedHeader, path.string() + ": unsupported datatype");

  std::array<double, 3> pix{};
  for (int i = 0; i < 3; ++i) {
    pix[i] = std::abs(get<float>(h, 80 + 4 * i, swap));
    if (!(pix[i] > 0) || !std::isfinite(pix[i])) pix[i] = 1.0;
  }
  const double qfac = get<float>(h, 76, swap) < 0 ? -1.0 : 1.0;

  RawImage img;
  img.dims = {dim[1], dim[2], dim[3]};
  const auto qform_code = get<std::int16_t>(h, 252, swap);
  const auto sform_code = get<std::int16_t>(h, 254, swap);
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) img.affine(r, c) = get<float>(h, 280 + 16 * r + 4 * c, swap);
  } else if (qform_code > 0) {
    img.affine = quaternion_affine(h, swap, pix, qfac);
  } else {
    img.affine.diagonal().head<3>() = Eigen::Vector3d(pix[0], pix[1], pix[2]);
  }
  if (!img.affine.allFinite() || std::abs(img.affine.topLeftCorner<3, 3>().determinant()) < 1e-12)
    throw Error(ErrorCode::MalformedHeader, path.string() + ": singular orientation");

  const double vox_offset = get<float>(h, 108, swap);
  if (vox_offset < kHeaderSize) throw Error(ErrorCode::MalformedHeader, path.string() + ": bad vox_offset");
  std::vector<char> skip(std::size_t(vox_offset) - kHeaderSize);
  if (!skip.empty() && gzread(f.get(), skip.data(), unsigned(skip.size())) != int(skip.size()))
    throw Error(ErrorCode::MalformedHeader, path.string() + ": truncated extension");

  const std::size_t n = std::size_t(dim[1]) * dim[2] * dim[3];
  std::vector<char> buf(n * bpv);
  std::size_t got = 0;
  while (got < buf.size()) {
    const unsigned chunk = unsigned(std::min<std::size_t>(buf.size() - got, 1u << 30));
    const int r = gzread(f.get(), buf.data() + got, chunk);
    if (r <= 0) throw Error(ErrorCode::MalformedHeader, path.string() + ": truncated voxel data");
    got += std::size_t(r);
  }

  double slope = get<float>(h, 112, swap);
  double inter = get<float>(h, 116, swap);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;
  img.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = decode(buf.data() + i * bpv, datatype, swap) * slope + inter;
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, path.string());
    img.values[i] = v;
  }
  return img;
}

/// Maps stored axes onto world axes (x, y, z) with positive direction.
template <class T>
Volume<T> reorient(const RawImage& img) {
  const Eigen::Matrix3d dir = img.affine.topLeftCorner<3, 3>();
  std::array<int, 3> world_of{-1, -1, -1};  // stored axis -> world axis
  std::array<bool, 3> taken{};
  // Greedy assignment by largest absolute direction cosine.
  for (int pass = 0; pass < 3; ++pass) {
    double best = -1;
    int bj = -1, bw = -1;
    for (int j = 0; j < 3; ++j) {
      if (world_of[j] >= 0) continue;
      const double norm = dir.col(j).norm();
      for (int w = 0; w < 3; ++w) {
        if (taken[w]) continue;
        const double c = std::abs(dir(w, j)) / norm;
        if (c > best) {
          best = c;
          bj = j;
          bw = w;
        }
      }
    }
    world_of[bj] = bw;
    taken[bw] = true;
  }

  std::array<int, 3> stored_of{};  // world axis -> stored axis
  std::array<bool, 3> flip{};
  for (int j = 0; j < 3; ++j) {
    stored_of[world_of[j]] = j;
    flip[j] = dir(world_of[j], j) < 0;
  }

  std::array<int, 3> out_dims{img.dims[stored_of[0]], img.dims[stored_of[1]], img.dims[stored_of[2]]};
  const Shape3 shape{out_dims[2], out_dims[1], out_dims[0]};
  const Spacing spacing{dir.col(stored_of[2]).norm(), dir.col(stored_of[1]).norm(), dir.col(stored_of[0]).norm()};
  Volume<T> vol(shape, spacing);

  Eigen::Matrix4d aff = Eigen::Matrix4d::Identity();
  Eigen::Vector3d origin = img.affine.block<3, 1>(0, 3);
  for (int w = 0; w < 3; ++w) {
    const int j = stored_of[w];
    if (flip[j]) {
      origin += dir.col(j) * double(img.dims[j] - 1);
      aff.block<3, 1>(0, w) = -dir.col(j);
    } else {
      aff.block<3, 1>(0, w) = dir.col(j);
    }
  }
  aff.block<3, 1>(0, 3) = origin;
  vol.affine = aff;

  std::array<int, 3> src{};
  const std::size_t si = 1, sj = std::size_t(img.dims[0]), sk = sj * std::size_t(img.dims[1]);
  const std::array<std::size_t, 3> stride{si, sj, sk};
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x) {
        const std::array<int, 3> out{x, y, z};
        std::size_t off = 0;
        for (int w = 0; w < 3; ++w) {
          const int j = stored_of[w];
          src[j] = flip[j] ? img.dims[j] - 1 - out[w] : out[w];
          off += std::size_t(src[j]) * stride[j];
        }
        vol(z, y, x) = static_cast<T>(img.values[off]);
      }
  return vol;
}

bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

template <class T>
void write_nifti(const Volume<T>& vol, const std::filesystem::path& path, std::int16_t datatype) {
  const auto parent = path.parent_path();
  std::error_code ec;
  if (!parent.empty() && !std::filesystem::is_directory(parent, ec))
    throw Error(ErrorCode::IoError, "directory does not exist: " + parent.string());

  std::array<char, kHeaderSize> h{};
  put<std::int32_t>(h, 0, kHeaderSize);
  h[38] = 'r';
  const std::array<std::int16_t, 8> dim{3, std::int16_t(vol.shape.x), std::int16_t(vol.shape.y),
                                        std::int16_t(vol.shape.z), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(h, 40 + 2 * i, dim[i]);
  put<std::int16_t>(h, 70, datatype);
  put<std::int16_t>(h, 72, std::int16_t(8 * bytes_per_voxel(datatype)));
  const std::array<float, 8> pixdim{1.0f, float(vol.spacing.x), float(vol.spacing.y), float(vol.spacing.z), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(h, 76 + 4 * i, pixdim[i]);
  put<float>(h, 108, float(kVoxOffset));
  put<float>(h, 112, 1.0f);
  put<float>(h, 116, 0.0f);
  h[123] = 2;  // mm
  put<std::int16_t>(h, 252, 0);
  put<std::int16_t>(h, 254, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) put<float>(h, 280 + 16 * r + 4 * c, float(vol.affine(r, c)));
  std::memcpy(h.data() + 344, "n+1\0", 4);

  GzHandle f(gzopen(path.string().c_str(), is_gzip_path(path) ? "wb6" : "wbT"));
  if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  const std::array<char, 4> extension{};
  bool ok = gzwrite(f.get(), h.data(), kHeaderSize) == kHeaderSize;
  ok = ok && gzwrite(f.get(), extension.data(), 4) == 4;
  const auto bytes = vol.data.size() * Eigen::Index(sizeof(T));
  ok = ok && (bytes == 0 || gzwrite(f.get(), vol.data.data(), unsigned(bytes)) == int(bytes));
  if (gzclose(f.release()) != Z_OK) ok = false;
  if (!ok) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace

CtVolume load_volume(const std::filesystem::path& path) {
  auto vol = reorient<float>(read_nifti(path));
  vol.id = case_id_from_path(path);
  return vol;
}

LabelVolume load_labels(const std::filesystem::path& path) {
  const RawImage raw = read_nifti(path);
  for (double v : raw.values)
    if (v != 0.0 && v != 1.0 && v != 2.0)
      throw Error(ErrorCode::InvalidLabel, path.string() + ": label outside {0,1,2}");
  auto vol = reorient<std::uint8_t>(raw);
  vol.id = case_id_from_path(path);
  return vol;
}

void save_labels(const LabelVolume& vol, const std::filesystem::path& path) { write_nifti(vol, path, kUint8); }

void save_volume(const CtVolume& vol, const std::filesystem::path& path) { write_nifti(vol, path, kFloat32); }

std::string case_id_from_path(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      name.resize(name.size() - e.size());
      break;
    }
  }
  for (const char* tag : {"_ct", "_label"}) {
    const std::string t(tag);
    if (name.size() > t.size() && name.compare(name.size() - t.size(), t.size(), t) == 0) {
      name.resize(name.size() - t.size());
      break;
    }
  }
  return name;
}

}  // namespace litseg
