#include "litseg/overlay.hpp"

#include "litseg/error.hpp"
#include "litseg/preprocess.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace litseg {

RgbImage render_overlay(const CtVolume& ct, const LabelVolume& labels, int z, double alpha) {
  if (!(ct.shape == labels.shape)) throw Error(ErrorCode::ShapeMismatch, "overlay needs matching CT and labels");
  if (z < 0 || z >= ct.shape.z) throw Error(ErrorCode::IndexOutOfRange, "overlay slice out of range");
  RgbImage img{ct.shape.x, ct.shape.y, {}};
  img.pixels.resize(std::size_t(img.width) * std::size_t(img.height) * 3);
  const Image<float> grey = kLiverWindow.apply(ct.slice(z)) * 255.0f;
  const auto lab = labels.slice(z);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = grey(y, x);
      double rgb[3] = {g, g, g};
      if (lab(y, x) != kBackground) {
        const double tint[3] = {lab(y, x) == kTumor ? 0.0 : 255.0, lab(y, x) == kTumor ? 255.0 : 0.0, 0.0};
        for (int c = 0; c < 3; ++c) rgb[c] = (1 - alpha) * rgb[c] + alpha * tint[c];
      }
      auto* px = &img.pixels[(std::size_t(y) * std::size_t(img.width) + std::size_t(x)) * 3];
      for (int c = 0; c < 3; ++c) px[c] = std::uint8_t(std::lround(std::clamp(rgb[c], 0.0, 255.0)));
    }
  return img;
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, &img.pixels[std::size_t(y) * std::size_t(img.width) * 3]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

int write_overlays(const CtVolume& ct, const LabelVolume& labels, const std::filesystem::path& dir,
                   const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
  for (int z = 0; z < ct.shape.z; ++z) {
    char name[32];
    std::snprintf(name, sizeof name, "_z%03d.png", z);
    write_png(render_overlay(ct, labels, z), dir / (stem + name));
  }
  return ct.shape.z;
}

}  // namespace litseg
