#pragma once

#include "litseg/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace litseg {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// CT slice in the liver display window as grey, liver blended red and
/// tumor blended green.
RgbImage render_overlay(const CtVolume& ct, const LabelVolume& labels, int z, double alpha = 0.45);

/// Throws IoError.
void write_png(const RgbImage& img, const std::filesystem::path& path);

/// One `<stem>_z###.png` per axial slice in `dir`. Returns the file count.
int write_overlays(const CtVolume& ct, const LabelVolume& labels, const std::filesystem::path& dir,
                   const std::string& stem);

}  // namespace litseg
