#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "videxp/tensor.hpp"

namespace videxp {

/// 8-bit interleaved image, row-major h -> w -> c.
struct Image8 {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<std::uint8_t> pixels;
};

Image8 read_image(const std::filesystem::path& path);  // .png or .pgm
void write_png(const Image8& img, const std::filesystem::path& path);
void write_pgm(const Image8& img, const std::filesystem::path& path);

/// Loads every .png/.pgm in `dir`, ordered by the integer in the file stem
/// (2.png before 10.png), and scales 8-bit values by 1/255.
VideoTensor import_frames(const std::filesystem::path& dir);

/// Quantizes frame t to 8 bits (round(v * 255), clamped).
Image8 frame_to_image(const VideoTensor& x, Index t);

/// Dark blue -> cyan -> yellow -> red ramp, v in [0,1], RGB in [0,1].
std::array<double, 3> overlay_color(double v);

/// One PNG per frame: (1 - m) * frame + m * overlay_color(m), per pixel.
/// Returns the written paths in frame order.
std::vector<std::filesystem::path> export_overlay(const VideoTensor& x, const MaskVolume& m,
                                                  const std::filesystem::path& dir);

}  // namespace videxp
