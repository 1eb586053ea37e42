#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "amnet/tensor.hpp"

namespace amnet {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major, top row first, channels interleaved.
struct FloatImage {
  Index width = 0;
  Index height = 0;
  Index channels = 1;
  std::vector<float> data;
};

/// PFM: "Pf" (1 channel) or "PF" (3 channels), "<w> <h>", scale (negative
/// means little-endian), then 32-bit float rows stored bottom-to-top.
FloatImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const FloatImage& image);

struct DisparityPng {
  Index width = 0;
  Index height = 0;
  std::vector<float> disparity;
  std::vector<std::uint8_t> valid;
};

/// 16-bit grayscale, stored value = round(disparity * 256), 0 = invalid.
/// Rejects negative or >= 256 disparities on valid pixels.
DisparityPng read_kitti_png(const std::filesystem::path& path);
void write_kitti_png(const std::filesystem::path& path, Index width, Index height, std::span<const float> disparity,
                     std::span<const std::uint8_t> valid);

struct Image8 {
  Index width = 0;
  Index height = 0;
  Index channels = 3;  ///< 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> data;
};

Image8 read_png8(const std::filesystem::path& path, Index channels);
void write_png8(const std::filesystem::path& path, const Image8& image);

/// Jet-style colour ramp of values over [lo, hi]; non-finite values map to black.
Image8 colorize(std::span<const float> values, Index width, Index height, float lo, float hi);

/// Min-max normalized 8-bit grayscale rendering.
Image8 to_gray8(std::span<const float> values, Index width, Index height);

}  // namespace amnet
