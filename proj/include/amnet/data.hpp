#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amnet/tensor.hpp"

namespace amnet {

/// Rectified pair with left-referenced ground truth: the left pixel x matches
/// the right pixel x - gt(x). Images are planar [3, H, W] in [0, 1].
struct StereoSample {
  std::string id;
  Index width = 0;
  Index height = 0;
  std::vector<float> left;
  std::vector<float> right;
  std::vector<float> gt;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> fg;   ///< empty when unavailable
  std::vector<std::uint8_t> noc;  ///< empty when unavailable

  bool has_fg() const { return !fg.empty(); }
  bool has_gt() const { return !gt.empty(); }
};

/// Background plane at one disparity plus axis-aligned foreground rectangles
/// at strictly larger disparities, each layer carrying its own texture.
struct SynthSceneSpec {
  Index width = 128;
  Index height = 64;
  int bg_disp_min = 2;
  int bg_disp_max = 8;
  int rect_count_min = 1;
  int rect_count_max = 3;
  Index rect_w_min = 20, rect_w_max = 48;
  Index rect_h_min = 14, rect_h_max = 32;
  int rect_disp_min = 10;
  int rect_disp_max = 28;
  double noise = 0.25;  ///< texture contrast around each layer's base colour
  int d_max = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

StereoSample generate_synthetic(const SynthSceneSpec& spec, const std::string& id = "synth");

/// `count` scenes seeded from (spec.seed, index), ids prefix0000, prefix0001, ...
std::vector<StereoSample> generate_synthetic_set(const SynthSceneSpec& spec, int count, const std::string& prefix);

/// Writes left/ right/ (8-bit PNG), disp/ (PFM, +inf = invalid), fg/ and noc/
/// (8-bit PNG, 255 = set) plus manifest.txt listing the ids.
void write_dataset(const std::filesystem::path& dir, const std::vector<StereoSample>& samples);
std::vector<std::string> read_manifest(const std::filesystem::path& dir);
StereoSample read_sample(const std::filesystem::path& dir, const std::string& id);
std::vector<StereoSample> read_dataset(const std::filesystem::path& dir);

/// Loss mask: valid pixels with gt <= d_max.
std::vector<std::uint8_t> training_mask(const StereoSample& s, double d_max);

/// Window [y0, y0+h) x [x0, x0+w) of every plane.
StereoSample crop(const StereoSample& s, Index y0, Index x0, Index h, Index w);

/// Edge-replicates images (and extends masks with zeros) up to multiples of `m`.
StereoSample pad_to_multiple(const StereoSample& s, Index m);

/// Stacks the images of several same-size samples into [N,3,H,W] tensors.
template <typename T>
BasicTensor<T> stack_images(const std::vector<const StereoSample*>& batch, bool right);

}  // namespace amnet
