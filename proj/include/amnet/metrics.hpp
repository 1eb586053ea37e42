#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amnet/tensor.hpp"

namespace amnet {

/// Every metric averages over pixels with mask != 0 and throws
/// std::invalid_argument when the mask selects nothing.
double epe(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask);

/// Percentage of pixels with |err| >= 3 and |err| >= 0.05 * gt.
double d1_all(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask);

/// Percentage of pixels with |err| >= threshold.
double bad_pixel(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask,
                 double threshold = 3.0);

/// 99th-percentile absolute error, nearest-rank: the ceil(0.99 * n)-th smallest.
double a99(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask);

double rms(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask);

struct MetricSet {
  double epe = 0;
  double d1_all = 0;
  double bad3 = 0;
  double a99 = 0;
  double rms = 0;
  std::int64_t pixels = 0;
};

/// All five metrics over one mask; zero pixels yields all zeros.
MetricSet compute_metrics(std::span<const float> est, std::span<const float> gt, std::span<const std::uint8_t> mask);

struct ImageReport {
  std::string id;
  MetricSet all;
  MetricSet fg;  ///< empty when no foreground mask was supplied
  MetricSet bg;
  MetricSet noc;  ///< empty when no non-occlusion mask was supplied
};

struct EvalReport {
  std::vector<ImageReport> images;
  MetricSet all, fg, bg, noc;
  bool has_fg = false;
  bool has_noc = false;

  /// Adds one image. fg and noc may be empty.
  void add(const std::string& id, std::span<const float> est, std::span<const float> gt,
           std::span<const std::uint8_t> valid, std::span<const std::uint8_t> fg = {},
           std::span<const std::uint8_t> noc = {});
  /// Recomputes the aggregates as valid-pixel-weighted means over images.
  /// A99 aggregates as the pixel-weighted mean of per-image values.
  void finalize();

  std::string to_text() const;
  std::string to_json() const;
};

}  // namespace amnet
