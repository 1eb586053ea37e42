#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amnet/network.hpp"

namespace amnet {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct GradCheckOptions {
  std::string preset = "micro";
  Index height = 16;
  Index width = 32;
  Index batch = 2;
  int probes = 50;
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Gradients below this magnitude are compared absolutely.
  double floor = 1e-6;
  /// Evaluate the differences on the smooth piece of the base point: relu,
  /// clamp, |x| and smooth-L1 keep the branches taken by the analytic pass.
  bool hold_pattern = true;
  /// Central stencil width: 2 for (f(x+h) - f(x-h)) / 2h, 4 for the
  /// fourth-order (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h.
  int stencil = 4;
  std::uint64_t seed = 7;
};

struct GradProbe {
  std::string parameter;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  double free_numeric = 0;  ///< plain central difference, branches free to switch
};

struct GradCheckReport {
  std::vector<GradProbe> details;
  double max_rel_error = 0;
  double max_rel_error_free = 0;  ///< same probes without holding the pattern
  int probes = 0;
  std::string worst_parameter;
  double worst_analytic = 0;
  double worst_numeric = 0;
  double seconds = 0;
};

/// End-to-end analytic vs central-difference gradients of the summed
/// three-stage disparity loss, in 64-bit, on randomly drawn scalar parameters.
GradCheckReport network_gradient_check(const GradCheckOptions& opt = {});

/// Support radius (Chebyshev) of the AM trunk's response to a centred
/// impulse, with normalization off and all weights positive.
int am_impulse_radius(int k);

struct ParamCountReport {
  Index backbone = 0;     ///< D-ResNet units incl. projections, conv weights only
  Index am = 0;           ///< AM module conv weights
  Index sam = 0;          ///< stem, 3-D AM stages and projections
  Index norm = 0;         ///< batch-norm affine parameters
  Index total = 0;        ///< every trainable scalar
  Index projection = 0;   ///< projection shortcut weights (part of backbone)
  int formula_mismatches = 0;
  int layers_checked = 0;
};

/// Per-layer closed-form check and totals for a preset.
ParamCountReport count_parameters(const std::string& preset);

/// Published total for the D-ResNet-based AMNet-32.
inline constexpr double kPublishedParams = 4.37e6;

/// Suites: "gradient", "oracle", "params", "receptive-field", or "all".
std::vector<CheckResult> run_verify(const std::string& suite);

}  // namespace amnet
