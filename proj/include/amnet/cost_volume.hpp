#pragma once

#include <cstdint>
#include <vector>

#include "amnet/tensor.hpp"

namespace amnet {

enum class VolumeKind { Concat, Distance, Correlation, Ecv };

const char* to_string(VolumeKind kind);

/// Which sub-volumes enter the extended cost volume (all three by default).
struct CostVolumeParts {
  bool concat = true;
  bool distance = true;
  bool correlation = true;

  /// Depth in units of the feature channel count C.
  Index depth_factor() const { return (concat ? 2 : 0) + (distance ? 1 : 0) + (correlation ? 1 : 0); }
  bool all() const { return concat && distance && correlation; }
};

/// Matching-cost tensor laid out [N, depth, levels, H, W] where
/// levels = d_lev + 1 enumerates disparities 0..d_lev at feature resolution.
template <typename T>
struct CostVolume {
  BasicTensor<T> data;
  VolumeKind kind = VolumeKind::Ecv;
  Index d_lev = 0;

  Index depth() const { return data.dim(1); }
  Index levels() const { return data.dim(2); }
};

/// Right features moved d columns to the right with zero fill.
template <typename T>
struct ShiftedFeatures {
  BasicTensor<T> features;
  std::vector<std::uint8_t> valid_columns;  ///< 1 where column >= d
};

/// features [N,C,H,W]; rejects d < 0. d >= W yields all zeros.
template <typename T>
ShiftedFeatures<T> shift_align(const BasicTensor<T>& features, Index d);

/// Level d holds [F_l || F_r(d)] along depth: [N, 2C, d_lev+1, H, W].
template <typename T>
CostVolume<T> concat_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev);

/// Level d holds |F_l - F_r(d)|: [N, C, d_lev+1, H, W].
template <typename T>
CostVolume<T> distance_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev);

/// Channel i at level d: sum over the (2t+1)^2 patch of F_l^i(x+o) * F_r(d)^i(x+o),
/// with zeros outside the map. Not normalized.
template <typename T>
CostVolume<T> correlation_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev, int t);

/// Depth-axis concatenation [concat | distance | correlation], restricted to
/// the requested parts. Differentiable in both feature maps.
template <typename T>
CostVolume<T> build_ecv(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev, int t,
                        CostVolumeParts parts = {});

/// Highest disparity level D_lev at feature resolution for a full-resolution
/// maximum; volumes hold D_lev + 1 levels.
Index feature_levels(Index d_max, int stride);

/// One [H, W] slice of a volume for inspection.
template <typename T>
std::vector<T> volume_slice(const CostVolume<T>& volume, Index batch, Index channel, Index level);

namespace fault_injection {
/// Mutation hook for the verification suite: negates every distance entry.
void set_distance_sign_flip(bool enabled);
bool distance_sign_flip();
}  // namespace fault_injection

}  // namespace amnet
