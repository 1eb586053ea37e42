#pragma once

#include <span>
#include <vector>

#include "amnet/cost_volume.hpp"
#include "amnet/feature_extractor.hpp"

namespace amnet {

/// Three cascaded 3-D AM modules behind a 3x3x3 stem that maps the cost
/// volume depth to `width` channels.
struct SAMSpec {
  std::vector<AMModuleSpec> stages;
  Index width = 32;

  static SAMSpec make(int k, Index width);
  void validate() const;
};

enum class HeadMode {
  AllStages,  ///< one cost volume per stage (training supervision)
  FinalOnly,  ///< only the last stage (inference)
};

template <typename T>
class DisparityHead {
 public:
  DisparityHead(ParameterStore<T>& store, const std::string& prefix, Index in_depth, SAMSpec spec,
                std::vector<LayerParamCount>* report = nullptr);

  /// Regularized feature volume after each stage, [N, width, L, H, W].
  std::vector<BasicTensor<T>> stage_features(const CostVolume<T>& ecv, bool training);

  /// Single-channel cost volumes [N, 1, L, H, W]: three in AllStages mode,
  /// the last one in FinalOnly mode.
  std::vector<BasicTensor<T>> run_sam(const CostVolume<T>& ecv, HeadMode mode, bool training);

  const SAMSpec& spec() const { return spec_; }
  AtrousMultiscale<T>& stage(std::size_t i) { return stages_.at(i); }

 private:
  SAMSpec spec_;
  BasicTensor<T> stem_;
  BatchNormLayer<T> stem_bn_;
  std::vector<AtrousMultiscale<T>> stages_;
  std::vector<BasicTensor<T>> projections_;
};

/// Soft argmin: cost volume [N,1,L,h,w] is upsampled on the corner-aligned
/// grid to (d_max+1, height, width), negated, softmaxed over levels, and
/// reduced to the per-pixel expectation. Output [N, height, width] in [0, d_max].
template <typename T>
BasicTensor<T> regress_disparity(const BasicTensor<T>& volume, Index d_max, Index height, Index width);

/// Expectation of the level index under probabilities [N, L, H, W].
template <typename T>
BasicTensor<T> disparity_expectation(const BasicTensor<T>& probs);

template <typename T>
struct DisparityLoss {
  std::vector<BasicTensor<T>> stages;
  BasicTensor<T> total;
};

/// Unweighted sum of the per-stage masked smooth-L1 losses; exactly three
/// predictions are required.
template <typename T>
DisparityLoss<T> total_disparity_loss(const std::vector<BasicTensor<T>>& preds, std::span<const T> gt,
                                      std::span<const std::uint8_t> mask);

}  // namespace amnet
