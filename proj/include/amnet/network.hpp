#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "amnet/cost_volume.hpp"
#include "amnet/disparity_head.hpp"
#include "amnet/fba.hpp"
#include "amnet/feature_extractor.hpp"

namespace amnet {

/// Declarative description of one AMNet / FBA-AMNet instance.
struct NetworkConfig {
  std::string preset = "micro";
  BackboneSpec backbone = BackboneSpec::micro();
  int am_k = 4;
  Index am_channels = 16;
  int sam_k = 4;
  Index sam_width = 8;
  Index d_max = 32;
  int t = 0;
  CostVolumeParts parts;
  bool fba = false;

  /// micro, fba-micro, amnet-8, amnet-32, fba-8, fba-32.
  static NetworkConfig from_preset(const std::string& name);
  static std::vector<std::string> preset_names();
  void validate() const;
  Index feature_levels() const;
};

template <typename T>
struct NetworkOutput {
  std::vector<BasicTensor<T>> disparities;  ///< [N, H, W] per returned SAM stage
  std::optional<BasicTensor<T>> seg_probs;  ///< [N, 2, H, W] for FBA networks
  BasicTensor<T> left_features;
};

template <typename T>
class AmNet {
 public:
  AmNet(NetworkConfig config, std::uint64_t seed);

  /// left/right [N,3,H,W]; `s` [N,1,H,W] is the RGB-S extra channel and is
  /// replaced by zeros when null on an FBA network. Ignored otherwise.
  NetworkOutput<T> forward(const BasicTensor<T>& left, const BasicTensor<T>& right, const BasicTensor<T>* s,
                           HeadMode mode, bool training);

  /// Eval-mode final disparity [N, H, W] without graph recording.
  BasicTensor<T> infer(const BasicTensor<T>& left, const BasicTensor<T>& right);

  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  const NetworkConfig& config() const { return config_; }
  FeatureExtractor<T>& extractor() { return extractor_; }
  DisparityHead<T>& head() { return head_; }
  const std::vector<LayerParamCount>& layer_counts() const { return report_; }

  /// Human-readable per-layer table and kind breakdown.
  std::string parameter_report() const;

 private:
  NetworkConfig config_;
  ParameterStore<T> store_;
  std::vector<LayerParamCount> report_;
  FeatureExtractor<T> extractor_;
  DisparityHead<T> head_;
  std::optional<SegmentationHead<T>> seg_;
};

}  // namespace amnet
