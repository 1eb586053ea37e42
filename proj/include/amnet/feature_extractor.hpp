#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "amnet/nn.hpp"

namespace amnet {

enum class LayerType {
  SepConv,    ///< depthwise 3x3 + pointwise 1x1, then BN + ReLU
  Conv,       ///< standard 3x3, then BN + ReLU
  DResBlock,  ///< two separable layers with a projection shortcut when needed
  ResBlock,   ///< two standard 3x3 layers with a projection shortcut when needed
};

const char* to_string(LayerType type);

struct BackboneLayer {
  LayerType type = LayerType::SepConv;
  Index d_out = 0;
  int stride = 1;
  int dilation = 1;
  int repeat = 1;
};

struct BackboneSpec {
  std::string preset;
  std::vector<BackboneLayer> layers;

  /// The D-ResNet of the reference design: 3 separable stem layers then
  /// residual groups of {3, 1, 18, 3} blocks.
  static BackboneSpec paper();
  static BackboneSpec micro();
  /// 4 groups of {3, 16, 3, 3} standard residual blocks, widths {32, 64, 128, 128}.
  static BackboneSpec resnet();
  /// Same layout as resnet() with every 3x3 replaced by a separable layer.
  static BackboneSpec resnet_separable();
  static BackboneSpec from_name(const std::string& name);

  void validate() const;
  int cumulative_stride() const;
  Index out_channels() const;
  Index block_count() const;
};

enum class Dimensionality { Two, Three };

/// Dilations [1,2,2,4,4,...,k/2,k/2,k] for a power of two k >= 2.
std::vector<int> am_schedule(int k);

struct AMModuleSpec {
  int k = 8;
  std::vector<int> schedule;  ///< dilated trunk; two 1x1 refinement convs follow
  Index out_channels = 32;
  Dimensionality dims = Dimensionality::Two;
  bool use_norm = true;

  static AMModuleSpec make(int k, Index out_channels, Dimensionality dims);
  void validate() const;
  /// Receptive-field radius of the trunk: sum of dilations.
  int support_radius() const;
};

/// Trainable-scalar count of one convolution layer, for the breakdown report.
struct LayerParamCount {
  std::string name;
  std::string kind;  ///< "separable", "standard", "projection", "pointwise", "conv3d"
  Index d_in = 0;
  Index d_out = 0;
  Index count = 0;
};

/// Closed forms: 9*Din*Dout for a standard 3x3, Din*(9+Dout) for a separable pair.
constexpr Index standard_conv_params(Index d_in, Index d_out) { return 9 * d_in * d_out; }
constexpr Index separable_conv_params(Index d_in, Index d_out) { return d_in * (9 + d_out); }

template <typename T>
class SeparableConv {
 public:
  SeparableConv() = default;
  SeparableConv(ParameterStore<T>& store, const std::string& prefix, Index d_in, Index d_out, int stride,
                int dilation);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;

  BasicTensor<T> depthwise, pointwise;
  ConvOptions opt;
};

/// One AM module: dilated 3x3 (or 3x3x3) convs with BN + ReLU, then a 1x1
/// conv with BN + ReLU and a final 1x1 conv with BN only. Resolution is
/// preserved everywhere.
template <typename T>
class AtrousMultiscale {
 public:
  AtrousMultiscale() = default;
  AtrousMultiscale(ParameterStore<T>& store, const std::string& prefix, Index d_in, const AMModuleSpec& spec,
                   std::vector<LayerParamCount>* report = nullptr);
  BasicTensor<T> operator()(const BasicTensor<T>& x, bool training);

  const AMModuleSpec& spec() const { return spec_; }
  /// Weights of the dilated trunk followed by the two refinement convs.
  const std::vector<BasicTensor<T>>& weights() const { return weights_; }

 private:
  AMModuleSpec spec_;
  std::vector<BasicTensor<T>> weights_;
  std::vector<BatchNormLayer<T>> norms_;
};

template <typename T>
class FeatureExtractor {
 public:
  /// `with_s_channel` adds the extra segmentation input of the multitask
  /// variant as its own branch on the first layer.
  FeatureExtractor(ParameterStore<T>& store, const std::string& prefix, BackboneSpec backbone, AMModuleSpec am,
                   Index image_channels = 3, bool with_s_channel = false);

  /// image [N,3,H,W], optional s [N,1,H,W] -> features [N,C,H/4,W/4].
  BasicTensor<T> operator()(const BasicTensor<T>& image, const BasicTensor<T>* s_channel, bool training);

  /// Runs the shared weights on both views independently.
  std::pair<BasicTensor<T>, BasicTensor<T>> extract(const BasicTensor<T>& left, const BasicTensor<T>& right,
                                                    const BasicTensor<T>* s_channel, bool training);

  const BackboneSpec& backbone_spec() const { return backbone_; }
  const AMModuleSpec& am_spec() const { return am_.spec(); }
  const std::vector<LayerParamCount>& layer_counts() const { return report_; }
  int stride() const { return backbone_.cumulative_stride(); }
  Index out_channels() const { return am_.spec().out_channels; }
  bool has_s_channel() const { return with_s_; }

  BasicTensor<T> backbone_forward(const BasicTensor<T>& image, const BasicTensor<T>* s_channel, bool training);

 private:
  struct Unit {
    LayerType type;
    SeparableConv<T> sep1, sep2;
    BasicTensor<T> conv1, conv2;  // standard convs
    ConvOptions opt1, opt2;
    BatchNormLayer<T> bn1, bn2;
    std::optional<BasicTensor<T>> projection;
    ConvOptions proj_opt;
    std::optional<BatchNormLayer<T>> proj_bn;
  };

  BasicTensor<T> first_conv(const Unit& u, const BasicTensor<T>& x) const;

  BackboneSpec backbone_;
  Index image_channels_;
  bool with_s_;
  std::vector<Unit> units_;
  bool s_separable_ = false;
  SeparableConv<T> s_sep_;
  BasicTensor<T> s_conv_;
  AtrousMultiscale<T> am_;
  std::vector<LayerParamCount> report_;
};

}  // namespace amnet
