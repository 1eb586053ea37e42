#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amnet/nn.hpp"

namespace amnet {

/// Foreground/background classifier on the shared left features: a 1x1
/// two-class conv with bias, bilinear upsampling to image size, then softmax
/// over the class axis. Output [N, 2, H, W], channel 1 = foreground.
template <typename T>
class SegmentationHead {
 public:
  SegmentationHead(ParameterStore<T>& store, const std::string& prefix, Index in_channels);
  BasicTensor<T> operator()(const BasicTensor<T>& features, Index height, Index width) const;

 private:
  BasicTensor<T> weight_, bias_;
};

/// Per-pixel argmax of [N,2,H,W] probabilities: 1 = foreground.
template <typename T>
std::vector<std::uint8_t> hard_mask(const BasicTensor<T>& probs);

/// Foreground probabilities (class 1) of one batch item, row-major [H, W].
template <typename T>
std::vector<float> foreground_probability(const BasicTensor<T>& probs, Index batch_index);

template <typename T>
struct MultitaskLossParts {
  BasicTensor<T> l_disp;
  BasicTensor<T> l_seg;
  double lambda = 0.5;
  BasicTensor<T> total;
};

/// total = l_disp + lambda * l_seg with l_seg the mean per-pixel two-class
/// cross-entropy. Rejects lambda < 0.
template <typename T>
MultitaskLossParts<T> multitask_loss(const BasicTensor<T>& l_disp, const BasicTensor<T>& seg_probs,
                                     std::span<const std::uint8_t> seg_gt, double lambda);

/// Intersection over union of the foreground class; 1 when both masks are empty.
double foreground_iou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

/// Segmentation maps fed back as the fourth input channel, keyed by sample id.
/// Missing ids read as zero maps. Persisted as one 32-bit float PFM per id.
class SChannelStore {
 public:
  SChannelStore() = default;
  explicit SChannelStore(std::filesystem::path directory);

  /// Stored map or zeros of the requested size.
  std::vector<float> get(const std::string& id, Index height, Index width) const;
  bool contains(const std::string& id) const { return maps_.contains(id); }
  void put(const std::string& id, Index height, Index width, std::vector<float> values);
  std::size_t size() const { return maps_.size(); }
  void clear() { maps_.clear(); }

  /// Writes every map to <directory>/<id>.pfm.
  void save() const;
  /// Reads every .pfm in the directory, replacing the in-memory contents.
  void load();
  const std::filesystem::path& directory() const { return dir_; }

 private:
  struct Map {
    Index height = 0, width = 0;
    std::vector<float> values;
  };
  std::filesystem::path dir_;
  std::map<std::string, Map> maps_;
};

}  // namespace amnet
