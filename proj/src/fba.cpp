#include "amnet/fba.hpp"

#include <stdexcept>

#include "amnet/image_io.hpp"
#include "amnet/ops.hpp"

namespace amnet {

template <typename T>
SegmentationHead<T>::SegmentationHead(ParameterStore<T>& store, const std::string& prefix, Index in_channels) {
  weight_ = store.create(prefix + ".weight", {2, in_channels, 1, 1}, ParamKind::Head, Init::FanInUniform);
  bias_ = store.create(prefix + ".bias", {2}, ParamKind::Head, Init::Zeros);
}

template <typename T>
BasicTensor<T> SegmentationHead<T>::operator()(const BasicTensor<T>& features, Index height, Index width) const {
  if (features.ndim() != 4) throw ShapeError("segmentation head expects [N,C,h,w], got " + to_string(features.shape()));
  auto logits = add_channel_bias(pointwise_conv2d(features, weight_), bias_);
  return softmax(upsample_bilinear(logits, height, width), 1);
}

template <typename T>
std::vector<std::uint8_t> hard_mask(const BasicTensor<T>& probs) {
  if (probs.ndim() != 4 || probs.dim(1) != 2) throw ShapeError("hard_mask expects [N,2,H,W], got " + to_string(probs.shape()));
  const Index N = probs.dim(0), HW = probs.dim(2) * probs.dim(3);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(N * HW));
  const auto p = probs.data();
  for (Index n = 0; n < N; ++n) {
    for (Index i = 0; i < HW; ++i) {
      out[static_cast<std::size_t>(n * HW + i)] = p[static_cast<std::size_t>((n * 2 + 1) * HW + i)] >
                                                  p[static_cast<std::size_t>(n * 2 * HW + i)];
    }
  }
  return out;
}

template <typename T>
std::vector<float> foreground_probability(const BasicTensor<T>& probs, Index batch_index) {
  if (probs.ndim() != 4 || probs.dim(1) != 2) {
    throw ShapeError("foreground_probability expects [N,2,H,W], got " + to_string(probs.shape()));
  }
  if (batch_index < 0 || batch_index >= probs.dim(0)) throw ShapeError("batch index out of range");
  const Index HW = probs.dim(2) * probs.dim(3);
  const auto p = probs.data().subspan(static_cast<std::size_t>((batch_index * 2 + 1) * HW), static_cast<std::size_t>(HW));
  return std::vector<float>(p.begin(), p.end());
}

template <typename T>
MultitaskLossParts<T> multitask_loss(const BasicTensor<T>& l_disp, const BasicTensor<T>& seg_probs,
                                     std::span<const std::uint8_t> seg_gt, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("multitask_loss: lambda must be >= 0, got " + std::to_string(lambda));
  MultitaskLossParts<T> out;
  out.l_disp = l_disp;
  out.l_seg = cross_entropy(seg_probs, seg_gt);
  out.lambda = lambda;
  out.total = lambda == 0 ? l_disp : add(l_disp, scale(out.l_seg, static_cast<T>(lambda)));
  return out;
}

double foreground_iou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("foreground_iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool a = predicted[i] != 0, b = truth[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SChannelStore::SChannelStore(std::filesystem::path directory) : dir_(std::move(directory)) {}

std::vector<float> SChannelStore::get(const std::string& id, Index height, Index width) const {
  const auto it = maps_.find(id);
  if (it == maps_.end()) return std::vector<float>(static_cast<std::size_t>(height * width), 0.0f);
  if (it->second.height != height || it->second.width != width) {
    throw ShapeError("S-channel map for '" + id + "' is " + std::to_string(it->second.height) + "x" +
                     std::to_string(it->second.width) + ", requested " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  return it->second.values;
}

void SChannelStore::put(const std::string& id, Index height, Index width, std::vector<float> values) {
  if (static_cast<Index>(values.size()) != height * width) throw ShapeError("S-channel map size mismatch for '" + id + "'");
  maps_[id] = Map{height, width, std::move(values)};
}

void SChannelStore::save() const {
  if (dir_.empty()) throw IoError("S-channel store has no directory");
  std::filesystem::create_directories(dir_);
  for (const auto& [id, m] : maps_) write_pfm(dir_ / (id + ".pfm"), FloatImage{m.width, m.height, 1, m.values});
}

void SChannelStore::load() {
  if (dir_.empty()) throw IoError("S-channel store has no directory");
  maps_.clear();
  if (!std::filesystem::exists(dir_)) return;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".pfm") continue;
    auto img = read_pfm(entry.path());
    if (img.channels != 1) throw IoError("S-channel map must be single channel: " + entry.path().string());
    maps_[entry.path().stem().string()] = Map{img.height, img.width, std::move(img.data)};
  }
}

template class SegmentationHead<float>;
template class SegmentationHead<double>;
template std::vector<std::uint8_t> hard_mask(const BasicTensor<float>&);
template std::vector<std::uint8_t> hard_mask(const BasicTensor<double>&);
template std::vector<float> foreground_probability(const BasicTensor<float>&, Index);
template std::vector<float> foreground_probability(const BasicTensor<double>&, Index);
template MultitaskLossParts<float> multitask_loss(const BasicTensor<float>&, const BasicTensor<float>&,
                                                  std::span<const std::uint8_t>, double);
template MultitaskLossParts<double> multitask_loss(const BasicTensor<double>&, const BasicTensor<double>&,
                                                   std::span<const std::uint8_t>, double);

}  // namespace amnet
