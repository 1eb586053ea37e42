#include "amnet/disparity_head.hpp"

#include <stdexcept>

#include "amnet/ops.hpp"

namespace amnet {

SAMSpec SAMSpec::make(int k, Index width) {
  SAMSpec spec;
  spec.width = width;
  for (int i = 0; i < 3; ++i) spec.stages.push_back(AMModuleSpec::make(k, width, Dimensionality::Three));
  return spec;
}

void SAMSpec::validate() const {
  if (stages.size() != 3) {
    throw std::invalid_argument("SAM needs exactly three AM stages, got " + std::to_string(stages.size()));
  }
  for (const auto& s : stages) {
    s.validate();
    if (s.dims != Dimensionality::Three) throw std::invalid_argument("SAM stages must be 3-D");
    if (s.out_channels != width) throw std::invalid_argument("SAM stage width must equal the stem width");
  }
}

template <typename T>
DisparityHead<T>::DisparityHead(ParameterStore<T>& store, const std::string& prefix, Index in_depth, SAMSpec spec,
                                std::vector<LayerParamCount>* report)
    : spec_(std::move(spec)) {
  spec_.validate();
  const Index Wd = spec_.width;
  stem_ = store.create(prefix + ".stem.weight", {Wd, in_depth, 3, 3, 3}, ParamKind::Conv, Init::FanInUniform);
  stem_bn_ = BatchNormLayer<T>(store, prefix + ".stem.bn", Wd);
  if (report) report->push_back({prefix + ".stem", "conv3d", in_depth, Wd, stem_.numel()});
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = prefix + ".stage" + std::to_string(i);
    stages_.emplace_back(store, name, Wd, spec_.stages[i], report);
    projections_.push_back(
        store.create(name + ".project.weight", {1, Wd, 3, 3, 3}, ParamKind::Head, Init::FanInUniform));
    if (report) report->push_back({name + ".project", "conv3d", Wd, 1, projections_.back().numel()});
  }
}

template <typename T>
std::vector<BasicTensor<T>> DisparityHead<T>::stage_features(const CostVolume<T>& ecv, bool training) {
  BasicTensor<T> h = relu(stem_bn_(conv3d(ecv.data, stem_, ConvOptions{1, 1, 1}), training));
  std::vector<BasicTensor<T>> out;
  for (auto& stage : stages_) {
    h = add(h, stage(h, training));
    out.push_back(h);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> DisparityHead<T>::run_sam(const CostVolume<T>& ecv, HeadMode mode, bool training) {
  const auto feats = stage_features(ecv, training);
  std::vector<BasicTensor<T>> out;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (mode == HeadMode::FinalOnly && i + 1 < feats.size()) continue;
    out.push_back(conv3d(feats[i], projections_[i], ConvOptions{1, 1, 1}));
  }
  return out;
}

template <typename T>
BasicTensor<T> disparity_expectation(const BasicTensor<T>& probs) {
  if (probs.ndim() != 4) throw ShapeError("disparity_expectation expects [N,L,H,W], got " + to_string(probs.shape()));
  const T d_max = static_cast<T>(probs.dim(1) - 1);
  // Rounding can push a near one-hot expectation a few ulps past the range.
  return clamp(expectation(probs, 1), T(0), d_max);
}

template <typename T>
BasicTensor<T> regress_disparity(const BasicTensor<T>& volume, Index d_max, Index height, Index width) {
  if (volume.ndim() != 5 || volume.dim(1) != 1) {
    throw ShapeError("regress_disparity expects a single-channel [N,1,L,H,W] volume, got " + to_string(volume.shape()));
  }
  if (d_max < 1) throw std::invalid_argument("regress_disparity: d_max must be >= 1");
  const Index N = volume.dim(0);
  auto up = upsample_trilinear(volume, d_max + 1, height, width);
  auto probs = softmax(reshape(neg(up), Shape{N, d_max + 1, height, width}), 1);
  return disparity_expectation(probs);
}

template <typename T>
DisparityLoss<T> total_disparity_loss(const std::vector<BasicTensor<T>>& preds, std::span<const T> gt,
                                      std::span<const std::uint8_t> mask) {
  if (preds.size() != 3) {
    throw std::invalid_argument("total_disparity_loss needs three stage predictions, got " +
                                std::to_string(preds.size()));
  }
  DisparityLoss<T> out;
  for (const auto& p : preds) out.stages.push_back(smooth_l1_loss(p, gt, mask));
  out.total = add(add(out.stages[0], out.stages[1]), out.stages[2]);
  return out;
}

template class DisparityHead<float>;
template class DisparityHead<double>;
template BasicTensor<float> regress_disparity(const BasicTensor<float>&, Index, Index, Index);
template BasicTensor<double> regress_disparity(const BasicTensor<double>&, Index, Index, Index);
template BasicTensor<float> disparity_expectation(const BasicTensor<float>&);
template BasicTensor<double> disparity_expectation(const BasicTensor<double>&);
template DisparityLoss<float> total_disparity_loss(const std::vector<BasicTensor<float>>&, std::span<const float>,
                                                   std::span<const std::uint8_t>);
template DisparityLoss<double> total_disparity_loss(const std::vector<BasicTensor<double>>&, std::span<const double>,
                                                    std::span<const std::uint8_t>);

}  // namespace amnet
