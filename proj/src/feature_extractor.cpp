#include "amnet/feature_extractor.hpp"

#include <numeric>
#include <stdexcept>

#include "amnet/ops.hpp"

namespace amnet {

const char* to_string(LayerType type) {
  switch (type) {
    case LayerType::SepConv: return "sepconv";
    case LayerType::Conv: return "conv";
    case LayerType::DResBlock: return "dresnet-block";
    case LayerType::ResBlock: return "resnet-block";
  }
  return "?";
}

BackboneSpec BackboneSpec::paper() {
  return {"paper",
          {{LayerType::SepConv, 32, 2, 1, 1},
           {LayerType::SepConv, 32, 1, 1, 2},
           {LayerType::DResBlock, 96, 1, 1, 3},
           {LayerType::DResBlock, 256, 2, 1, 1},
           {LayerType::DResBlock, 256, 1, 1, 18},
           {LayerType::DResBlock, 256, 1, 2, 3}}};
}

BackboneSpec BackboneSpec::micro() {
  return {"micro",
          {{LayerType::SepConv, 8, 2, 1, 1},
           {LayerType::SepConv, 8, 1, 1, 2},
           {LayerType::DResBlock, 16, 1, 1, 2},
           {LayerType::DResBlock, 24, 2, 1, 1},
           {LayerType::DResBlock, 24, 1, 1, 2},
           {LayerType::DResBlock, 24, 1, 2, 1}}};
}

BackboneSpec BackboneSpec::resnet() {
  return {"resnet",
          {{LayerType::Conv, 32, 2, 1, 1},
           {LayerType::Conv, 32, 1, 1, 2},
           {LayerType::ResBlock, 32, 1, 1, 3},
           {LayerType::ResBlock, 64, 2, 1, 16},
           {LayerType::ResBlock, 128, 1, 1, 3},
           {LayerType::ResBlock, 128, 1, 2, 3}}};
}

BackboneSpec BackboneSpec::resnet_separable() {
  BackboneSpec spec = resnet();
  spec.preset = "resnet-sep";
  for (auto& l : spec.layers) l.type = l.type == LayerType::Conv ? LayerType::SepConv : LayerType::DResBlock;
  return spec;
}

BackboneSpec BackboneSpec::from_name(const std::string& name) {
  if (name == "paper" || name == "dresnet") return paper();
  if (name == "micro") return micro();
  if (name == "resnet") return resnet();
  if (name == "resnet-sep") return resnet_separable();
  throw std::invalid_argument("unknown backbone preset: " + name);
}

void BackboneSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("backbone has no layers");
  for (const auto& l : layers) {
    if (l.d_out < 1) throw std::invalid_argument("backbone layer with d_out < 1");
    if (l.repeat < 1) throw std::invalid_argument("backbone layer with repeat < 1");
    if (l.stride != 1 && l.stride != 2) throw std::invalid_argument("backbone stride must be 1 or 2");
    if (l.dilation < 1) throw std::invalid_argument("backbone dilation must be >= 1");
  }
  if (cumulative_stride() != 4) {
    throw std::invalid_argument("backbone cumulative stride must be 4, got " + std::to_string(cumulative_stride()));
  }
}

int BackboneSpec::cumulative_stride() const {
  int s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

Index BackboneSpec::out_channels() const { return layers.empty() ? 0 : layers.back().d_out; }

Index BackboneSpec::block_count() const {
  Index n = 0;
  for (const auto& l : layers)
    if (l.type == LayerType::DResBlock || l.type == LayerType::ResBlock) n += l.repeat;
  return n;
}

std::vector<int> am_schedule(int k) {
  if (k < 2 || (k & (k - 1)) != 0) throw std::invalid_argument("AM k must be a power of two >= 2");
  std::vector<int> s{1};
  for (int m = 2; m < k; m *= 2) {
    s.push_back(m);
    s.push_back(m);
  }
  s.push_back(k);
  return s;
}

AMModuleSpec AMModuleSpec::make(int k, Index out_channels, Dimensionality dims) {
  AMModuleSpec spec;
  spec.k = k;
  spec.schedule = am_schedule(k);
  spec.out_channels = out_channels;
  spec.dims = dims;
  return spec;
}

void AMModuleSpec::validate() const {
  if (schedule != am_schedule(k)) {
    throw std::invalid_argument("AM dilation schedule does not match k = " + std::to_string(k));
  }
  if (out_channels < 1) throw std::invalid_argument("AM out_channels must be >= 1");
}

int AMModuleSpec::support_radius() const { return std::accumulate(schedule.begin(), schedule.end(), 0); }

template <typename T>
SeparableConv<T>::SeparableConv(ParameterStore<T>& store, const std::string& prefix, Index d_in, Index d_out,
                                int stride, int dilation)
    : depthwise(store.create(prefix + ".depthwise", {d_in, 1, 3, 3}, ParamKind::Conv, Init::FanInUniform)),
      pointwise(store.create(prefix + ".pointwise", {d_out, d_in, 1, 1}, ParamKind::Conv, Init::FanInUniform)),
      opt{stride, dilation, dilation} {}

template <typename T>
BasicTensor<T> SeparableConv<T>::operator()(const BasicTensor<T>& x) const {
  return pointwise_conv2d(depthwise_conv2d(x, depthwise, opt), pointwise);
}

template <typename T>
AtrousMultiscale<T>::AtrousMultiscale(ParameterStore<T>& store, const std::string& prefix, Index d_in,
                                      const AMModuleSpec& spec, std::vector<LayerParamCount>* report)
    : spec_(spec) {
  spec_.validate();
  const bool three = spec.dims == Dimensionality::Three;
  const Index C = spec.out_channels;
  Index cur = d_in;
  auto add = [&](const std::string& name, Index kernel, const char* kind) {
    Shape shape{C, cur};
    for (int a = 0; a < (three ? 3 : 2); ++a) shape.push_back(kernel);
    weights_.push_back(store.create(prefix + "." + name + ".weight", shape, ParamKind::Conv, Init::FanInUniform));
    if (spec.use_norm) norms_.emplace_back(store, prefix + "." + name + ".bn", C);
    if (report) report->push_back({prefix + "." + name, kind, cur, C, weights_.back().numel()});
    cur = C;
  };
  for (std::size_t i = 0; i < spec.schedule.size(); ++i) add("atrous" + std::to_string(i), 3, three ? "conv3d" : "standard");
  add("refine0", 1, "pointwise");
  add("refine1", 1, "pointwise");
}

template <typename T>
BasicTensor<T> AtrousMultiscale<T>::operator()(const BasicTensor<T>& x, bool training) {
  const bool three = spec_.dims == Dimensionality::Three;
  const std::size_t trunk = spec_.schedule.size();
  BasicTensor<T> h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const int dil = i < trunk ? spec_.schedule[i] : 1;
    const ConvOptions opt{1, dil, i < trunk ? dil : 0};
    h = three ? conv3d(h, weights_[i], opt) : conv2d(h, weights_[i], opt);
    if (spec_.use_norm) h = norms_[i](h, training);
    if (i + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ParameterStore<T>& store, const std::string& prefix, BackboneSpec backbone,
                                      AMModuleSpec am, Index image_channels, bool with_s_channel)
    : backbone_(std::move(backbone)), image_channels_(image_channels), with_s_(with_s_channel) {
  backbone_.validate();
  am.validate();
  if (am.dims != Dimensionality::Two) throw std::invalid_argument("feature AM module must be 2-D");

  Index cur = image_channels_;
  int index = 0;
  for (const auto& layer : backbone_.layers) {
    for (int r = 0; r < layer.repeat; ++r) {
      ++index;
      const int stride = r == 0 ? layer.stride : 1;
      const std::string name = prefix + ".backbone.u" + (index < 10 ? "0" : "") + std::to_string(index);
      const Index d_out = layer.d_out;
      Unit u;
      u.type = layer.type;
      u.opt1 = {stride, layer.dilation, layer.dilation};
      u.opt2 = {1, layer.dilation, layer.dilation};
      switch (layer.type) {
        case LayerType::SepConv:
          u.sep1 = SeparableConv<T>(store, name + ".sep", cur, d_out, stride, layer.dilation);
          u.bn1 = BatchNormLayer<T>(store, name + ".bn", d_out);
          report_.push_back({name + ".sep", "separable", cur, d_out, u.sep1.depthwise.numel() + u.sep1.pointwise.numel()});
          break;
        case LayerType::Conv:
          u.conv1 = store.create(name + ".conv.weight", {d_out, cur, 3, 3}, ParamKind::Conv, Init::FanInUniform);
          u.bn1 = BatchNormLayer<T>(store, name + ".bn", d_out);
          report_.push_back({name + ".conv", "standard", cur, d_out, u.conv1.numel()});
          break;
        case LayerType::DResBlock:
        case LayerType::ResBlock: {
          const bool sep = layer.type == LayerType::DResBlock;
          if (sep) {
            u.sep1 = SeparableConv<T>(store, name + ".sep1", cur, d_out, stride, layer.dilation);
            u.sep2 = SeparableConv<T>(store, name + ".sep2", d_out, d_out, 1, layer.dilation);
            report_.push_back({name + ".sep1", "separable", cur, d_out,
                               u.sep1.depthwise.numel() + u.sep1.pointwise.numel()});
            report_.push_back({name + ".sep2", "separable", d_out, d_out,
                               u.sep2.depthwise.numel() + u.sep2.pointwise.numel()});
          } else {
            u.conv1 = store.create(name + ".conv1.weight", {d_out, cur, 3, 3}, ParamKind::Conv, Init::FanInUniform);
            u.conv2 = store.create(name + ".conv2.weight", {d_out, d_out, 3, 3}, ParamKind::Conv, Init::FanInUniform);
            report_.push_back({name + ".conv1", "standard", cur, d_out, u.conv1.numel()});
            report_.push_back({name + ".conv2", "standard", d_out, d_out, u.conv2.numel()});
          }
          u.bn1 = BatchNormLayer<T>(store, name + ".bn1", d_out);
          u.bn2 = BatchNormLayer<T>(store, name + ".bn2", d_out);
          if (cur != d_out || stride != 1) {
            u.projection = store.create(name + ".proj.weight", {d_out, cur, 1, 1}, ParamKind::Projection,
                                        Init::FanInUniform);
            u.proj_opt = {stride, 1, 0};
            u.proj_bn.emplace(store, name + ".proj.bn", d_out);
            report_.push_back({name + ".proj", "projection", cur, d_out, u.projection->numel()});
          }
          break;
        }
      }
      if (index == 1 && with_s_) {
        if (layer.type == LayerType::SepConv || layer.type == LayerType::DResBlock) {
          s_sep_ = SeparableConv<T>(store, prefix + ".s_branch", 1, d_out, stride, layer.dilation);
          s_separable_ = true;
          report_.push_back({prefix + ".s_branch", "separable", 1, d_out, s_sep_.depthwise.numel() + s_sep_.pointwise.numel()});
        } else {
          s_conv_ = store.create(prefix + ".s_branch.weight", {d_out, 1, 3, 3}, ParamKind::Conv, Init::FanInUniform);
          report_.push_back({prefix + ".s_branch", "standard", 1, d_out, s_conv_.numel()});
        }
      }
      units_.push_back(std::move(u));
      cur = d_out;
    }
  }
  am_ = AtrousMultiscale<T>(store, prefix + ".am", cur, am, &report_);
}

template <typename T>
BasicTensor<T> FeatureExtractor<T>::first_conv(const Unit& u, const BasicTensor<T>& x) const {
  if (u.type == LayerType::SepConv || u.type == LayerType::DResBlock) return u.sep1(x);
  return conv2d(x, u.conv1, u.opt1);
}

template <typename T>
BasicTensor<T> FeatureExtractor<T>::backbone_forward(const BasicTensor<T>& image, const BasicTensor<T>* s_channel,
                                                     bool training) {
  if (image.ndim() != 4 || image.dim(1) != image_channels_) {
    throw ShapeError("feature extractor expects [N," + std::to_string(image_channels_) + ",H,W], got " +
                     to_string(image.shape()));
  }
  const int s = stride();
  if (image.dim(2) % s != 0 || image.dim(3) % s != 0) {
    throw ShapeError("image height and width must be multiples of " + std::to_string(s) + ", got " +
                     to_string(image.shape()));
  }
  if (s_channel && !with_s_) throw std::invalid_argument("S channel given to a network built without one");
  if (s_channel && (s_channel->ndim() != 4 || s_channel->dim(0) != image.dim(0) || s_channel->dim(1) != 1 ||
                    s_channel->dim(2) != image.dim(2) || s_channel->dim(3) != image.dim(3))) {
    throw ShapeError("S channel must be [N,1,H,W] matching the image, got " + to_string(s_channel->shape()));
  }

  BasicTensor<T> x = image;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    Unit& u = units_[i];
    BasicTensor<T> h = first_conv(u, x);
    if (i == 0 && s_channel) h = add(h, s_separable_ ? s_sep_(*s_channel) : conv2d(*s_channel, s_conv_, u.opt1));
    h = u.bn1(h, training);
    if (u.type == LayerType::SepConv || u.type == LayerType::Conv) {
      x = relu(h);
      continue;
    }
    h = relu(h);
    h = u.type == LayerType::DResBlock ? u.sep2(h) : conv2d(h, u.conv2, u.opt2);
    h = u.bn2(h, training);
    BasicTensor<T> shortcut = x;
    if (u.projection) shortcut = (*u.proj_bn)(conv2d(x, *u.projection, u.proj_opt), training);
    x = relu(add(h, shortcut));
  }
  return x;
}

template <typename T>
BasicTensor<T> FeatureExtractor<T>::operator()(const BasicTensor<T>& image, const BasicTensor<T>* s_channel,
                                               bool training) {
  return am_(backbone_forward(image, s_channel, training), training);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> FeatureExtractor<T>::extract(const BasicTensor<T>& left,
                                                                       const BasicTensor<T>& right,
                                                                       const BasicTensor<T>* s_channel,
                                                                       bool training) {
  if (left.shape() != right.shape()) {
    throw ShapeError("left and right images differ in shape: " + to_string(left.shape()) + " vs " +
                     to_string(right.shape()));
  }
  auto fl = (*this)(left, s_channel, training);
  auto fr = (*this)(right, s_channel, training);
  return {fl, fr};
}

template class SeparableConv<float>;
template class SeparableConv<double>;
template class AtrousMultiscale<float>;
template class AtrousMultiscale<double>;
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

}  // namespace amnet
