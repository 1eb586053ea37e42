#include "amnet/nn.hpp"

#include <cmath>
#include <random>

namespace amnet {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::Conv: return "conv";
    case ParamKind::Norm: return "norm";
    case ParamKind::Projection: return "projection";
    case ParamKind::Head: return "head";
  }
  return "?";
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& name) {
  // FNV-1a over the name, folded into the seed with a splitmix64 finalizer.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <typename T>
void ParameterStore<T>::check_unique(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  for (const auto& b : buffers_)
    if (b.name == name) throw std::invalid_argument("duplicate buffer name: " + name);
}

template <typename T>
BasicTensor<T> ParameterStore<T>::create(const std::string& name, Shape shape, ParamKind kind, Init init) {
  check_unique(name);
  const Index n = numel(shape);
  std::vector<T> values(static_cast<std::size_t>(n), T(0));
  if (init == Init::Ones) {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init == Init::FanInUniform) {
    Index fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<Index>(fan_in, 1)));
    std::mt19937_64 rng(mix_seed(seed_, name));
    for (auto& v : values) {
      // 53 random mantissa bits -> [0, 1); portable unlike std::uniform_real_distribution.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<T>((2.0 * u - 1.0) * bound);
    }
  }
  BasicTensor<T> t(std::move(shape), std::move(values), true);
  params_.push_back({name, t, kind, true});
  return t;
}

template <typename T>
BasicTensor<T> ParameterStore<T>::create_buffer(const std::string& name, Shape shape, T fill) {
  check_unique(name);
  auto t = BasicTensor<T>::full(std::move(shape), fill, false);
  buffers_.push_back({name, t});
  return t;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
void ParameterStore<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_)
    if (p.name.starts_with(prefix)) p.trainable = trainable;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
Index ParameterStore<T>::count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
std::map<ParamKind, Index> ParameterStore<T>::count_by_kind() const {
  std::map<ParamKind, Index> out;
  for (const auto& p : params_) out[p.kind] += p.tensor.numel();
  return out;
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(ParameterStore<T>& store, const std::string& prefix, Index channels)
    : gamma_(store.create(prefix + ".gamma", {channels}, ParamKind::Norm, Init::Ones)),
      beta_(store.create(prefix + ".beta", {channels}, ParamKind::Norm, Init::Zeros)),
      running_mean_(store.create_buffer(prefix + ".running_mean", {channels}, T(0))),
      running_var_(store.create_buffer(prefix + ".running_var", {channels}, T(1))) {}

template <typename T>
BasicTensor<T> BatchNormLayer<T>::operator()(const BasicTensor<T>& x, bool training) {
  return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;

}  // namespace amnet
