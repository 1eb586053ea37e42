#include "amnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace amnet {

template <typename T>
Adam<T>::Adam(ParameterStore<T>& store, AdamOptions opt) : store_(store), opt_(opt) {
  if (!(opt.lr > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
  const auto& params = store_.parameters();
  m_.resize(params.size());
  v_.resize(params.size());
  lr_scale_.assign(params.size(), 1.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(static_cast<std::size_t>(params[i].tensor.numel()), T(0));
    v_[i].assign(static_cast<std::size_t>(params[i].tensor.numel()), T(0));
  }
}

template <typename T>
void Adam<T>::set_lr(double lr) {
  if (!(lr > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
  opt_.lr = lr;
}

template <typename T>
void Adam<T>::set_lr_scale(const std::string& prefix, double factor) {
  const auto& params = store_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name.starts_with(prefix)) lr_scale_[i] = factor;
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
  const T eps = static_cast<T>(opt_.eps);
  auto& params = store_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const T step_size = static_cast<T>(opt_.lr * lr_scale_[i] / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    auto w = p.tensor.data();
    const auto g = p.tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace amnet
