#pragma once

#include "amnet/tensor.hpp"

namespace amnet {

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over every axis except axis 1.
///
/// Training mode normalizes with the biased batch variance and blends the
/// batch mean and unbiased variance into the running statistics with the
/// given momentum. Evaluation mode normalizes with the running statistics and
/// leaves them untouched. Gradients flow to x, gamma and beta in both modes.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training,
                          BatchNormOptions opt = {});

}  // namespace amnet
