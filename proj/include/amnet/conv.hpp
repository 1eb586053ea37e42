#pragma once

#include "amnet/tensor.hpp"

namespace amnet {

/// Geometry shared by every spatial axis of a convolution.
struct ConvOptions {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// floor((in + 2*padding - dilation*(kernel-1) - 1) / stride) + 1
Index conv_output_extent(Index in, Index kernel, const ConvOptions& opt);

/// Dense 2-D cross-correlation: [N,Cin,H,W] x [Cout,Cin,kh,kw] -> [N,Cout,H',W'].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, ConvOptions opt = {});

/// Dense 3-D cross-correlation; stride, dilation and padding apply to all three axes.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, ConvOptions opt = {});

/// Per-channel 2-D convolution: [N,C,H,W] x [C,1,kh,kw] -> [N,C,H',W'].
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                ConvOptions opt = {});

/// 1x1 channel mixing: [N,Cin,H,W] x [Cout,Cin,1,1] -> [N,Cout,H,W].
template <typename T>
BasicTensor<T> pointwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight);

}  // namespace amnet
