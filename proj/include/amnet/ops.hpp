#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amnet/tensor.hpp"

namespace amnet {

// Elementwise. Binary ops require identical shapes (no broadcasting).
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
/// Clamp to [lo, hi]; the gradient passes through wherever lo <= x <= hi.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

/// Adds bias[c] to every element of channel c (axis 1).
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

// Reductions to a scalar.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);

// Structural.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
/// Elements [start, start + length) along `axis`.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, Index start, Index length);

/// Softmax over one axis. Rejects an axis of extent 0.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis);

/// Linear interpolation along a single axis on the corner-aligned grid:
/// output i samples input position i * (n_in - 1) / (n_out - 1).
template <typename T>
BasicTensor<T> upsample_linear(const BasicTensor<T>& a, std::size_t axis, Index out_size);
/// [N,C,D,H,W] -> [N,C,D',H',W'], corner aligned on all three axes.
template <typename T>
BasicTensor<T> upsample_trilinear(const BasicTensor<T>& a, Index depth, Index height, Index width);
/// [N,C,H,W] -> [N,C,H',W'], corner aligned.
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& a, Index height, Index width);

/// Sum over `axis` of j * a[..., j, ...]; the axis is removed from the shape.
template <typename T> BasicTensor<T> expectation(const BasicTensor<T>& a, std::size_t axis);

/// Mean over masked elements of the piecewise smooth L1 penalty with a
/// 1-pixel threshold. Throws when the mask is empty.
template <typename T>
BasicTensor<T> smooth_l1_loss(const BasicTensor<T>& pred, std::span<const T> target,
                              std::span<const std::uint8_t> mask);

/// Mean cross-entropy of class probabilities probs[N,K,H,W] against integer
/// labels laid out as [N,H,W].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::span<const std::uint8_t> labels);

}  // namespace amnet
