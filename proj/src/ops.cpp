#include "amnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amnet/piecewise.hpp"

namespace amnet {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisView split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis out of range for shape " + to_string(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

template <typename T>
std::size_t sz(Index i) {
  return static_cast<std::size_t>(i);
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.vec());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    for (auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto dst = t->mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.vec());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto dst = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (b.requires_grad()) {
      auto dst = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.vec());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto dst = a.mutable_grad();
      const auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto dst = b.mutable_grad();
      const auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * ad[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.vec());
  for (auto& v : out) v *= factor;
  return make_op<T>(a.shape(), std::move(out), {a}, [a, factor](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.vec());
  if (piecewise::active()) {
    std::vector<std::uint8_t> on(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) on[i] = out[i] > T(0);
    piecewise::resolve(on);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = on[i] ? out[i] : T(0);
  } else {
    for (auto& v : out) v = v > T(0) ? v : T(0);
  }
  return make_op<T>(a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    const auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) dst[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.vec());
  if (piecewise::active()) {
    std::vector<std::uint8_t> side(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) side[i] = out[i] < lo ? 0 : (out[i] > hi ? 2 : 1);
    piecewise::resolve(side);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = side[i] == 0 ? lo : (side[i] == 2 ? hi : out[i]);
  } else {
    for (auto& v : out) v = std::clamp(v, lo, hi);
  }
  return make_op<T>(a.shape(), std::move(out), {a}, [a, lo, hi](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    const auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) dst[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (x.ndim() < 2 || bias.numel() != x.dim(1)) {
    throw ShapeError("add_channel_bias: bias of " + std::to_string(bias.numel()) +
                     " for input " + to_string(x.shape()));
  }
  const AxisView v = split_axis(x.shape(), 1);
  std::vector<T> out(x.vec());
  const auto b = bias.data();
  for (Index o = 0; o < v.outer; ++o)
    for (Index c = 0; c < v.extent; ++c)
      for (Index i = 0; i < v.inner; ++i) out[sz<T>((o * v.extent + c) * v.inner + i)] += b[sz<T>(c)];
  return make_op<T>(x.shape(), std::move(out), {x, bias}, [x, bias, v](std::span<const T> g) mutable {
    if (x.requires_grad()) {
      auto dst = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto db = bias.mutable_grad();
      for (Index o = 0; o < v.outer; ++o)
        for (Index c = 0; c < v.extent; ++c) {
          T acc = 0;
          for (Index i = 0; i < v.inner; ++i) acc += g[sz<T>((o * v.extent + c) * v.inner + i)];
          db[sz<T>(c)] += acc;
        }
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  return make_op<T>(Shape{}, {acc}, {a}, [a](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    for (auto& d : dst) d += g[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  return make_op<T>(std::move(shape), a.vec(), {a}, [a](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  Index total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    total += s[axis];
    s[axis] = out_shape[axis];
    if (s != out_shape) throw ShapeError("concat: incompatible shape " + to_string(p.shape()));
  }
  out_shape[axis] = total;
  const AxisView ov = split_axis(out_shape, axis);
  std::vector<T> out(sz<T>(numel(out_shape)));
  std::vector<Index> starts;
  Index start = 0;
  for (const auto& p : parts) {
    starts.push_back(start);
    const Index ext = p.dim(axis);
    const auto src = p.data();
    for (Index o = 0; o < ov.outer; ++o) {
      const auto from = src.begin() + o * ext * ov.inner;
      std::copy(from, from + ext * ov.inner, out.begin() + (o * total + start) * ov.inner);
    }
    start += ext;
  }
  return make_op<T>(out_shape, std::move(out), parts,
                    [parts, starts, ov, total, axis](std::span<const T> g) mutable {
                      for (std::size_t k = 0; k < parts.size(); ++k) {
                        auto& p = parts[k];
                        if (!p.requires_grad()) continue;
                        const Index ext = p.dim(axis);
                        auto dst = p.mutable_grad();
                        for (Index o = 0; o < ov.outer; ++o) {
                          const T* from = g.data() + (o * total + starts[k]) * ov.inner;
                          T* to = dst.data() + o * ext * ov.inner;
                          for (Index i = 0; i < ext * ov.inner; ++i) to[i] += from[i];
                        }
                      }
                    });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, Index start, Index length) {
  const AxisView v = split_axis(a.shape(), axis);
  if (start < 0 || length < 0 || start + length > v.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") out of range for " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<T> out(sz<T>(numel(out_shape)));
  const auto src = a.data();
  for (Index o = 0; o < v.outer; ++o) {
    const auto from = src.begin() + (o * v.extent + start) * v.inner;
    std::copy(from, from + length * v.inner, out.begin() + o * length * v.inner);
  }
  return make_op<T>(out_shape, std::move(out), {a}, [a, v, start, length](std::span<const T> g) mutable {
    auto dst = a.mutable_grad();
    for (Index o = 0; o < v.outer; ++o) {
      T* to = dst.data() + (o * v.extent + start) * v.inner;
      const T* from = g.data() + o * length * v.inner;
      for (Index i = 0; i < length * v.inner; ++i) to[i] += from[i];
    }
  });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis) {
  const AxisView v = split_axis(a.shape(), axis);
  if (v.extent == 0) throw ShapeError("softmax over an axis of extent 0");
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      const Index base = o * v.extent * v.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index j = 0; j < v.extent; ++j) mx = std::max(mx, x[sz<T>(base + j * v.inner)]);
      T total = 0;
      for (Index j = 0; j < v.extent; ++j) {
        const T e = std::exp(x[sz<T>(base + j * v.inner)] - mx);
        out[sz<T>(base + j * v.inner)] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (Index j = 0; j < v.extent; ++j) out[sz<T>(base + j * v.inner)] *= inv;
    }
  }
  std::vector<T> saved(out);
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a, v, y = std::move(saved)](std::span<const T> g) mutable {
                      auto dst = a.mutable_grad();
                      for (Index o = 0; o < v.outer; ++o) {
                        for (Index i = 0; i < v.inner; ++i) {
                          const Index base = o * v.extent * v.inner + i;
                          T dot = 0;
                          for (Index j = 0; j < v.extent; ++j) {
                            const auto k = sz<T>(base + j * v.inner);
                            dot += g[k] * y[k];
                          }
                          for (Index j = 0; j < v.extent; ++j) {
                            const auto k = sz<T>(base + j * v.inner);
                            dst[k] += y[k] * (g[k] - dot);
                          }
                        }
                      }
                    });
}

namespace {

struct LerpTap {
  Index lo;
  Index hi;
  double frac;
};

std::vector<LerpTap> corner_aligned_taps(Index in, Index out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  for (Index i = 0; i < out; ++i) {
    if (in == 1 || out == 1) {
      taps[static_cast<std::size_t>(i)] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    Index lo = static_cast<Index>(std::floor(pos));
    lo = std::min(lo, in - 1);
    const Index hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
BasicTensor<T> upsample_linear(const BasicTensor<T>& a, std::size_t axis, Index out_size) {
  const AxisView v = split_axis(a.shape(), axis);
  if (v.extent == 0 || out_size <= 0) throw ShapeError("upsample_linear: empty axis");
  const auto taps = corner_aligned_taps(v.extent, out_size);
  Shape out_shape = a.shape();
  out_shape[axis] = out_size;
  const auto x = a.data();
  std::vector<T> out(sz<T>(numel(out_shape)));
  for (Index o = 0; o < v.outer; ++o) {
    const T* src = x.data() + o * v.extent * v.inner;
    T* dst = out.data() + o * out_size * v.inner;
    for (Index j = 0; j < out_size; ++j) {
      const auto& tp = taps[sz<T>(j)];
      const T w1 = static_cast<T>(tp.frac);
      const T w0 = T(1) - w1;
      const T* r0 = src + tp.lo * v.inner;
      const T* r1 = src + tp.hi * v.inner;
      T* d = dst + j * v.inner;
      for (Index i = 0; i < v.inner; ++i) d[i] = w0 * r0[i] + w1 * r1[i];
    }
  }
  return make_op<T>(out_shape, std::move(out), {a}, [a, v, taps, out_size](std::span<const T> g) mutable {
    auto grad = a.mutable_grad();
    for (Index o = 0; o < v.outer; ++o) {
      T* dst = grad.data() + o * v.extent * v.inner;
      const T* src = g.data() + o * out_size * v.inner;
      for (Index j = 0; j < out_size; ++j) {
        const auto& tp = taps[sz<T>(j)];
        const T w1 = static_cast<T>(tp.frac);
        const T w0 = T(1) - w1;
        T* r0 = dst + tp.lo * v.inner;
        T* r1 = dst + tp.hi * v.inner;
        const T* s = src + j * v.inner;
        for (Index i = 0; i < v.inner; ++i) {
          r0[i] += w0 * s[i];
          r1[i] += w1 * s[i];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> upsample_trilinear(const BasicTensor<T>& a, Index depth, Index height, Index width) {
  if (a.ndim() != 5) throw ShapeError("upsample_trilinear expects [N,C,D,H,W], got " + to_string(a.shape()));
  return upsample_linear(upsample_linear(upsample_linear(a, 2, depth), 3, height), 4, width);
}

template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& a, Index height, Index width) {
  if (a.ndim() != 4) throw ShapeError("upsample_bilinear expects [N,C,H,W], got " + to_string(a.shape()));
  return upsample_linear(upsample_linear(a, 2, height), 3, width);
}

template <typename T>
BasicTensor<T> expectation(const BasicTensor<T>& a, std::size_t axis) {
  const AxisView v = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto x = a.data();
  std::vector<T> out(sz<T>(v.outer * v.inner), T(0));
  for (Index o = 0; o < v.outer; ++o)
    for (Index j = 0; j < v.extent; ++j) {
      const T* src = x.data() + (o * v.extent + j) * v.inner;
      T* dst = out.data() + o * v.inner;
      const T level = static_cast<T>(j);
      for (Index i = 0; i < v.inner; ++i) dst[i] += level * src[i];
    }
  return make_op<T>(out_shape, std::move(out), {a}, [a, v](std::span<const T> g) mutable {
    auto grad = a.mutable_grad();
    for (Index o = 0; o < v.outer; ++o)
      for (Index j = 0; j < v.extent; ++j) {
        T* dst = grad.data() + (o * v.extent + j) * v.inner;
        const T* src = g.data() + o * v.inner;
        const T level = static_cast<T>(j);
        for (Index i = 0; i < v.inner; ++i) dst[i] += level * src[i];
      }
  });
}

template <typename T>
BasicTensor<T> smooth_l1_loss(const BasicTensor<T>& pred, std::span<const T> target,
                              std::span<const std::uint8_t> mask) {
  if (static_cast<Index>(target.size()) != pred.numel() || static_cast<Index>(mask.size()) != pred.numel()) {
    throw ShapeError("smooth_l1_loss: target/mask size does not match prediction " + to_string(pred.shape()));
  }
  const auto p = pred.data();
  // 0: quadratic, 1: x - 0.5, 2: -x - 0.5
  std::vector<std::uint8_t> branch(p.size(), 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T x = p[i] - target[i];
    branch[i] = std::abs(x) < T(1) ? 0 : (x > 0 ? 1 : 2);
  }
  if (piecewise::active()) piecewise::resolve(branch);
  Index count = 0;
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!mask[i]) continue;
    const T x = p[i] - target[i];
    acc += branch[i] == 0 ? T(0.5) * x * x : (branch[i] == 1 ? x : -x) - T(0.5);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("smooth_l1_loss: mask selects no labeled pixels");
  const T inv = T(1) / static_cast<T>(count);
  std::vector<T> tgt(target.begin(), target.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_op<T>(Shape{}, {acc * inv}, {pred},
                    [pred, tgt = std::move(tgt), msk = std::move(msk), inv](std::span<const T> g) mutable {
                      auto dst = pred.mutable_grad();
                      const auto p = pred.data();
                      for (std::size_t i = 0; i < p.size(); ++i) {
                        if (!msk[i]) continue;
                        const T x = p[i] - tgt[i];
                        const T d = std::abs(x) < T(1) ? x : (x > 0 ? T(1) : T(-1));
                        dst[i] += g[0] * inv * d;
                      }
                    });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::span<const std::uint8_t> labels) {
  if (probs.ndim() != 4) throw ShapeError("cross_entropy expects [N,K,H,W], got " + to_string(probs.shape()));
  const Index n = probs.dim(0), k = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  if (static_cast<Index>(labels.size()) != n * plane) {
    throw ShapeError("cross_entropy: label count does not match " + to_string(probs.shape()));
  }
  if (n * plane == 0) throw std::invalid_argument("cross_entropy: no pixels");
  constexpr T tiny = std::numeric_limits<T>::min();
  const auto p = probs.data();
  T acc = 0;
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < plane; ++i) {
      const Index c = labels[sz<T>(b * plane + i)];
      if (c >= k) throw std::invalid_argument("cross_entropy: label out of range");
      acc -= std::log(std::max(p[sz<T>((b * k + c) * plane + i)], tiny));
    }
  const T inv = T(1) / static_cast<T>(n * plane);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return make_op<T>(Shape{}, {acc * inv}, {probs},
                    [probs, lab = std::move(lab), n, k, plane, inv](std::span<const T> g) mutable {
                      auto dst = probs.mutable_grad();
                      const auto p = probs.data();
                      for (Index b = 0; b < n; ++b)
                        for (Index i = 0; i < plane; ++i) {
                          const auto idx = sz<T>((b * k + lab[sz<T>(b * plane + i)]) * plane + i);
                          dst[idx] -= g[0] * inv / std::max(p[idx], std::numeric_limits<T>::min());
                        }
                    });
}

#define AMNET_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> neg(const BasicTensor<T>&);                                             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                     \
  template BasicTensor<T> add_channel_bias(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                             \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                  \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::size_t, Index, Index);                \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> upsample_linear(const BasicTensor<T>&, std::size_t, Index);             \
  template BasicTensor<T> upsample_trilinear(const BasicTensor<T>&, Index, Index, Index);         \
  template BasicTensor<T> upsample_bilinear(const BasicTensor<T>&, Index, Index);                 \
  template BasicTensor<T> expectation(const BasicTensor<T>&, std::size_t);                        \
  template BasicTensor<T> smooth_l1_loss(const BasicTensor<T>&, std::span<const T>,               \
                                         std::span<const std::uint8_t>);                          \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::uint8_t>);

AMNET_INSTANTIATE_OPS(float)
AMNET_INSTANTIATE_OPS(double)

}  // namespace amnet
