#include "amnet/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <memory>

#include "amnet/parallel.hpp"

namespace amnet {

Index conv_output_extent(Index in, Index kernel, const ConvOptions& opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) {
    throw ShapeError("convolution needs stride >= 1, dilation >= 1, padding >= 0");
  }
  const Index span = in + 2 * opt.padding - static_cast<Index>(opt.dilation) * (kernel - 1) - 1;
  if (span < 0) {
    throw ShapeError("convolution kernel (extent " + std::to_string(kernel) + ", dilation " +
                     std::to_string(opt.dilation) + ") does not fit input extent " +
                     std::to_string(in) + " with padding " + std::to_string(opt.padding));
  }
  return span / opt.stride + 1;
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMatrix<T>>;

// Per-axis geometry of a volumetric convolution ordered (depth, height, width).
struct Geometry {
  Index batch = 0, in_ch = 0, out_ch = 0;
  std::array<Index, 3> in{}, out{}, kernel{}, stride{}, dilation{}, padding{};

  Index in_plane() const { return in[0] * in[1] * in[2]; }
  Index out_plane() const { return out[0] * out[1] * out[2]; }
  Index taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  Index patch() const { return in_ch * taps(); }
  bool is_identity_im2col() const {
    for (int a = 0; a < 3; ++a) {
      if (kernel[a] != 1 || stride[a] != 1 || padding[a] != 0) return false;
    }
    return true;
  }
};

// Output rows are (z, y) pairs of the output grid; a tile covers rows
// [r0, r1) and stores its patch matrix as K x ((r1 - r0) * out_w).
template <typename T>
void im2col(const T* src, const Geometry& g, Index r0, Index r1, T* col) {
  const Index ow = g.out[2], cols = (r1 - r0) * ow;
  for (Index c = 0; c < g.in_ch; ++c) {
    const T* plane = src + c * g.in_plane();
    for (Index kz = 0; kz < g.kernel[0]; ++kz)
      for (Index ky = 0; ky < g.kernel[1]; ++ky)
        for (Index kx = 0; kx < g.kernel[2]; ++kx) {
          const Index row = ((c * g.kernel[0] + kz) * g.kernel[1] + ky) * g.kernel[2] + kx;
          const Index x0 = kx * g.dilation[2] - g.padding[2];
          const Index lo = std::clamp<Index>(-x0, 0, ow);
          const Index hi = std::clamp<Index>(g.in[2] - x0, lo, ow);
          for (Index r = r0; r < r1; ++r) {
            const Index oz = r / g.out[1], oy = r % g.out[1];
            const Index iz = oz * g.stride[0] - g.padding[0] + kz * g.dilation[0];
            const Index iy = oy * g.stride[1] - g.padding[1] + ky * g.dilation[1];
            T* d = col + row * cols + (r - r0) * ow;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
              std::fill(d, d + ow, T(0));
              continue;
            }
            const T* s = plane + (iz * g.in[1] + iy) * g.in[2];
            if (g.stride[2] == 1) {
              std::fill(d, d + lo, T(0));
              std::copy(s + lo + x0, s + hi + x0, d + lo);
              std::fill(d + hi, d + ow, T(0));
              continue;
            }
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride[2] + x0;
              d[ox] = (ix >= 0 && ix < g.in[2]) ? s[ix] : T(0);
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* col, const Geometry& g, Index r0, Index r1, T* dst_img) {
  const Index ow = g.out[2], cols = (r1 - r0) * ow;
  for (Index c = 0; c < g.in_ch; ++c) {
    T* plane = dst_img + c * g.in_plane();
    for (Index kz = 0; kz < g.kernel[0]; ++kz)
      for (Index ky = 0; ky < g.kernel[1]; ++ky)
        for (Index kx = 0; kx < g.kernel[2]; ++kx) {
          const Index row = ((c * g.kernel[0] + kz) * g.kernel[1] + ky) * g.kernel[2] + kx;
          const Index x0 = kx * g.dilation[2] - g.padding[2];
          const Index lo = std::clamp<Index>(-x0, 0, ow);
          const Index hi = std::clamp<Index>(g.in[2] - x0, lo, ow);
          for (Index r = r0; r < r1; ++r) {
            const Index oz = r / g.out[1], oy = r % g.out[1];
            const Index iz = oz * g.stride[0] - g.padding[0] + kz * g.dilation[0];
            const Index iy = oy * g.stride[1] - g.padding[1] + ky * g.dilation[1];
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) continue;
            const T* s = col + row * cols + (r - r0) * ow;
            T* d = plane + (iz * g.in[1] + iy) * g.in[2];
            if (g.stride[2] == 1) {
              for (Index ox = lo; ox < hi; ++ox) d[ox + x0] += s[ox];
              continue;
            }
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride[2] + x0;
              if (ix >= 0 && ix < g.in[2]) d[ix] += s[ox];
            }
          }
        }
  }
}

// Rows per tile so that one patch matrix stays around 256 KiB.
template <typename T>
Index tile_rows(const Geometry& g) {
  const Index rows = g.out[0] * g.out[1];
  const Index per_row = g.patch() * g.out[2] * static_cast<Index>(sizeof(T));
  return std::clamp<Index>((Index{256} << 10) / std::max<Index>(per_row, 1), 1, rows);
}

template <typename T>
BasicTensor<T> conv_volumetric(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const Geometry& g, Shape out_shape) {
  const Index K = g.patch(), P = g.out_plane(), Co = g.out_ch;
  const bool direct = g.is_identity_im2col();
  const auto x = input.data();
  const auto w = weight.data();
  std::vector<T> out(static_cast<std::size_t>(g.batch * Co * P));
  parallel_for(g.batch, [&](Index n) {
    const T* xn = x.data() + n * g.in_ch * g.in_plane();
    MapMat<T> o(out.data() + n * Co * P, Co, P);
    ConstMapMat<T> wm(w.data(), Co, K);
    if (direct) {
      o.noalias() = wm * ConstMapMat<T>(xn, K, P);
      return;
    }
    const Index rows = g.out[0] * g.out[1], step = tile_rows<T>(g);
    std::unique_ptr<T[]> col(new T[static_cast<std::size_t>(K * step * g.out[2])]);
    for (Index r0 = 0; r0 < rows; r0 += step) {
      const Index r1 = std::min(rows, r0 + step), cols = (r1 - r0) * g.out[2];
      im2col(xn, g, r0, r1, col.get());
      o.middleCols(r0 * g.out[2], cols).noalias() = wm * ConstMapMat<T>(col.get(), K, cols);
    }
  });

  return make_op<T>(std::move(out_shape), std::move(out), {input, weight},
                    [input, weight, g, direct](std::span<const T> gout) mutable {
                      const Index K = g.patch(), P = g.out_plane(), Co = g.out_ch;
                      const auto x = input.data();
                      const auto w = weight.data();
                      const bool need_x = input.requires_grad();
                      const bool need_w = weight.requires_grad();
                      std::vector<std::vector<T>> partial_w(static_cast<std::size_t>(need_w ? g.batch : 0));
                      T* gx = need_x ? input.mutable_grad().data() : nullptr;
                      parallel_for(g.batch, [&](Index n) {
                        ConstMapMat<T> go(gout.data() + n * Co * P, Co, P);
                        ConstMapMat<T> wm(w.data(), Co, K);
                        const T* xn = x.data() + n * g.in_ch * g.in_plane();
                        T* gxn = need_x ? gx + n * g.in_ch * g.in_plane() : nullptr;
                        RowMatrix<T> gw_n;
                        if (need_w) gw_n.setZero(Co, K);
                        if (direct) {
                          if (need_w) gw_n.noalias() = go * ConstMapMat<T>(xn, K, P).transpose();
                          if (need_x) MapMat<T>(gxn, K, P).noalias() += wm.transpose() * go;
                        } else {
                          const Index rows = g.out[0] * g.out[1], step = tile_rows<T>(g);
                          std::unique_ptr<T[]> col(new T[static_cast<std::size_t>(K * step * g.out[2])]);
                          for (Index r0 = 0; r0 < rows; r0 += step) {
                            const Index r1 = std::min(rows, r0 + step), cols = (r1 - r0) * g.out[2];
                            const auto go_tile = go.middleCols(r0 * g.out[2], cols);
                            if (need_w) {
                              im2col(xn, g, r0, r1, col.get());
                              gw_n.noalias() += go_tile * ConstMapMat<T>(col.get(), K, cols).transpose();
                            }
                            if (need_x) {
                              MapMat<T>(col.get(), K, cols).noalias() = wm.transpose() * go_tile;
                              col2im(col.get(), g, r0, r1, gxn);
                            }
                          }
                        }
                        if (need_w) partial_w[static_cast<std::size_t>(n)].assign(gw_n.data(), gw_n.data() + Co * K);
                      });
                      if (need_w) {
                        auto gw = weight.mutable_grad();
                        for (const auto& pw : partial_w)
                          for (std::size_t i = 0; i < pw.size(); ++i) gw[i] += pw[i];
                      }
                    });
}

void check_dense(const Shape& in, const Shape& w, std::size_t rank, const char* op) {
  if (in.size() != rank + 2 || w.size() != rank + 2) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank + 2) +
                     " input and weight, got " + to_string(in) + " and " + to_string(w));
  }
  if (in[1] != w[1]) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(in[1]) +
                     " channels but weight expects " + std::to_string(w[1]) + " (input " +
                     to_string(in) + ", weight " + to_string(w) + ")");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, ConvOptions opt) {
  check_dense(input.shape(), weight.shape(), 2, "conv2d");
  Geometry g;
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.out_ch = weight.dim(0);
  g.in = {1, input.dim(2), input.dim(3)};
  g.kernel = {1, weight.dim(2), weight.dim(3)};
  g.stride = {1, opt.stride, opt.stride};
  g.dilation = {1, opt.dilation, opt.dilation};
  g.padding = {0, opt.padding, opt.padding};
  g.out = {1, conv_output_extent(g.in[1], g.kernel[1], opt), conv_output_extent(g.in[2], g.kernel[2], opt)};
  return conv_volumetric(input, weight, g, Shape{g.batch, g.out_ch, g.out[1], g.out[2]});
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, ConvOptions opt) {
  check_dense(input.shape(), weight.shape(), 3, "conv3d");
  Geometry g;
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.out_ch = weight.dim(0);
  for (int a = 0; a < 3; ++a) {
    g.in[a] = input.dim(static_cast<std::size_t>(a) + 2);
    g.kernel[a] = weight.dim(static_cast<std::size_t>(a) + 2);
    g.stride[a] = opt.stride;
    g.dilation[a] = opt.dilation;
    g.padding[a] = opt.padding;
    g.out[a] = conv_output_extent(g.in[a], g.kernel[a], opt);
  }
  return conv_volumetric(input, weight, g, Shape{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]});
}

template <typename T>
BasicTensor<T> pointwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight) {
  if (weight.ndim() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1) {
    throw ShapeError("pointwise_conv2d: weight must be [Cout,Cin,1,1], got " + to_string(weight.shape()));
  }
  return conv2d(input, weight, ConvOptions{});
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, ConvOptions opt) {
  if (input.ndim() != 4 || weight.ndim() != 4 || weight.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: expected [N,C,H,W] input and [C,1,kh,kw] weight, got " +
                     to_string(input.shape()) + " and " + to_string(weight.shape()));
  }
  if (weight.dim(0) != input.dim(1)) {
    throw ShapeError("depthwise_conv2d: weight has " + std::to_string(weight.dim(0)) +
                     " channels, input has " + std::to_string(input.dim(1)));
  }
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const Index kh = weight.dim(2), kw = weight.dim(3);
  const Index Ho = conv_output_extent(H, kh, opt), Wo = conv_output_extent(W, kw, opt);
  const Index s = opt.stride, d = opt.dilation, p = opt.padding;
  const auto x = input.data();
  const auto w = weight.data();
  std::vector<T> out(static_cast<std::size_t>(N * C * Ho * Wo), T(0));
  parallel_for(N * C, [&](Index nc) {
    const Index c = nc % C;
    const T* src = x.data() + nc * H * W;
    const T* k = w.data() + c * kh * kw;
    T* dst = out.data() + nc * Ho * Wo;
    for (Index ky = 0; ky < kh; ++ky)
      for (Index kx = 0; kx < kw; ++kx) {
        const T wv = k[ky * kw + kx];
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= H) continue;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * s - p + kx * d;
            if (ix >= 0 && ix < W) dst[oy * Wo + ox] += wv * src[iy * W + ix];
          }
        }
      }
  });
  return make_op<T>(Shape{N, C, Ho, Wo}, std::move(out), {input, weight},
                    [input, weight, N, C, H, W, kh, kw, Ho, Wo, s, d, p](std::span<const T> g) mutable {
                      const auto x = input.data();
                      const auto w = weight.data();
                      const bool need_x = input.requires_grad();
                      const bool need_w = weight.requires_grad();
                      T* gx = need_x ? input.mutable_grad().data() : nullptr;
                      std::vector<T> partial(static_cast<std::size_t>(need_w ? N * C * kh * kw : 0), T(0));
                      parallel_for(N * C, [&](Index nc) {
                        const Index c = nc % C;
                        const T* src = x.data() + nc * H * W;
                        const T* go = g.data() + nc * Ho * Wo;
                        for (Index ky = 0; ky < kh; ++ky)
                          for (Index kx = 0; kx < kw; ++kx) {
                            const T wv = w[static_cast<std::size_t>(c * kh * kw + ky * kw + kx)];
                            T acc = 0;
                            for (Index oy = 0; oy < Ho; ++oy) {
                              const Index iy = oy * s - p + ky * d;
                              if (iy < 0 || iy >= H) continue;
                              for (Index ox = 0; ox < Wo; ++ox) {
                                const Index ix = ox * s - p + kx * d;
                                if (ix < 0 || ix >= W) continue;
                                const T gv = go[oy * Wo + ox];
                                acc += gv * src[iy * W + ix];
                                if (need_x) gx[nc * H * W + iy * W + ix] += gv * wv;
                              }
                            }
                            if (need_w) partial[static_cast<std::size_t>(nc * kh * kw + ky * kw + kx)] = acc;
                          }
                      });
                      if (need_w) {
                        auto gw = weight.mutable_grad();
                        for (Index n = 0; n < N; ++n)
                          for (Index i = 0; i < C * kh * kw; ++i)
                            gw[static_cast<std::size_t>(i)] += partial[static_cast<std::size_t>(n * C * kh * kw + i)];
                      }
                    });
}

#define AMNET_INSTANTIATE_CONV(T)                                                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, ConvOptions);    \
  template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&, ConvOptions);    \
  template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           ConvOptions);                                        \
  template BasicTensor<T> pointwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&);

AMNET_INSTANTIATE_CONV(float)
AMNET_INSTANTIATE_CONV(double)

}  // namespace amnet
