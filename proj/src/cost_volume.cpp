#include "amnet/cost_volume.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "amnet/ops.hpp"
#include "amnet/piecewise.hpp"

namespace amnet {

const char* to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::Concat: return "concat";
    case VolumeKind::Distance: return "distance";
    case VolumeKind::Correlation: return "correlation";
    case VolumeKind::Ecv: return "ecv";
  }
  return "?";
}

namespace fault_injection {
namespace {
std::atomic<bool> g_flip{false};
}
void set_distance_sign_flip(bool enabled) { g_flip = enabled; }
bool distance_sign_flip() { return g_flip; }
}  // namespace fault_injection

Index feature_levels(Index d_max, int stride) {
  if (d_max < 0 || stride < 1) throw std::invalid_argument("feature_levels: d_max >= 0 and stride >= 1 required");
  return d_max / stride;
}

namespace {

struct FeatureDims {
  Index n, c, h, w;
};

FeatureDims check_pair(const Shape& l, const Shape& r, Index d_lev, const char* op) {
  if (l.size() != 4) throw ShapeError(std::string(op) + ": features must be [N,C,H,W], got " + to_string(l));
  if (l != r) throw ShapeError(std::string(op) + ": left/right feature shapes differ: " + to_string(l) + " vs " + to_string(r));
  if (d_lev < 0) throw std::invalid_argument(std::string(op) + ": negative disparity level count");
  return {l[0], l[1], l[2], l[3]};
}

inline std::size_t at(Index i) { return static_cast<std::size_t>(i); }

}  // namespace

template <typename T>
ShiftedFeatures<T> shift_align(const BasicTensor<T>& features, Index d) {
  if (features.ndim() != 4) throw ShapeError("shift_align: features must be [N,C,H,W], got " + to_string(features.shape()));
  if (d < 0) throw std::invalid_argument("shift_align: disparity " + std::to_string(d) + " out of range");
  const Index P = features.dim(0) * features.dim(1) * features.dim(2), W = features.dim(3);
  const auto src = features.data();
  std::vector<T> out(src.size(), T(0));
  for (Index p = 0; p < P; ++p)
    for (Index x = d; x < W; ++x) out[at(p * W + x)] = src[at(p * W + x - d)];
  std::vector<std::uint8_t> valid(at(W), 0);
  for (Index x = d; x < W; ++x) valid[at(x)] = 1;
  auto shifted = make_op<T>(features.shape(), std::move(out), {features},
                            [features, P, W, d](std::span<const T> g) mutable {
                              auto dst = features.mutable_grad();
                              for (Index p = 0; p < P; ++p)
                                for (Index x = d; x < W; ++x) dst[at(p * W + x - d)] += g[at(p * W + x)];
                            });
  return {shifted, std::move(valid)};
}

template <typename T>
CostVolume<T> concat_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev) {
  const auto [N, C, H, W] = check_pair(left.shape(), right.shape(), d_lev, "concat_volume");
  const Index L = d_lev + 1, HW = H * W;
  const auto l = left.data();
  const auto r = right.data();
  std::vector<T> out(at(N * 2 * C * L * HW), T(0));
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const T* lp = l.data() + (n * C + c) * HW;
      const T* rp = r.data() + (n * C + c) * HW;
      for (Index d = 0; d < L; ++d) {
        T* ol = out.data() + ((n * 2 * C + c) * L + d) * HW;
        T* orr = out.data() + ((n * 2 * C + C + c) * L + d) * HW;
        std::copy(lp, lp + HW, ol);
        for (Index y = 0; y < H; ++y)
          for (Index x = d; x < W; ++x) orr[y * W + x] = rp[y * W + x - d];
      }
    }
  auto data = make_op<T>(Shape{N, 2 * C, L, H, W}, std::move(out), {left, right},
                         [left, right, N, C, H, W, L](std::span<const T> g) mutable {
                           const Index HW = H * W;
                           if (left.requires_grad()) {
                             auto gl = left.mutable_grad();
                             for (Index n = 0; n < N; ++n)
                               for (Index c = 0; c < C; ++c) {
                                 T* dst = gl.data() + (n * C + c) * HW;
                                 for (Index d = 0; d < L; ++d) {
                                   const T* src = g.data() + ((n * 2 * C + c) * L + d) * HW;
                                   for (Index i = 0; i < HW; ++i) dst[i] += src[i];
                                 }
                               }
                           }
                           if (right.requires_grad()) {
                             auto gr = right.mutable_grad();
                             for (Index n = 0; n < N; ++n)
                               for (Index c = 0; c < C; ++c) {
                                 T* dst = gr.data() + (n * C + c) * HW;
                                 for (Index d = 0; d < L; ++d) {
                                   const T* src = g.data() + ((n * 2 * C + C + c) * L + d) * HW;
                                   for (Index y = 0; y < H; ++y)
                                     for (Index x = d; x < W; ++x) dst[y * W + x - d] += src[y * W + x];
                                 }
                               }
                           }
                         });
  return {data, VolumeKind::Concat, d_lev};
}

template <typename T>
CostVolume<T> distance_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev) {
  const auto [N, C, H, W] = check_pair(left.shape(), right.shape(), d_lev, "distance_volume");
  const Index L = d_lev + 1, HW = H * W;
  const T sign = fault_injection::distance_sign_flip() ? T(-1) : T(1);
  const auto l = left.data();
  const auto r = right.data();
  std::vector<T> out(at(N * C * L * HW));
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const T* lp = l.data() + (n * C + c) * HW;
      const T* rp = r.data() + (n * C + c) * HW;
      for (Index d = 0; d < L; ++d) {
        T* o = out.data() + ((n * C + c) * L + d) * HW;
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            const T rv = x >= d ? rp[y * W + x - d] : T(0);
            o[y * W + x] = lp[y * W + x] - rv;
          }
      }
    }
  if (piecewise::active()) {
    std::vector<std::uint8_t> negative(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) negative[i] = out[i] < T(0);
    piecewise::resolve(negative);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sign * (negative[i] ? -out[i] : out[i]);
  } else {
    for (auto& v : out) v = sign * std::abs(v);
  }
  auto data = make_op<T>(Shape{N, C, L, H, W}, std::move(out), {left, right},
                         [left, right, N, C, H, W, L, sign](std::span<const T> g) mutable {
                           const Index HW = H * W;
                           const auto l = left.data();
                           const auto r = right.data();
                           T* gl = left.requires_grad() ? left.mutable_grad().data() : nullptr;
                           T* gr = right.requires_grad() ? right.mutable_grad().data() : nullptr;
                           for (Index n = 0; n < N; ++n)
                             for (Index c = 0; c < C; ++c) {
                               const Index base = (n * C + c) * HW;
                               for (Index d = 0; d < L; ++d) {
                                 const T* go = g.data() + ((n * C + c) * L + d) * HW;
                                 for (Index y = 0; y < H; ++y)
                                   for (Index x = 0; x < W; ++x) {
                                     const T rv = x >= d ? r[at(base + y * W + x - d)] : T(0);
                                     const T diff = l[at(base + y * W + x)] - rv;
                                     const T s = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
                                     const T gv = sign * s * go[y * W + x];
                                     if (gl) gl[base + y * W + x] += gv;
                                     if (gr && x >= d) gr[base + y * W + x - d] -= gv;
                                   }
                               }
                             }
                         });
  return {data, VolumeKind::Distance, d_lev};
}

template <typename T>
CostVolume<T> correlation_volume(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev, int t) {
  const auto [N, C, H, W] = check_pair(left.shape(), right.shape(), d_lev, "correlation_volume");
  if (t < 0) throw std::invalid_argument("correlation_volume: t must be >= 0");
  if (2 * t + 1 > H || 2 * t + 1 > W) {
    throw std::invalid_argument("correlation_volume: patch of size " + std::to_string(2 * t + 1) +
                                " exceeds the " + std::to_string(H) + "x" + std::to_string(W) + " feature map");
  }
  const Index L = d_lev + 1, HW = H * W;
  const auto l = left.data();
  const auto r = right.data();
  std::vector<T> out(at(N * C * L * HW), T(0));
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const T* lp = l.data() + (n * C + c) * HW;
      const T* rp = r.data() + (n * C + c) * HW;
      for (Index d = 0; d < L; ++d) {
        T* o = out.data() + ((n * C + c) * L + d) * HW;
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            T acc = 0;
            for (Index oy = -t; oy <= t; ++oy) {
              const Index yy = y + oy;
              if (yy < 0 || yy >= H) continue;
              for (Index ox = -t; ox <= t; ++ox) {
                const Index xx = x + ox;
                if (xx < 0 || xx >= W || xx < d) continue;
                acc += lp[yy * W + xx] * rp[yy * W + xx - d];
              }
            }
            o[y * W + x] = acc;
          }
      }
    }
  auto data = make_op<T>(Shape{N, C, L, H, W}, std::move(out), {left, right},
                         [left, right, N, C, H, W, L, t](std::span<const T> g) mutable {
                           const Index HW = H * W;
                           const auto l = left.data();
                           const auto r = right.data();
                           T* gl = left.requires_grad() ? left.mutable_grad().data() : nullptr;
                           T* gr = right.requires_grad() ? right.mutable_grad().data() : nullptr;
                           for (Index n = 0; n < N; ++n)
                             for (Index c = 0; c < C; ++c) {
                               const Index base = (n * C + c) * HW;
                               for (Index d = 0; d < L; ++d) {
                                 const T* go = g.data() + ((n * C + c) * L + d) * HW;
                                 for (Index y = 0; y < H; ++y)
                                   for (Index x = 0; x < W; ++x) {
                                     const T gv = go[y * W + x];
                                     for (Index oy = -t; oy <= t; ++oy) {
                                       const Index yy = y + oy;
                                       if (yy < 0 || yy >= H) continue;
                                       for (Index ox = -t; ox <= t; ++ox) {
                                         const Index xx = x + ox;
                                         if (xx < 0 || xx >= W || xx < d) continue;
                                         const Index li = base + yy * W + xx, ri = base + yy * W + xx - d;
                                         if (gl) gl[li] += gv * r[at(ri)];
                                         if (gr) gr[ri] += gv * l[at(li)];
                                       }
                                     }
                                   }
                               }
                             }
                         });
  return {data, VolumeKind::Correlation, d_lev};
}

template <typename T>
CostVolume<T> build_ecv(const BasicTensor<T>& left, const BasicTensor<T>& right, Index d_lev, int t,
                        CostVolumeParts parts) {
  if (parts.depth_factor() == 0) throw std::invalid_argument("build_ecv: no sub-volume selected");
  std::vector<BasicTensor<T>> pieces;
  VolumeKind kind = VolumeKind::Ecv;
  if (parts.concat) {
    pieces.push_back(concat_volume(left, right, d_lev).data);
    kind = VolumeKind::Concat;
  }
  if (parts.distance) {
    pieces.push_back(distance_volume(left, right, d_lev).data);
    kind = VolumeKind::Distance;
  }
  if (parts.correlation) {
    pieces.push_back(correlation_volume(left, right, d_lev, t).data);
    kind = VolumeKind::Correlation;
  }
  if (pieces.size() == 1) return {pieces.front(), kind, d_lev};
  return {concat(pieces, 1), VolumeKind::Ecv, d_lev};
}

template <typename T>
std::vector<T> volume_slice(const CostVolume<T>& volume, Index batch, Index channel, Index level) {
  const auto& s = volume.data.shape();
  if (s.size() != 5 || batch < 0 || batch >= s[0] || channel < 0 || channel >= s[1] || level < 0 || level >= s[2]) {
    throw ShapeError("volume_slice: index out of range for " + to_string(s));
  }
  const Index HW = s[3] * s[4];
  const auto src = volume.data.data();
  const auto* p = src.data() + ((batch * s[1] + channel) * s[2] + level) * HW;
  return std::vector<T>(p, p + HW);
}

#define AMNET_INSTANTIATE_CV(T)                                                                              \
  template ShiftedFeatures<T> shift_align(const BasicTensor<T>&, Index);                                     \
  template CostVolume<T> concat_volume(const BasicTensor<T>&, const BasicTensor<T>&, Index);                 \
  template CostVolume<T> distance_volume(const BasicTensor<T>&, const BasicTensor<T>&, Index);               \
  template CostVolume<T> correlation_volume(const BasicTensor<T>&, const BasicTensor<T>&, Index, int);       \
  template CostVolume<T> build_ecv(const BasicTensor<T>&, const BasicTensor<T>&, Index, int, CostVolumeParts); \
  template std::vector<T> volume_slice(const CostVolume<T>&, Index, Index, Index);

AMNET_INSTANTIATE_CV(float)
AMNET_INSTANTIATE_CV(double)

}  // namespace amnet
