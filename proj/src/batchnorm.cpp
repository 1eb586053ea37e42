#include "amnet/batchnorm.hpp"

#include <cmath>

namespace amnet {

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training,
                          BatchNormOptions opt) {
  if (x.ndim() < 2) throw ShapeError("batch_norm expects [N,C,...], got " + to_string(x.shape()));
  const Index N = x.dim(0), C = x.dim(1);
  const Index S = N * C == 0 ? 0 : x.numel() / (N * C);
  for (const BasicTensor<T>* t : std::initializer_list<const BasicTensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != C) throw ShapeError("batch_norm: per-channel tensor size mismatch for " + to_string(x.shape()));
  }
  const Index M = N * S;
  if (training && M == 0) throw ShapeError("batch_norm: empty batch");

  const auto xd = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  const T eps = static_cast<T>(opt.eps);
  std::vector<T> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));

  if (training) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    const T mom = static_cast<T>(opt.momentum);
    for (Index c = 0; c < C; ++c) {
      T s = 0;
      for (Index n = 0; n < N; ++n) {
        const T* p = xd.data() + (n * C + c) * S;
        for (Index i = 0; i < S; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(M);
      T v = 0;
      for (Index n = 0; n < N; ++n) {
        const T* p = xd.data() + (n * C + c) * S;
        for (Index i = 0; i < S; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const T var = v / static_cast<T>(M);
      const T unbiased = M > 1 ? v / static_cast<T>(M - 1) : var;
      const auto k = static_cast<std::size_t>(c);
      mean[k] = mu;
      inv_std[k] = T(1) / std::sqrt(var + eps);
      rm[k] = (T(1) - mom) * rm[k] + mom * mu;
      rv[k] = (T(1) - mom) * rv[k] + mom * unbiased;
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (Index c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      mean[k] = rm[k];
      inv_std[k] = T(1) / std::sqrt(rv[k] + eps);
    }
  }

  std::vector<T> xhat(xd.size());
  std::vector<T> out(xd.size());
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      const Index base = (n * C + c) * S;
      for (Index i = 0; i < S; ++i) {
        const auto j = static_cast<std::size_t>(base + i);
        xhat[j] = (xd[j] - mean[k]) * inv_std[k];
        out[j] = gm[k] * xhat[j] + bt[k];
      }
    }

  return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, S, M,
                     training](std::span<const T> g) mutable {
                      const auto gm = gamma.data();
                      std::vector<T> sum_g(static_cast<std::size_t>(C), T(0));
                      std::vector<T> sum_gx(static_cast<std::size_t>(C), T(0));
                      for (Index n = 0; n < N; ++n)
                        for (Index c = 0; c < C; ++c) {
                          const Index base = (n * C + c) * S;
                          T a = 0, b = 0;
                          for (Index i = 0; i < S; ++i) {
                            const auto j = static_cast<std::size_t>(base + i);
                            a += g[j];
                            b += g[j] * xhat[j];
                          }
                          sum_g[static_cast<std::size_t>(c)] += a;
                          sum_gx[static_cast<std::size_t>(c)] += b;
                        }
                      if (beta.requires_grad()) {
                        auto gb = beta.mutable_grad();
                        for (Index c = 0; c < C; ++c) gb[static_cast<std::size_t>(c)] += sum_g[static_cast<std::size_t>(c)];
                      }
                      if (gamma.requires_grad()) {
                        auto gg = gamma.mutable_grad();
                        for (Index c = 0; c < C; ++c) gg[static_cast<std::size_t>(c)] += sum_gx[static_cast<std::size_t>(c)];
                      }
                      if (!x.requires_grad()) return;
                      auto gx = x.mutable_grad();
                      const T invM = M > 0 ? T(1) / static_cast<T>(M) : T(0);
                      for (Index n = 0; n < N; ++n)
                        for (Index c = 0; c < C; ++c) {
                          const auto k = static_cast<std::size_t>(c);
                          const T scale = gm[k] * inv_std[k];
                          const T mg = sum_g[k] * invM;
                          const T mgx = sum_gx[k] * invM;
                          const Index base = (n * C + c) * S;
                          for (Index i = 0; i < S; ++i) {
                            const auto j = static_cast<std::size_t>(base + i);
                            gx[j] += training ? scale * (g[j] - mg - xhat[j] * mgx) : scale * g[j];
                          }
                        }
                    });
}

template BasicTensor<float> batch_norm(const BasicTensor<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                       BasicTensor<float>&, BasicTensor<float>&, bool, BatchNormOptions);
template BasicTensor<double> batch_norm(const BasicTensor<double>&, const BasicTensor<double>&,
                                        const BasicTensor<double>&, BasicTensor<double>&, BasicTensor<double>&, bool,
                                        BatchNormOptions);

}  // namespace amnet
