#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "amnet/ops.hpp"
#include "amnet/random.hpp"
#include "amnet/tensor.hpp"

namespace amnet::test {

inline Tensor64 random64(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = false) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64(std::move(shape), std::move(v), grad);
}

inline Tensor random32(Shape shape, Rng& rng, float lo = -1, float hi = 1) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

/// sum(y * w) for fixed pseudo-random weights w, so every element of y
/// reaches the scalar with a distinct coefficient.
inline Tensor64 contract(const Tensor64& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, random64(y.shape(), rng)));
}

/// Largest relative error between the analytic gradients of `inputs` and
/// central differences of the scalar `f`.
inline double jacobian_error(const std::function<Tensor64()>& f, std::vector<Tensor64> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  f().backward();
  double worst = 0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double orig = t.data()[i];
      double fp = 0, fm = 0;
      {
        NoGradGuard g;
        t.data()[i] = orig + h;
        fp = f().item();
        t.data()[i] = orig - h;
        fm = f().item();
      }
      t.data()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3}));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("amnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace amnet::test
