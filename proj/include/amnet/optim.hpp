#pragma once

#include <vector>

#include "amnet/nn.hpp"

namespace amnet {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over the trainable parameters of a store.
/// Frozen parameters are skipped; missing gradients count as zero.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamOptions opt);

  void step();
  void set_lr(double lr);
  double lr() const { return opt_.lr; }
  long steps() const { return step_; }
  /// Per-parameter learning-rate multiplier, applied to names with the prefix.
  void set_lr_scale(const std::string& prefix, double factor);

 private:
  ParameterStore<T>& store_;
  AdamOptions opt_;
  long step_ = 0;
  std::vector<std::vector<T>> m_, v_;
  std::vector<double> lr_scale_;
};

}  // namespace amnet
