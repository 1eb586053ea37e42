#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "amnet/batchnorm.hpp"
#include "amnet/conv.hpp"
#include "amnet/tensor.hpp"

namespace amnet {

/// Role of a trainable tensor, used for the parameter breakdown report.
enum class ParamKind { Conv, Norm, Projection, Head };

const char* to_string(ParamKind kind);

enum class Init { FanInUniform, Zeros, Ones };

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> tensor;
  ParamKind kind = ParamKind::Conv;
  bool trainable = true;
};

template <typename T>
struct Buffer {
  std::string name;
  BasicTensor<T> tensor;
};

/// Owns every named parameter and buffer of a network. Initial values depend
/// only on (seed, name), so adding a parameter never perturbs the others.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  BasicTensor<T> create(const std::string& name, Shape shape, ParamKind kind, Init init);
  BasicTensor<T> create_buffer(const std::string& name, Shape shape, T fill);

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }

  const Parameter<T>* find(const std::string& name) const;
  /// Freeze or unfreeze every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();
  Index count() const;
  std::map<ParamKind, Index> count_by_kind() const;
  std::uint64_t seed() const { return seed_; }

 private:
  void check_unique(const std::string& name) const;

  std::uint64_t seed_;
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

/// Batch normalization layer with affine parameters and running statistics.
template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParameterStore<T>& store, const std::string& prefix, Index channels);

  BasicTensor<T> operator()(const BasicTensor<T>& x, bool training);

 private:
  BasicTensor<T> gamma_, beta_, running_mean_, running_var_;
};

/// Deterministic 64-bit mixing used for name-keyed initialization.
std::uint64_t mix_seed(std::uint64_t seed, const std::string& name);

}  // namespace amnet
