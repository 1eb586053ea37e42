#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Thrown on any shape or argument contract violation inside the library.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Non-leaf nodes carry a backward closure that reads `grad` and pushes
  // contributions into the parents' grads.
  std::function<void(std::span<const T>)> backward;
  std::vector<std::shared_ptr<Node>> parents;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// True while operations record the autograd graph (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major N-d array with reverse-mode autodiff. Copies are shallow:
/// two handles to the same tensor see the same data and gradient.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const;
  std::size_t ndim() const { return node_->shape.size(); }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros when nothing has been accumulated yet.
  std::span<const T> grad() const;
  std::span<T> mutable_grad() const { return node_->grad_buffer(); }
  void zero_grad();

  T item() const;
  T at(std::initializer_list<Index> idx) const;
  Index offset(std::initializer_list<Index> idx) const;

  /// Fresh leaf holding a copy of the data, cut from any graph.
  BasicTensor detach() const;
  BasicTensor clone() const { return detach(); }

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; intermediate gradients are released after use.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;

  template <typename U>
  friend BasicTensor<U> make_op(Shape, std::vector<U>, std::vector<BasicTensor<U>>,
                                std::function<void(std::span<const U>)>);
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Builds the result of a differentiable operation. `backward` receives
/// dL/dout and must accumulate into the mutable_grad() of every input that
/// requires_grad(). The closure is only kept when grad mode is on and at
/// least one input requires grad.
template <typename T>
BasicTensor<T> make_op(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                       std::function<void(std::span<const T>)> backward);

}  // namespace amnet
