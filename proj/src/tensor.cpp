#include "amnet/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace amnet {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<detail::Node<T>>()) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (amnet::numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const Index n = amnet::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                     requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Index BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(node_->shape));
  }
  return node_->shape[axis];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  if (node_->backward) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return node_->grad_buffer();
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
  }
  return node_->data[0];
}

template <typename T>
Index BasicTensor<T>::offset(std::initializer_list<Index> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw ShapeError("index rank mismatch for " + to_string(s));
  Index off = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= s[axis]) throw ShapeError("index out of range for " + to_string(s));
    off = off * s[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<Index> idx) const {
  return node_->data[static_cast<std::size_t>(offset(idx))];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (node_->data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (!n->backward) continue;
    if (!n->grad.empty()) n->backward(n->grad);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template <typename T>
BasicTensor<T> make_op(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                       std::function<void(std::span<const T>)> backward) {
  BasicTensor<T> out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.backward = std::move(backward);
  node.parents.reserve(inputs.size());
  for (auto& in : inputs) node.parents.push_back(in.node_);
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> make_op(Shape, std::vector<float>, std::vector<BasicTensor<float>>,
                                    std::function<void(std::span<const float>)>);
template BasicTensor<double> make_op(Shape, std::vector<double>, std::vector<BasicTensor<double>>,
                                     std::function<void(std::span<const double>)>);

}  // namespace amnet
