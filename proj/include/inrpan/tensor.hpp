#pragma once

// Dense float tensor with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Ops executed while gradient
// recording is enabled and any input requires a gradient append a node that
// remembers its parents and a closure propagating its gradient into them.
// The tape is rebuilt on every forward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace inrpan {

using Shape = std::vector<std::size_t>;

/// Dimension or layout mismatch between operands.
class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value appeared in a forward pass or a loss.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Vectorized kernels pick code paths from operand addresses; a fixed
// alignment keeps results bit-identical between runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

}  // namespace detail

using Buffer = std::vector<float, detail::AlignedAllocator<float>>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Buffer& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// True while ops record onto the tape.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for its lifetime (inference, input preparation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Buffer data(shape_numel(shape), 0.0f);
    return from_buffer(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    Buffer data(shape_numel(shape), value);
    return from_buffer(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from_data(Shape shape, const std::vector<float>& data,
                          bool requires_grad = false) {
    return from_buffer(std::move(shape), Buffer(data.begin(), data.end()), requires_grad);
  }

  static Tensor from_buffer(Shape shape, Buffer data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) +
                       " elements but data has " + std::to_string(data.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const float> data() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<float> mutable_data() { return node_->value; }
  std::vector<float> to_vector() const { return {node_->value.begin(), node_->value.end()}; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const float> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

  float item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  /// Leaf copy of the values with no tape history.
  Tensor detach() const { return from_buffer(shape(), node_->value, false); }

  /// Independent leaf copy that keeps the requires_grad flag.
  Tensor clone() const {
    return from_buffer(shape(), node_->value, node_->requires_grad);
  }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void check_finite(std::span<const float> values, const char* op) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

namespace detail {

/// Wraps the output of an op, recording it on the tape when needed.
inline Tensor make_result(const char* op, Shape shape, Buffer value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  check_finite(value, op);
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& node = out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (auto& in : inputs) node.parents.push_back(in.node_ptr());
  node.backward = std::move(backward);
  return out;
}

/// Parent grad buffer, or nullptr when that parent takes no gradient.
inline float* parent_grad(Node& self, std::size_t i) {
  Node& parent = *self.parents[i];
  if (!parent.requires_grad) return nullptr;
  return parent.ensure_grad().data();
}

}  // namespace detail

/// Populates gradients of every tracked tensor reachable from `loss`.
/// Leaf gradients accumulate across calls; intermediate ones are recomputed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (node->backward) node->grad.assign(node->value.size(), 0.0f);
  }
  loss.node().ensure_grad()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace inrpan
