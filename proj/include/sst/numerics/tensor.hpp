#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sst {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}
}  // namespace detail

/// While alive, ops on this thread record no graph edges.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major n-d array handle with reverse-mode gradient support.
///
/// Copies share the underlying node (like a smart pointer); values are
/// immutable once produced by an op, only gradients accumulate. Leaves built
/// with requires_grad act as trainable parameters.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Node {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents.
    std::function<void(Node&)> backward;

    Array& grad_buffer() {
      if (grad.size() != value.size()) grad = Array::Zero(value.size());
      return grad;
    }
  };

  Tensor() = default;

  Tensor(Shape shape, Array value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (Index e : shape)
      if (e < 1) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_size(shape) != value.size())
      throw ShapeError("value length " + std::to_string(value.size()) + " does not match shape " +
                       shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Array::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar v, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Array::Constant(n, v), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return constant({1}, v, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const {
    const int r = rank();
    return node_->shape.at(static_cast<std::size_t>(axis < 0 ? axis + r : axis));
  }
  Index size() const { return node_->value.size(); }

  const Array& value() const { return node_->value; }
  /// Direct write access for optimizers and weight loading; never call on
  /// a tensor that already feeds a live graph.
  Array& mutable_value() { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value(0);
  }
  Scalar operator[](Index i) const { return node_->value(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Array::Zero(node_->value.size()); }
  void clear_grad() { node_->grad.resize(0); }

  /// Same values, no history.
  Tensor detach() const { return Tensor(shape(), value(), false); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Builds the result node of an op. `backward` is dropped when no parent
  /// needs a gradient or grad recording is disabled.
  static Tensor make_result(Shape shape, Array value,
                            std::vector<std::shared_ptr<Node>> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(value), false);
    if (detail::grad_disabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`. Leaf gradients accumulate across calls; intermediates are reset.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  using Node = typename Tensor<Scalar>::Node;
  if (loss.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (n->backward) n->grad = Tensor<Scalar>::Array::Zero(n->value.size());
  loss.node()->grad_buffer()(0) += Scalar(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->backward(*n);
      n->grad.resize(0);
    }
  }
}

}  // namespace sst
