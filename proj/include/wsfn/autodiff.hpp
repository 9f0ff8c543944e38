// Reverse-mode differentiation over Tensor values.
//
// A Var is a handle to a node of a dynamically built tape. Nodes hold an
// immutable value, a gradient buffer and a closure that pushes the node's
// adjoint to its parents. Nodes whose inputs need no gradient record nothing.
#pragma once

#include <memory>
#include <unordered_set>
#include <vector>

#include "wsfn/tensor.hpp"

namespace wsfn {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor<T> v) { return Var(std::move(v), false); }
  static Var leaf(Tensor<T> v) { return Var(std::move(v), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Adjoint accumulated by backward(); zeros when the node was never reached.
  Tensor<T> grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return Tensor<T>(node_->value.shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds a result node; parents and the closure are kept only when some
/// parent takes part in differentiation.
template <class T, class Fn>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> parents, Fn&& backward) {
  Var<T> out(std::move(value), false);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    Node<T>* n = out.node();
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::forward<Fn>(backward);
  }
  return out;
}

template <class T, class Fn>
Var<T> make_result_n(Tensor<T> value, const std::vector<Var<T>>& parents, Fn&& backward) {
  Var<T> out(std::move(value), false);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    Node<T>* n = out.node();
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::forward<Fn>(backward);
  }
  return out;
}

/// Runs reverse accumulation from a scalar root. Every reachable node that
/// requires a gradient is visited once, in reverse topological order.
template <class T>
void backward(const Var<T>& root) {
  if (root.size() != 1)
    throw ShapeError("backward() needs a scalar root, got shape " + to_string(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

/// Drops the tape below `v` so intermediate nodes can be freed.
template <class T>
void release_graph(const Var<T>& root) {
  std::vector<Node<T>*> stack{root.node()};
  std::unordered_set<Node<T>*> seen;
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (auto& p : n->parents) stack.push_back(p.get());
    if (!n->parents.empty()) {
      // keep leaves' grads; intermediates lose their closure
      n->backward_fn = nullptr;
    }
  }
  for (Node<T>* n : seen) n->parents.clear();
}

}  // namespace wsfn
