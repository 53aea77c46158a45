#pragma once

#include "../tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

namespace cinediff::nn {

template <typename Real>
struct Node
{
  Tensor<Real> value;
  Tensor<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Tensor<Real> const &)> backward;

  void accumulate(Tensor<Real> const &g)
  {
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Handle to a value in a dynamically built computation graph. Copies share the node.
/// Graph edges are only recorded when some input requires a gradient, so inference builds
/// no graph at all.
template <typename Real>
class Var
{
public:
  Var() = default;
  explicit Var(Tensor<Real> value, bool requires_grad = false)
    : node_(std::make_shared<Node<Real>>())
  {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  Tensor<Real> const &value() const { return node_->value; }
  Tensor<Real> &mutable_value() { return node_->value; }
  Shape const &shape() const { return node_->value.shape(); }
  Tensor<Real> const &grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() { node_->grad = Tensor<Real>(); }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  bool defined() const { return static_cast<bool>(node_); }

  std::shared_ptr<Node<Real>> const &node() const { return node_; }

private:
  std::shared_ptr<Node<Real>> node_;
};

/// Wraps a freshly computed value. `make_backward` is only invoked (and the parents only retained)
/// when at least one parent requires a gradient.
template <typename Real, typename MakeBackward>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> const &parents, MakeBackward &&make_backward)
{
  bool needs = false;
  for (auto const &p : parents) { needs = needs || p.requires_grad(); }
  Var<Real> out(std::move(value), needs);
  if (needs) {
    auto &n = *out.node();
    for (auto const &p : parents) { n.parents.push_back(p.node()); }
    n.backward = make_backward();
  }
  return out;
}

/// Reverse-mode sweep from `root` (seeded with ones, or `seed` when given). Gradients accumulate
/// on every node that requires one; interior gradients are released afterwards.
template <typename Real>
void backward(Var<Real> const &root, Tensor<Real> seed = {})
{
  if (!root.requires_grad()) { return; }
  std::vector<Node<Real> *> order;
  std::unordered_set<Node<Real> *> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<Real> *, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto &[n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<Real> *p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) { stack.push_back({p, 0}); }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(seed.empty() ? Tensor<Real>(root.shape(), Real(1)) : seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real> *n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(n->grad);
      n->grad = Tensor<Real>();
    }
  }
}

} // namespace cinediff::nn
