#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "crossdepth/tensor.hpp"

namespace crossdepth {

// Reverse-mode autodiff over Tensor. Each op records a Node with a closure
// that scatters the node's gradient into its parents. backward() runs the
// closures in descending node-creation order, which is a valid topological
// order for any dynamically built graph and, crucially, makes the order of
// floating-point gradient accumulation reproducible run to run.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool is_leaf = false;
  std::int64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();  // allocates zeros on first use
};

class Var {
 public:
  Var() = default;
  // Leaf variable. requires_grad marks trainable parameters / inputs under test.
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient accumulated by the last backward(). Undefined tensor if none.
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar (numel()==1) variable.
  void backward() const;

  // Same value, cut out of the graph; gradients do not flow past it.
  Var detach() const;

  std::shared_ptr<Node> node() const { return node_; }
  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording in scope; ops produce value-only results.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Internal helper for op implementations: wires value/parents/backward into
// a fresh node, honoring grad mode and parents' requires_grad flags.
Var make_op_node(Tensor value, std::vector<Var> parents,
                 std::function<void(Node&)> backward_fn);

}  // namespace crossdepth
