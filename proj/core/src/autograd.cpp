#include "crossdepth/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace crossdepth {

namespace {
std::atomic<std::int64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->is_leaf = true;
  node_->id = g_next_node_id.fetch_add(1);
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

void Var::zero_grad() {
  if (node_ && node_->grad.defined()) node_->grad.zero();
}

Var Var::detach() const {
  Var v(node_->value, /*requires_grad=*/false);
  return v;
}

void Var::backward() const {
  if (!node_) throw std::logic_error("backward() on empty Var");
  if (node_->value.numel() != 1)
    throw std::logic_error("backward() requires a scalar, got " + node_->value.shape_str());

  // Collect reachable nodes (iterative DFS), then replay in descending
  // creation id: parents always precede children, so this is topological.
  std::vector<Node*> reachable;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    reachable.push_back(n);
    for (auto& p : n->parents) {
      if (p && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  node_->grad_buffer().fill(1.0);
  for (Node* n : reachable) {
    if (!n->backward_fn || !n->requires_grad) continue;
    if (!n->grad.defined()) continue;  // no gradient reached this node
    n->backward_fn(*n);
  }
}

Var make_op_node(Tensor value, std::vector<Var> parents,
                 std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->id = g_next_node_id.fetch_add(1);
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) needs = true;
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var::from_node(std::move(node));
}

}  // namespace crossdepth
