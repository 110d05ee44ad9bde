#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "td3net/tensor.hpp"

namespace td3 {

// Reverse-mode tape. Nodes are appended in execution order, so creation
// order is already a topological order for the backward sweep. A tape is
// confined to one logical thread and can be replayed backward exactly once.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape<S>&)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool grad_alloc = false;
    bool needs_grad = false;
    BackwardFn backward;
    std::string label;
  };

  int leaf(Tensor<S> v, bool requires_grad, std::string label) {
    require_finite(v, label);
    Node n;
    n.value = std::move(v);
    n.needs_grad = requires_grad;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Emit a result node; attach its backward rule afterwards with
  // set_backward (the rule usually needs the returned id).
  int emit(Tensor<S> v, const std::vector<int>& parents, std::string label) {
    require_finite(v, label);
    Node n;
    n.value = std::move(v);
    for (int p : parents)
      if (node(p).needs_grad) n.needs_grad = true;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int id, BackwardFn fn) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad) n.backward = std::move(fn);
  }

  const Tensor<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const std::string& label(int id) const { return nodes_[static_cast<std::size_t>(id)].label; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Accumulation buffer for a node's gradient, allocated on first touch.
  Tensor<S>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) {
      n.grad = Tensor<S>::zeros(n.value.shape);
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool grad_touched(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_alloc; }

  // Gradient of `id`; zeros when the node never influenced the loss.
  Tensor<S> grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) return Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  void backward(int loss_id) {
    if (backward_done_)
      throw UsageError("backward already invoked on this tape");
    backward_done_ = true;
    const Node& loss = nodes_[static_cast<std::size_t>(loss_id)];
    if (loss.value.numel() != 1)
      throw UsageError("backward expects a scalar loss, got shape " + shape_str(loss.value.shape));
    grad_buffer(loss_id).data[0] = S(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !n.backward || !n.grad_alloc) continue;
      require_finite(n.grad, "gradient of " + n.label);
      n.backward(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace td3
