#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "translob/tensor.hpp"

namespace translob {

/// A learnable tensor together with its gradient accumulator.
struct Param {
  std::string id;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string name, Tensor v)
      : id(std::move(name)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  Tensor& grad() const;
  const std::vector<int>& shape() const { return value().shape; }
};

/// Execution record for reverse-mode differentiation. Ops run eagerly and
/// push a closure that accumulates input gradients from output gradients;
/// backward() replays the closures in reverse execution order, which is a
/// valid reverse topological order by construction.
///
/// Params enter the graph through watch(): the node aliases the param's
/// value and grad storage, so leaf gradients accumulate directly into the
/// param. Watching the same param twice on one tape returns the same node,
/// which is what makes weight sharing a single gradient accumulator.
///
/// Read-only passes (no backward) never write through the tape, so
/// concurrent evaluation over shared params is safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a param; gradients accumulate into p.grad.
  Var watch(Param& p) {
    auto it = watch_index_.find(&p);
    if (it != watch_index_.end()) return Var{this, it->second};
    Node n;
    n.bound = &p;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    watch_index_.emplace(&p, id);
    watched_.push_back(id);
    return Var{this, id};
  }

  /// Leaf bound to a param on a tape that will never run backward
  /// (evaluation paths). backward() is forbidden afterwards.
  Var watch_read_only(const Param& p) {
    frozen_ = true;
    return watch(const_cast<Param&>(p));
  }

  /// Differentiable source owned by the tape (model inputs in tests).
  Var input(Tensor v) { return alloc(std::move(v)); }

  /// Op output node.
  Var alloc(Tensor v) {
    Node n;
    n.value = std::move(v);
    n.grad = Tensor::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  /// Seeds d(root)/d(root) = 1 and accumulates gradients for every node and
  /// watched param. Watched param grads are zeroed first, so params that do
  /// not reach the root end with zero grad. One backward per tape.
  void backward(Var root) {
    if (frozen_) throw Error("backward on a read-only tape");
    if (ran_backward_) throw Error("backward already run on this tape");
    if (root.tape != this) throw Error("backward root belongs to another tape");
    if (value_of(root.id).numel() != 1) throw ShapeError("backward root must be a scalar");
    ran_backward_ = true;
    for (int id : watched_) nodes_[id].bound->zero_grad();
    grad_of(root.id).data[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  const Tensor& value_of(int id) const {
    const Node& n = nodes_[id];
    return n.bound ? n.bound->value : n.value;
  }

  Tensor& grad_of(int id) {
    Node& n = nodes_[id];
    return n.bound ? n.bound->grad : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Param* bound = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  std::vector<int> watched_;
  std::unordered_map<const Param*, int> watch_index_;
  bool frozen_ = false;
  bool ran_backward_ = false;
};

inline const Tensor& Var::value() const { return tape->value_of(id); }
inline Tensor& Var::grad() const { return tape->grad_of(id); }

}  // namespace translob
