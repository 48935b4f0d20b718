#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include "spuq/gradcore/tensor.hpp"

namespace spuq::grad {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;
  std::size_t size() const { return value().size(); }
};

class BackwardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Single-threaded record of primitive operations. Nodes are appended in
// evaluation order, so every node's parents precede it and a reverse sweep
// visits each node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
    return Var{this, nodes_.size() - 1};
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var param(Tensor value) { return leaf(std::move(value), true); }

  // Records an op output. The backward closure is kept only when the
  // output participates in differentiation.
  Var record(const char* op, Tensor value, bool requires_grad, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NonFiniteError(std::string(op) + ": non-finite value in output of shape " +
                           shape_str(value.shape()));
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad,
                          requires_grad ? std::move(fn) : BackwardFn{}});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
    return n.grad;
  }

  // Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0f);
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw BackwardError("backward: loss belongs to a different tape");
    const Tensor& lv = value(loss.id);
    if (lv.size() != 1) {
      throw BackwardError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    }
    if (backward_done_) throw BackwardError("backward: already called; zero_grad() first");
    backward_done_ = true;
    if (!requires_grad(loss.id)) return;
    grad_buffer(loss.id)[0] = 1.0f;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor{};
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Shape& Var::shape() const { return tape->value(id).shape(); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

}  // namespace spuq::grad
