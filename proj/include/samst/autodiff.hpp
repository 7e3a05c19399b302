#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "samst/tensor.hpp"

namespace samst {

template <std::floating_point T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad.fill(T(0)); }
};

template <std::floating_point T>
class Tape;

// Handle to a value recorded on a tape.
template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return tape->value(*this).shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

// Straight-line reverse-mode recorder. Nodes are appended in execution order,
// so the node list is already topologically sorted; backward() walks it once
// in reverse. A tape created with grad disabled records values only.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr, nullptr, "constant"});
    return Var<T>{this, nodes_.size() - 1};
  }

  // Leaf bound to a parameter. Gradients land in param.grad on backward().
  // Non-trainable parameters enter as constants.
  Var<T> param(Parameter<T>& p) {
    const bool rg = grad_enabled_ && p.trainable;
    nodes_.push_back(Node{p.value, {}, {}, rg, rg ? &p : nullptr, nullptr, "param"});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
    bool rg = false;
    if (grad_enabled_) {
      for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(inputs) : std::vector<std::size_t>{},
                          rg, nullptr, rg ? std::move(fn) : BackwardFn{}, op});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  // Cotangent of node `id`, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  const Tensor<T>* grad_if_any(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? nullptr : &n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
    if (value(loss).size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
    }
    if (!requires_grad(loss)) return;
    grad(loss.id).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.fn) n.fn(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    bool requires_grad;
    Parameter<T>* param;
    BackwardFn fn;
    const char* op;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace samst
