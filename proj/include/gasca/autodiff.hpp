#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every op applied during one forward pass. Values recorded
// on the tape are never mutated; Parameter values are copied in when bound.
// backward() replays the recorded adjoints in reverse order, touching only
// nodes that lie on a path between the loss and a requested parameter (or
// requested input), so binding a model that is not being optimized costs no
// weight-gradient work and leaves that model's gradients untouched.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gasca/tensor.hpp"

namespace gasca::ad {

/// A trainable tensor with its gradient slot.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adjoint callback for one node: reads upstream(node) and accumulates into
  /// the gradients of whichever inputs needs() reports.
  using BackwardFn = std::function<void(Tape&, std::size_t node)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Computes d(loss)/d(param) into every listed Parameter::grad (zeroed
  /// first, so parameters not reached by the loss end at exactly zero), and
  /// d(loss)/d(input) for each listed input, readable through grad().
  void backward(Var loss, std::span<Parameter* const> params, std::span<const Var> inputs = {});

  const Tensor& value(std::size_t node) const { return nodes_[node].value; }
  /// Adjoint of a node from the last backward(); zeros if never reached.
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Op-implementer interface.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  bool needs(std::size_t node) const { return needed_[node]; }
  const Tensor& upstream(std::size_t node) const { return grads_[node]; }
  /// Gradient buffer of `node`, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t node);
  const std::vector<std::size_t>& inputs(std::size_t node) const { return nodes_[node].inputs; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> needed_;
};

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h per element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace gasca::ad
