#include "gasca/autodiff.hpp"

#include <cmath>

namespace gasca::ad {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  nodes_.push_back(Node{p.value, {}, {}, &p});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by a taped op");
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t node) {
  Tensor& g = grads_[node];
  if (g.empty()) g = Tensor(nodes_[node].value.shape());
  return g;
}

Tensor Tape::grad(Var v) const {
  if (v.tape() != this) throw ContractError("Var belongs to a different tape");
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor(nodes_[v.id()].value.shape());
}

void Tape::backward(Var loss, std::span<Parameter* const> params, std::span<const Var> inputs) {
  if (loss.tape() != this) throw ContractError("loss is not connected to this tape");
  if (nodes_[loss.id()].value.size() != 1) throw ContractError("backward() requires a scalar loss");

  for (Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
    p->zero_grad();
  }

  const std::size_t n = nodes_.size();
  needed_.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = nodes_[i];
    if (node.param) {
      for (Parameter* p : params)
        if (p == node.param) needed_[i] = true;
    }
    for (std::size_t in : node.inputs)
      if (needed_[in]) needed_[i] = true;
  }
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("input Var belongs to a different tape");
    // Inputs are leaves or interior nodes; mark them and everything downstream.
    needed_[v.id()] = true;
  }
  if (!inputs.empty())
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t in : nodes_[i].inputs)
        if (needed_[in]) needed_[i] = true;

  grads_.assign(n, Tensor());
  grads_[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!needed_[i] || grads_[i].empty()) continue;
    Node& node = nodes_[i];
    if (node.param) {
      auto& dst = node.param->grad.storage();
      const auto& src = grads_[i].storage();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    if (node.backward) node.backward(*this, i);
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("non-finite function value at element " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace gasca::ad
