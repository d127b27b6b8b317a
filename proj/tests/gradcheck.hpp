#pragma once

// Finite-difference gradient checks for layers and losses, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gasca/layers.hpp"
#include "gasca/ops.hpp"
#include "oracles.hpp"

namespace gradcheck {

using gasca::Tensor;
namespace ad = gasca::ad;

inline double rel_err(const Tensor& analytic, const Tensor& numeric, double floor = 1e-4) {
  return oracle::max_rel_err(analytic, numeric, floor);
}

/// Probe value sum(r * layer(x)) on a fresh tape.
inline double probe(gasca::Layer& layer, const Tensor& x, const Tensor& r) {
  ad::Tape tape;
  const Tensor& y = layer.forward(tape, tape.constant(x)).value();
  long double s = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<long double>(y[i]) * r[i];
  return static_cast<double>(s);
}

/// Worst relative error over every parameter and the input of `layer` for
/// the probe loss sum(r * layer(x)).
inline double layer_error(gasca::Layer& layer, const Tensor& x, const Tensor& r, double h = 1e-6) {
  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  ad::Var y = layer.forward(tape, xv);
  ad::Var loss = ad::sum(ad::mul(y, tape.constant(r)));
  std::vector<ad::Parameter*> params = layer.parameters();
  tape.backward(loss, params, std::span<const ad::Var>(&xv, 1));

  double worst = rel_err(tape.grad(xv), oracle::finite_diff([&](const Tensor& v) { return probe(layer, v, r); }, x, h));
  for (ad::Parameter* p : params) {
    const Tensor analytic = p->grad;
    const Tensor keep = p->value;
    const Tensor numeric = oracle::finite_diff(
        [&](const Tensor& v) {
          p->value = v;
          const double f = probe(layer, x, r);
          p->value = keep;
          return f;
        },
        keep, h);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

/// Relative error of d/dz of a scalar loss built from one input tensor.
inline double loss_error(const std::function<ad::Var(ad::Tape&, ad::Var)>& build, const Tensor& z, double h = 1e-6) {
  ad::Tape tape;
  ad::Var zv = tape.constant(z);
  ad::Var loss = build(tape, zv);
  tape.backward(loss, {}, std::span<const ad::Var>(&zv, 1));
  const Tensor numeric = oracle::finite_diff(
      [&](const Tensor& v) {
        ad::Tape t;
        return build(t, t.constant(v)).value().item();
      },
      z, h);
  return rel_err(tape.grad(zv), numeric);
}

}  // namespace gradcheck
