#pragma once

// Template definitions for adversarial.hpp.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gasca/ops.hpp"

namespace gasca {

namespace detail {

inline void require_finite(double v, const char* component) {
  if (!std::isfinite(v)) throw DivergenceError(component, "loss is " + std::to_string(v));
}

/// Runs `f`, renaming a NumericError raised inside as a divergence of `component`.
template <class F>
auto guarded(const char* component, F&& f) {
  try {
    return f();
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError(component, e.what());
  }
}

template <class Model>
void require_finite_params(Model& m, const char* component) {
  for (ad::Parameter* p : m.parameters())
    if (!p->value.all_finite()) throw DivergenceError(component, "parameter '" + p->name + "' is not finite");
}

template <class Generator>
LossBundle consolidated_step(Generator& G, Discriminator& D, const Tensor& inputs, const Tensor& targets,
                             AdamState& optG, NesterovState& optD, const StepOptions& o) {
  ad::Tape tape;
  ad::Var x = tape.constant(inputs);
  ad::Var xm = tape.constant(targets);
  ad::Var y = guarded("generator", [&] { return G.forward(tape, x); });
  if (y.shape() != xm.shape())
    throw DimensionError("generator output " + shape_string(y.shape()) + " does not match target " +
                         shape_string(xm.shape()));
  ad::Var lg = guarded("generator", [&] { return ad::mae(xm, y); });
  ad::Var p_real = guarded("discriminator", [&] { return D.forward(tape, xm); });
  ad::Var p_fake = guarded("discriminator", [&] { return D.forward(tape, y); });
  ad::Var l_real = adversarial_loss(o.loss, 1.0, p_real);
  ad::Var l_fake = adversarial_loss(o.loss, 0.0, p_fake);
  ad::Var l_adv = ad::add(l_real, l_fake);
  ad::Var l_mm = adversarial_loss(o.loss, 1.0, p_fake);
  ad::Var l_total = ad::add(l_mm, lg);

  LossBundle out;
  out.generator = lg.value().item();
  out.real = l_real.value().item();
  out.fake = l_fake.value().item();
  out.adversary = l_adv.value().item();
  out.minimax = l_mm.value().item();
  out.total = l_total.value().item();
  require_finite(out.generator, "generator");
  require_finite(out.adversary, "discriminator");
  require_finite(out.total, "generator");

  if (o.record_minimax_grad) {
    const ad::Var wrt[] = {y};
    tape.backward(l_mm, {}, wrt);
    out.minimax_grad = tape.grad(y);
  }
  std::vector<ad::Parameter*> gp = G.parameters();
  std::vector<ad::Parameter*> dp = D.parameters();
  tape.backward(l_total, gp);
  tape.backward(l_adv, dp);
  optG.step();
  optD.step();
  require_finite_params(G, "generator");
  require_finite_params(D, "discriminator");
  return out;
}

template <class Generator>
LossBundle literal_step(Generator& G, Discriminator& D, const Tensor& inputs, const Tensor& targets, AdamState& optG,
                        NesterovState& optD, const StepOptions& o) {
  std::vector<ad::Parameter*> gp = G.parameters();
  std::vector<ad::Parameter*> dp = D.parameters();
  LossBundle out;
  Tensor y_value;
  {
    ad::Tape t;
    ad::Var y = guarded("generator", [&] { return G.forward(t, t.constant(inputs)); });
    ad::Var lg = ad::mae(t.constant(targets), y);
    out.generator = lg.value().item();
    require_finite(out.generator, "generator");
    y_value = y.value();
    t.backward(lg, gp);
    optG.step();
  }
  {
    ad::Tape t;
    ad::Var p = guarded("discriminator", [&] { return D.forward(t, t.constant(targets)); });
    ad::Var l = adversarial_loss(o.loss, 1.0, p);
    out.real = l.value().item();
    require_finite(out.real, "discriminator");
    t.backward(l, dp);
    optD.step();
  }
  {
    ad::Tape t;
    ad::Var y = t.constant(y_value);
    ad::Var p = guarded("discriminator", [&] { return D.forward(t, y); });
    out.fake = adversarial_loss(o.loss, 0.0, p).value().item();
    ad::Var l_mm = adversarial_loss(o.loss, 1.0, p);
    out.minimax = l_mm.value().item();
    out.adversary = out.real + out.fake;
    out.total = out.minimax + out.generator;
    require_finite(out.adversary, "discriminator");
    if (o.record_minimax_grad) {
      const ad::Var wrt[] = {y};
      t.backward(l_mm, {}, wrt);
      out.minimax_grad = t.grad(y);
    }
  }
  {
    ad::Tape t;
    ad::Var y = guarded("generator", [&] { return G.forward(t, t.constant(inputs)); });
    ad::Var l_mm = adversarial_loss(o.loss, 1.0, D.forward(t, y));
    t.backward(l_mm, gp);
    optG.step();
  }
  Tensor y2;
  {
    ad::Tape t;
    ad::Var y = guarded("generator", [&] { return G.forward(t, t.constant(inputs)); });
    ad::Var l = ad::add(adversarial_loss(o.loss, 1.0, D.forward(t, y)), ad::mae(t.constant(targets), y));
    require_finite(l.value().item(), "generator");
    t.backward(l, gp);
    optG.step();
    y2 = y.value();
  }
  {
    ad::Tape t;
    ad::Var l = ad::add(adversarial_loss(o.loss, 1.0, D.forward(t, t.constant(targets))),
                        adversarial_loss(o.loss, 0.0, D.forward(t, t.constant(y2))));
    require_finite(l.value().item(), "discriminator");
    t.backward(l, dp);
    optD.step();
  }
  require_finite_params(G, "generator");
  require_finite_params(D, "discriminator");
  return out;
}

}  // namespace detail

template <class Generator>
LossBundle gasca_minibatch_step(Generator& generator, Discriminator& discriminator, const Tensor& inputs,
                                const Tensor& targets, AdamState& optG, NesterovState& optD,
                                const StepOptions& options) {
  if (inputs.empty() || targets.empty() || inputs.dim(0) != targets.dim(0))
    throw DimensionError("minibatch inputs " + shape_string(inputs.shape()) + " and targets " +
                         shape_string(targets.shape()) + " must share a non-empty batch dimension");
  return options.literal_multi_update
             ? detail::literal_step(generator, discriminator, inputs, targets, optG, optD, options)
             : detail::consolidated_step(generator, discriminator, inputs, targets, optG, optD, options);
}

template <class Generator>
Tensor predict(Generator& generator, const Tensor& inputs, std::size_t batch) {
  if (inputs.empty() || inputs.rank() < 2) throw DimensionError("predict: expected a batched input");
  if (batch == 0) throw ContractError("predict: batch size must be positive");
  const std::size_t n = inputs.dim(0);
  std::vector<double> out;
  Shape out_shape;
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> idx(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    ad::Tape t;
    ad::Var y = generator.forward(t, t.constant(gather_rows(inputs, idx)));
    if (out_shape.empty()) {
      out_shape = y.shape();
      out.reserve(n * (y.value().size() / idx.size()));
    }
    const auto d = y.value().data();
    out.insert(out.end(), d.begin(), d.end());
  }
  out_shape[0] = n;
  return Tensor(out_shape, std::move(out));
}

template <class Generator>
double evaluate_mae(Generator& generator, const PairedData& data, std::size_t batch) {
  if (data.size() == 0) return 0.0;
  return mae_loss(data.targets, predict(generator, data.inputs, batch));
}

}  // namespace gasca
