#include "gasca/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gasca::ad {

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("op applied to an unbound Var");
  if (a.tape() != b.tape()) throw ContractError("op mixes Vars from different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("op applied to an unbound Var");
  return *a.tape();
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
}

void accumulate(Tape& t, std::size_t node, std::span<const double> g) {
  auto& dst = t.grad_buffer(node).storage();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Var elementwise(ElementwiseOp op, Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool scalar_b = bv.size() == 1 && av.shape() != bv.shape();
  if (!scalar_b && av.shape() != bv.shape())
    throw DimensionError("elementwise: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = scalar_b ? bv[0] : bv[i];
    switch (op) {
      case ElementwiseOp::Add: out[i] = av[i] + y; break;
      case ElementwiseOp::Sub: out[i] = av[i] - y; break;
      case ElementwiseOp::Mul: out[i] = av[i] * y; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [op, ia, ib, scalar_b](Tape& tp, std::size_t node) {
    const Tensor& g = tp.upstream(node);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(ib);
    if (tp.needs(ia)) {
      auto& ga = tp.grad_buffer(ia).storage();
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += op == ElementwiseOp::Mul ? g[i] * (scalar_b ? y[0] : y[i]) : g[i];
    }
    if (tp.needs(ib)) {
      auto& gb = tp.grad_buffer(ib).storage();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = g[i];
        if (op == ElementwiseOp::Sub) d = -d;
        if (op == ElementwiseOp::Mul) d *= x[i];
        gb[scalar_b ? 0 : i] += d;
      }
    }
  });
}

Var add(Var a, Var b) { return elementwise(ElementwiseOp::Add, a, b); }
Var sub(Var a, Var b) { return elementwise(ElementwiseOp::Sub, a, b); }
Var mul(Var a, Var b) { return elementwise(ElementwiseOp::Mul, a, b); }

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v *= s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, s](Tape& tp, std::size_t node) {
    if (!tp.needs(ia)) return;
    const Tensor& g = tp.upstream(node);
    auto& ga = tp.grad_buffer(ia).storage();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v += s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, std::size_t node) {
    if (tp.needs(ia)) accumulate(tp, ia, tp.upstream(node).data());
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, std::size_t node) {
    if (!tp.needs(ia)) return;
    const Tensor& g = tp.upstream(node);
    const Tensor& x = tp.value(ia);
    auto& ga = tp.grad_buffer(ia).storage();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, std::size_t node) {
    if (!tp.needs(ia)) return;
    const Tensor& g = tp.upstream(node);
    const Tensor& s = tp.value(node);
    auto& ga = tp.grad_buffer(ia).storage();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(acc), {ia}, [ia](Tape& tp, std::size_t node) {
    if (!tp.needs(ia)) return;
    const double g = tp.upstream(node)[0];
    for (double& v : tp.grad_buffer(ia).storage()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, std::size_t node) {
    if (tp.needs(ia)) accumulate(tp, ia, tp.upstream(node).data());
  });
}

Var flatten(Var a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("flatten: expected rank >= 2");
  return reshape(a, Shape{s[0], a.value().size() / s[0]});
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  Tensor out(Shape{m, n});
  kernels::matmul(m, k, n, a.value().data(), b.value().data(), out.data());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t node) {
    const Tensor& g = tp.upstream(node);
    if (tp.needs(ia)) {
      std::vector<double> bt(n * k), tmp(m * k);
      kernels::transpose(k, n, tp.value(ib).data(), bt);
      kernels::matmul(m, n, k, g.data(), bt, tmp);
      accumulate(tp, ia, tmp);
    }
    if (tp.needs(ib)) {
      std::vector<double> at(k * m), tmp(k * n);
      kernels::transpose(m, k, tp.value(ia).data(), at);
      kernels::matmul(k, m, n, at, g.data(), tmp);
      accumulate(tp, ib, tmp);
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = same_tape(x, weight);
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t m = x.shape()[0], p = x.shape()[1], u = weight.shape()[0];
  if (weight.shape()[1] != p)
    throw DimensionError("linear: weight " + shape_string(weight.shape()) + " does not accept input " +
                         shape_string(x.shape()));
  const bool has_bias = bias.valid();
  if (has_bias && (bias.tape() != &t || bias.value().size() != u))
    throw DimensionError("linear: bias must have " + std::to_string(u) + " entries");

  std::vector<double> wt(p * u);
  kernels::transpose(u, p, weight.value().data(), wt);
  Tensor out(Shape{m, u});
  kernels::matmul(m, p, u, x.value().data(), wt, out.data());
  if (has_bias) {
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < u; ++j) out[i * u + j] += bv[j];
  }

  const std::size_t ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : 0;
  std::vector<std::size_t> inputs{ix, iw};
  if (has_bias) inputs.push_back(ib);
  return t.record(std::move(out), std::move(inputs), [=](Tape& tp, std::size_t node) {
    const Tensor& g = tp.upstream(node);
    if (tp.needs(ix)) {
      std::vector<double> tmp(m * p);
      kernels::matmul(m, u, p, g.data(), tp.value(iw).data(), tmp);
      accumulate(tp, ix, tmp);
    }
    if (tp.needs(iw)) {
      std::vector<double> gt(u * m), tmp(u * p);
      kernels::transpose(m, u, g.data(), gt);
      kernels::matmul(u, m, p, gt, tp.value(ix).data(), tmp);
      accumulate(tp, iw, tmp);
    }
    if (has_bias && tp.needs(ib)) {
      auto& gb = tp.grad_buffer(ib).storage();
      for (std::size_t j = 0; j < u; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += g[i * u + j];
        gb[j] += acc;
      }
    }
  });
}

Var conv2d(Var x, Var w, Var bias, std::size_t pad_right) {
  Tape& t = same_tape(x, w);
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1])
    throw DimensionError("conv2d: kernel expects " + std::to_string(ws[1]) + " input channels, got " +
                         std::to_string(xs[1]));
  kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], pad_right};
  g.validate();
  const bool has_bias = bias.valid();
  if (has_bias && (bias.tape() != &t || bias.value().size() != g.out_ch))
    throw DimensionError("conv2d: bias must have one entry per output channel");

  Tensor out(Shape{g.batch, g.out_ch, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.value().data(), w.value().data(),
                          has_bias ? bias.value().data() : std::span<const double>{}, out.data());

  const std::size_t ix = x.id(), iw = w.id(), ib = has_bias ? bias.id() : 0;
  std::vector<std::size_t> inputs{ix, iw};
  if (has_bias) inputs.push_back(ib);
  return t.record(std::move(out), std::move(inputs), [=](Tape& tp, std::size_t node) {
    const Tensor& gout = tp.upstream(node);
    if (tp.needs(ix)) {
      std::vector<double> tmp(g.input_size());
      kernels::conv2d_backward_input(g, gout.data(), tp.value(iw).data(), tmp);
      accumulate(tp, ix, tmp);
    }
    const bool need_b = has_bias && tp.needs(ib);
    if (tp.needs(iw) || need_b) {
      std::vector<double> dw(g.weight_size()), db(need_b ? g.out_ch : 0);
      kernels::conv2d_backward_weight(g, tp.value(ix).data(), gout.data(), dw, db);
      if (tp.needs(iw)) accumulate(tp, iw, dw);
      if (need_b) accumulate(tp, ib, db);
    }
  });
}

Var deconv2d(Var x, Var w, Var bias) {
  Tape& t = same_tape(x, w);
  require_rank(x, 4, "deconv2d");
  require_rank(w, 4, "deconv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[0] != xs[1])
    throw DimensionError("deconv2d: kernel expects " + std::to_string(ws[0]) + " input channels, got " +
                         std::to_string(xs[1]));
  // The equivalent forward convolution maps the deconv output back to x.
  kernels::ConvGeometry g{xs[0], ws[1], xs[2] + ws[2] - 1, xs[3] + ws[3] - 1, ws[0], ws[2], ws[3], 0};
  const bool has_bias = bias.valid();
  if (has_bias && (bias.tape() != &t || bias.value().size() != g.in_ch))
    throw DimensionError("deconv2d: bias must have one entry per output channel");

  Tensor out(Shape{g.batch, g.in_ch, g.in_h, g.in_w});
  kernels::conv2d_backward_input(g, x.value().data(), w.value().data(), out.data());
  if (has_bias) {
    const Tensor& bv = bias.value();
    const std::size_t plane = g.in_h * g.in_w;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        double* dst = out.data().data() + (n * g.in_ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bv[c];
      }
  }

  const std::size_t ix = x.id(), iw = w.id(), ib = has_bias ? bias.id() : 0;
  std::vector<std::size_t> inputs{ix, iw};
  if (has_bias) inputs.push_back(ib);
  return t.record(std::move(out), std::move(inputs), [=](Tape& tp, std::size_t node) {
    const Tensor& gout = tp.upstream(node);
    if (tp.needs(ix)) {
      std::vector<double> tmp(g.output_size());
      kernels::conv2d_forward(g, gout.data(), tp.value(iw).data(), {}, tmp);
      accumulate(tp, ix, tmp);
    }
    if (tp.needs(iw)) {
      std::vector<double> dw(g.weight_size());
      kernels::conv2d_backward_weight(g, gout.data(), tp.value(ix).data(), dw, {});
      accumulate(tp, iw, dw);
    }
    if (has_bias && tp.needs(ib)) {
      auto& gb = tp.grad_buffer(ib).storage();
      const std::size_t plane = g.in_h * g.in_w;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* src = gout.data().data() + (n * g.in_ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        }
        gb[c] += acc;
      }
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "slice_cols");
  const Shape s = x.shape();
  if (begin >= end || end > s[3]) throw DimensionError("slice_cols: invalid column range");
  const std::size_t rows = s[0] * s[1] * s[2], w = s[3], sw = end - begin;
  Tensor out(Shape{s[0], s[1], s[2], sw});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < sw; ++j) out[r * sw + j] = xv[r * w + begin + j];
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [=](Tape& tp, std::size_t node) {
    if (!tp.needs(ix)) return;
    const Tensor& g = tp.upstream(node);
    auto& gx = tp.grad_buffer(ix).storage();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < sw; ++j) gx[r * w + begin + j] += g[r * sw + j];
  });
}

Var mirror_concat(Var x) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "mirror_concat");
  const Shape s = x.shape();
  const std::size_t rows = s[0] * s[1] * s[2], w = s[3];
  Tensor out(Shape{s[0], s[1], s[2], 2 * w});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) {
      out[r * 2 * w + j] = xv[r * w + j];
      out[r * 2 * w + 2 * w - 1 - j] = xv[r * w + j];
    }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [=](Tape& tp, std::size_t node) {
    if (!tp.needs(ix)) return;
    const Tensor& g = tp.upstream(node);
    auto& gx = tp.grad_buffer(ix).storage();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * w + j] += g[r * 2 * w + j] + g[r * 2 * w + 2 * w - 1 - j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].shape()[0];
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_cols mixes tapes");
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != rows) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + off + j] = v[r * widths[k] + j];
    off += widths[k];
  }
  return t.record(std::move(out), ids, [=](Tape& tp, std::size_t node) {
    const Tensor& g = tp.upstream(node);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs(ids[k])) {
        auto& gk = tp.grad_buffer(ids[k]).storage();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + o + j];
      }
      o += widths[k];
    }
  });
}

Var softmax(Var logits) {
  Tape& t = tape_of(logits);
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  Tensor out = logits.value();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = out.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  const std::size_t il = logits.id();
  return t.record(std::move(out), {il}, [=](Tape& tp, std::size_t node) {
    if (!tp.needs(il)) return;
    const Tensor& g = tp.upstream(node);
    const Tensor& y = tp.value(node);
    auto& gl = tp.grad_buffer(il).storage();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var cross_entropy(Var probs, std::span<const std::size_t> labels) {
  Tape& t = tape_of(probs);
  require_rank(probs, 2, "cross_entropy");
  const std::size_t n = probs.shape()[0], c = probs.shape()[1];
  if (labels.size() != n) throw DimensionError("cross_entropy: one label per row required");
  constexpr double kFloor = 1e-12;
  const Tensor& p = probs.value();
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= c) throw ContractError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    acc -= std::log(std::max(p[r * c + labels[r]], kFloor));
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t ip = probs.id();
  return t.record(Tensor::scalar(acc / static_cast<double>(n)), {ip}, [=](Tape& tp, std::size_t node) {
    if (!tp.needs(ip)) return;
    const double g = tp.upstream(node)[0] / static_cast<double>(n);
    const Tensor& pv = tp.value(ip);
    auto& gp = tp.grad_buffer(ip).storage();
    for (std::size_t r = 0; r < n; ++r) {
      const double v = pv[r * c + lab[r]];
      if (v > kFloor) gp[r * c + lab[r]] -= g / v;
    }
  });
}

Var mae(Var target, Var pred) {
  Tape& t = same_tape(target, pred);
  if (target.shape() != pred.shape())
    throw DimensionError("mae: shape mismatch " + shape_string(target.shape()) + " vs " +
                         shape_string(pred.shape()));
  const Tensor& tv = target.value();
  const Tensor& pv = pred.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(tv[i] - pv[i]);
  const double count = static_cast<double>(pv.size());
  const std::size_t it = target.id(), ip = pred.id();
  return t.record(Tensor::scalar(acc / count), {it, ip}, [=](Tape& tp, std::size_t node) {
    const double g = tp.upstream(node)[0] / count;
    const Tensor& tv2 = tp.value(it);
    const Tensor& pv2 = tp.value(ip);
    if (tp.needs(ip)) {
      auto& gp = tp.grad_buffer(ip).storage();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * sign(pv2[i] - tv2[i]);
    }
    if (tp.needs(it)) {
      auto& gt = tp.grad_buffer(it).storage();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * sign(pv2[i] - tv2[i]);
    }
  });
}

Var abs_loss(double target, Var pred) {
  Tape& t = tape_of(pred);
  return mae(t.constant(Tensor(pred.shape(), target)), pred);
}

Var bce_loss(double target, Var pred) {
  Tape& t = tape_of(pred);
  constexpr double kEps = 1e-12;
  const Tensor& pv = pred.value();
  double acc = 0.0;
  for (double p : pv.data()) {
    const double q = std::clamp(p, kEps, 1.0 - kEps);
    acc -= target * std::log(q) + (1.0 - target) * std::log(1.0 - q);
  }
  const double count = static_cast<double>(pv.size());
  const std::size_t ip = pred.id();
  return t.record(Tensor::scalar(acc / count), {ip}, [=](Tape& tp, std::size_t node) {
    if (!tp.needs(ip)) return;
    const double g = tp.upstream(node)[0] / count;
    const Tensor& p = tp.value(ip);
    auto& gp = tp.grad_buffer(ip).storage();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (p[i] <= kEps || p[i] >= 1.0 - kEps) continue;
      gp[i] += g * (-target / p[i] + (1.0 - target) / (1.0 - p[i]));
    }
  });
}

}  // namespace gasca::ad
