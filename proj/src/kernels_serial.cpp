// Reference kernels: one output element at a time, no reordering.

#include "gasca/kernels.hpp"

#include "kernels_common.hpp"

namespace gasca::kernels::serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  detail::check_conv_buffers(g, in.size(), w.size(), bias.size(), out.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  std::uint64_t macs = 0;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_ch; ++c)
            for (std::size_t a = 0; a < g.k_h; ++a)
              for (std::size_t b = 0; b < g.k_w; ++b) {
                const std::size_t col = j + b;
                if (col >= g.in_w) continue;
                acc += in[((n * g.in_ch + c) * g.in_h + i + a) * g.in_w + col] *
                       w[((o * g.in_ch + c) * g.k_h + a) * g.k_w + b];
                ++macs;
              }
          if (!bias.empty()) acc += bias[o];
          out[((n * g.out_ch + o) * ho + i) * wo + j] = acc;
        }
  detail::add_macs(macs);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout, std::span<const double> w,
                           std::span<double> din) {
  detail::check_conv_buffers(g, din.size(), w.size(), 0, dout.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.in_ch; ++c)
      for (std::size_t y = 0; y < g.in_h; ++y)
        for (std::size_t x = 0; x < g.in_w; ++x) {
          double acc = 0.0;
          for (std::size_t o = 0; o < g.out_ch; ++o)
            for (std::size_t a = 0; a < g.k_h; ++a)
              for (std::size_t b = 0; b < g.k_w; ++b) {
                if (y < a || x < b) continue;
                const std::size_t i = y - a, j = x - b;
                if (i >= ho || j >= wo) continue;
                acc += dout[((n * g.out_ch + o) * ho + i) * wo + j] * w[((o * g.in_ch + c) * g.k_h + a) * g.k_w + b];
              }
          din[((n * g.in_ch + c) * g.in_h + y) * g.in_w + x] = acc;
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in, std::span<const double> dout,
                            std::span<double> dw, std::span<double> dbias) {
  detail::check_conv_buffers(g, in.size(), dw.size(), dbias.size(), dout.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  for (std::size_t o = 0; o < g.out_ch; ++o)
    for (std::size_t c = 0; c < g.in_ch; ++c)
      for (std::size_t a = 0; a < g.k_h; ++a)
        for (std::size_t b = 0; b < g.k_w; ++b) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t i = 0; i < ho; ++i)
              for (std::size_t j = 0; j < wo; ++j) {
                if (j + b >= g.in_w) continue;
                acc += in[((n * g.in_ch + c) * g.in_h + i + a) * g.in_w + j + b] *
                       dout[((n * g.out_ch + o) * ho + i) * wo + j];
              }
          dw[((o * g.in_ch + c) * g.k_h + a) * g.k_w + b] = acc;
        }
  if (dbias.empty()) return;
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t i = 0; i < ho * wo; ++i) acc += dout[(n * g.out_ch + o) * ho * wo + i];
    dbias[o] = acc;
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c) {
  detail::check_matmul_buffers(m, k, n, a.size(), b.size(), c.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace gasca::kernels::serial
