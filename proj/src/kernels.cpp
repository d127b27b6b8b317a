// OpenMP kernels. Each parallel loop partitions whole output planes (or
// rows) across threads; within a plane the accumulation order per element is
// the same as in kernels_serial.cpp.

#include "gasca/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <string>
#include <vector>

#include "gasca/tensor.hpp"
#include "kernels_common.hpp"

namespace gasca::kernels {

namespace {

std::atomic<std::uint64_t> g_macs{0};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

namespace detail {

void add_macs(std::uint64_t n) { g_macs.fetch_add(n, std::memory_order_relaxed); }

void check_conv_buffers(const ConvGeometry& g, std::size_t in, std::size_t w, std::size_t bias, std::size_t out) {
  g.validate();
  if (in != g.input_size() || w != g.weight_size() || out != g.output_size() || (bias != 0 && bias != g.out_ch))
    throw DimensionError("conv buffer sizes do not match geometry");
}

void check_matmul_buffers(std::size_t m, std::size_t k, std::size_t n, std::size_t a, std::size_t b, std::size_t c) {
  if (a != m * k || b != k * n || c != m * n) throw DimensionError("matmul buffer sizes do not match dimensions");
}

}  // namespace detail

void ConvGeometry::validate() const {
  if (batch == 0 || in_ch == 0 || in_h == 0 || in_w == 0 || out_ch == 0 || k_h == 0 || k_w == 0)
    throw DimensionError("conv geometry extents must be positive");
  if (k_h > in_h || k_w > in_w + pad_right)
    throw DimensionError("input " + std::to_string(in_h) + "x" + std::to_string(in_w) + " (right pad " +
                         std::to_string(pad_right) + ") is smaller than kernel " + std::to_string(k_h) + "x" +
                         std::to_string(k_w));
}

std::uint64_t mac_count() { return g_macs.load(std::memory_order_relaxed); }
void reset_mac_count() { g_macs.store(0, std::memory_order_relaxed); }

std::uint64_t conv2d_forward_macs(const ConvGeometry& g) {
  std::uint64_t cols = 0;
  for (std::size_t b = 0; b < g.k_w; ++b) cols += std::min(g.out_w(), g.in_w > b ? g.in_w - b : 0);
  return static_cast<std::uint64_t>(g.batch) * g.out_ch * g.in_ch * g.k_h * g.out_h() * cols;
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  detail::check_conv_buffers(g, in.size(), w.size(), bias.size(), out.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  const std::size_t planes = g.batch * g.out_ch;
  const std::size_t in_plane = g.in_h * g.in_w;
  const bool par = planes * ho * wo * g.in_ch * g.k_h * g.k_w > kParallelWork;

#pragma omp parallel for schedule(static) if (par)
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t n = p / g.out_ch, o = p % g.out_ch;
    double* dst = out.data() + p * ho * wo;
    std::fill(dst, dst + ho * wo, 0.0);
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      const double* src = in.data() + (n * g.in_ch + c) * in_plane;
      for (std::size_t a = 0; a < g.k_h; ++a)
        for (std::size_t b = 0; b < g.k_w; ++b) {
          const double wv = w[((o * g.in_ch + c) * g.k_h + a) * g.k_w + b];
          const std::size_t jmax = std::min(wo, g.in_w > b ? g.in_w - b : 0);
          for (std::size_t i = 0; i < ho; ++i) {
            const double* row = src + (i + a) * g.in_w + b;
            double* orow = dst + i * wo;
            for (std::size_t j = 0; j < jmax; ++j) orow[j] += row[j] * wv;
          }
        }
    }
    if (!bias.empty())
      for (std::size_t i = 0; i < ho * wo; ++i) dst[i] += bias[o];
  }
  detail::add_macs(conv2d_forward_macs(g));
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout, std::span<const double> w,
                           std::span<double> din) {
  detail::check_conv_buffers(g, din.size(), w.size(), 0, dout.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  const std::size_t planes = g.batch * g.in_ch;
  const std::size_t in_plane = g.in_h * g.in_w;
  const bool par = planes * ho * wo * g.out_ch * g.k_h * g.k_w > kParallelWork;

#pragma omp parallel for schedule(static) if (par)
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t n = p / g.in_ch, c = p % g.in_ch;
    double* dst = din.data() + p * in_plane;
    std::fill(dst, dst + in_plane, 0.0);
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const double* src = dout.data() + (n * g.out_ch + o) * ho * wo;
      for (std::size_t a = 0; a < g.k_h; ++a)
        for (std::size_t b = 0; b < g.k_w; ++b) {
          const double wv = w[((o * g.in_ch + c) * g.k_h + a) * g.k_w + b];
          const std::size_t jmax = std::min(wo, g.in_w > b ? g.in_w - b : 0);
          for (std::size_t i = 0; i < ho; ++i) {
            const double* srow = src + i * wo;
            double* drow = dst + (i + a) * g.in_w + b;
            for (std::size_t j = 0; j < jmax; ++j) drow[j] += srow[j] * wv;
          }
        }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in, std::span<const double> dout,
                            std::span<double> dw, std::span<double> dbias) {
  detail::check_conv_buffers(g, in.size(), dw.size(), dbias.size(), dout.size());
  const std::size_t ho = g.out_h(), wo = g.out_w();
  const std::size_t pairs = g.out_ch * g.in_ch;
  const std::size_t kk = g.k_h * g.k_w;
  const bool par = pairs * kk * g.batch * ho * wo > kParallelWork;

  // Per (o, c) pair, every kernel tap accumulates over (n, i, j) in order;
  // the tap loop is innermost so the update vectorizes across b.
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t o = p / g.in_ch, c = p % g.in_ch;
    double* dst = dw.data() + p * kk;
    std::fill(dst, dst + kk, 0.0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* src = in.data() + (n * g.in_ch + c) * g.in_h * g.in_w;
      const double* grad = dout.data() + (n * g.out_ch + o) * ho * wo;
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          const double gv = grad[i * wo + j];
          const std::size_t bmax = j < g.in_w ? std::min(g.k_w, g.in_w - j) : 0;
          for (std::size_t a = 0; a < g.k_h; ++a) {
            const double* row = src + (i + a) * g.in_w + j;
            double* drow = dst + a * g.k_w;
            for (std::size_t b = 0; b < bmax; ++b) drow[b] += row[b] * gv;
          }
        }
    }
  }

  if (dbias.empty()) return;
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* grad = dout.data() + (n * g.out_ch + o) * ho * wo;
      for (std::size_t i = 0; i < ho * wo; ++i) acc += grad[i];
    }
    dbias[o] = acc;
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c) {
  detail::check_matmul_buffers(m, k, n, a.size(), b.size(), c.size());
  const bool par = m * k * n > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, std::span<const double> a, std::span<double> out) {
  if (a.size() != rows * cols || out.size() != rows * cols)
    throw DimensionError("transpose buffer sizes do not match dimensions");
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
}

}  // namespace gasca::kernels
