#pragma once

// Dense numeric kernels behind the autodiff ops.
//
// Two implementations share one interface: `gasca::kernels` is the OpenMP
// version used by the library, `gasca::kernels::serial` is the plain nested
// loop reference kept for tests and the benchmark. Every output element is
// produced by exactly one thread with the same accumulation order as the
// serial loop, so both paths are bit-identical for any thread count.
//
// Convolutions are cross-correlations (no kernel flip) with stride 1. An
// optional zero padding on the right edge is implicit: taps that land in the
// padding are skipped rather than multiplied by zero.

#include <cstddef>
#include <cstdint>
#include <span>

namespace gasca::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_ch = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_ch = 1;
  std::size_t k_h = 1;
  std::size_t k_w = 1;
  std::size_t pad_right = 0;

  std::size_t out_h() const { return in_h - k_h + 1; }
  std::size_t out_w() const { return in_w + pad_right - k_w + 1; }
  std::size_t input_size() const { return batch * in_ch * in_h * in_w; }
  std::size_t output_size() const { return batch * out_ch * out_h() * out_w(); }
  std::size_t weight_size() const { return out_ch * in_ch * k_h * k_w; }
  /// Throws DimensionError when the kernel does not fit the (padded) input.
  void validate() const;
};

/// Multiply-accumulates executed by conv kernels since the last reset,
/// counting only taps that touch real (non-padding) input.
std::uint64_t mac_count();
void reset_mac_count();

/// Analytic count of the taps conv2d_forward executes for `g`.
std::uint64_t conv2d_forward_macs(const ConvGeometry& g);

// out = conv(in, w) + bias. `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);
// din = d(out)/d(in)^T * dout (overwrites din).
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout, std::span<const double> w,
                           std::span<double> din);
// dw = d(out)/d(w)^T * dout, dbias = sum of dout per channel (overwrite; dbias may be empty).
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in, std::span<const double> dout,
                            std::span<double> dw, std::span<double> dbias);

// c (m x n) = a (m x k) * b (k x n), overwrite.
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c);

// Row-major transpose of an (rows x cols) matrix.
void transpose(std::size_t rows, std::size_t cols, std::span<const double> a, std::span<double> out);

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout, std::span<const double> w,
                           std::span<double> din);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in, std::span<const double> dout,
                            std::span<double> dw, std::span<double> dbias);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c);

}  // namespace serial

}  // namespace gasca::kernels
