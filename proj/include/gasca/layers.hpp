#pragma once

// Parameterized transforms. Every layer knows its per-sample input shape and
// consumes batched inputs (N, ...) on a Tape.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string_view>
#include <vector>

#include "gasca/autodiff.hpp"
#include "gasca/tensor.hpp"

namespace gasca {

using Rng = std::mt19937_64;

/// Zero-mean Gaussian samples with variance 2 / (fan_in + fan_out).
Tensor init_glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Row-wise softmax of plain (N, C) logits, outside any tape.
Tensor softmax(const Tensor& logits);

enum class LayerKind : std::uint8_t { Conv2D = 1, ConvMLP = 2, HalfConv = 3, Deconv2D = 4, Dense = 5 };

std::string_view layer_kind_name(LayerKind kind);

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  /// Per-sample input shape, e.g. (C, H, W).
  const Shape& input_shape() const { return in_shape_; }
  virtual Shape output_shape() const = 0;

  /// Forward pass on a batch (N, input_shape...).
  virtual ad::Var forward(ad::Tape& tape, ad::Var x) = 0;

  virtual std::vector<ad::Parameter*> parameters() = 0;
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// Architecture numbers sufficient to rebuild the layer (see make_layer).
  virtual std::vector<double> descriptor() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  explicit Layer(Shape in_shape) : in_shape_(std::move(in_shape)) {}
  Layer(const Layer&) = default;
  Layer& operator=(const Layer&) = default;

  /// Throws DimensionError unless x is (N, input_shape...).
  void check_input(const ad::Var& x) const;

  Shape in_shape_;
};

/// Rebuild a zero-initialized layer from descriptor(); ConfigError if invalid.
std::unique_ptr<Layer> make_layer(const std::vector<double>& descriptor);

/// Valid convolution, stride 1, no activation.
class Conv2D final : public Layer {
 public:
  Conv2D(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, Rng* rng = nullptr);

  LayerKind kind() const override { return LayerKind::Conv2D; }
  Shape output_shape() const override;
  ad::Var forward(ad::Tape& tape, ad::Var x) override;
  std::vector<ad::Parameter*> parameters() override { return {&kernel, &bias}; }
  std::vector<double> descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2D>(*this); }

  ad::Parameter kernel;  // (out_ch, in_ch, k_h, k_w)
  ad::Parameter bias;    // (out_ch)
};

/// Convolution followed by a fully connected "shifting" map shared across
/// every output channel, then ReLU. Each conv output plane (H_c x W_c) is
/// flattened, mapped through the same W (U x H_c*W_c) and bias, and reshaped
/// to a u_h x u_w plane with u_h * u_w = U.
class ConvMLP final : public Layer {
 public:
  ConvMLP(Shape in_shape, std::size_t out_ch, std::size_t kernel_size, std::size_t units, Rng* rng = nullptr);

  LayerKind kind() const override { return LayerKind::ConvMLP; }
  Shape output_shape() const override;
  ad::Var forward(ad::Tape& tape, ad::Var x) override;
  std::vector<ad::Parameter*> parameters() override { return {&kernel, &bias, &shift_weight, &shift_bias}; }
  std::vector<double> descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvMLP>(*this); }

  std::size_t conv_h() const { return in_shape_[1] - k_ + 1; }
  std::size_t conv_w() const { return in_shape_[2] - k_ + 1; }
  std::size_t units() const { return units_; }
  std::size_t plane_h() const { return plane_h_; }
  std::size_t plane_w() const { return plane_w_; }
  std::size_t out_channels() const { return out_ch_; }

  /// Shifting weights actually stored (one W for all channels).
  std::size_t shared_shift_weights() const { return units_ * conv_h() * conv_w(); }
  /// Shifting weights a per-channel (unshared) variant would need.
  std::size_t unshared_shift_weights() const { return out_ch_ * shared_shift_weights(); }

  /// Replace W and its bias, e.g. with hand-built values. ConfigError unless
  /// W is (U, H_c*W_c) and the bias has U entries.
  void set_shift(Tensor weight, Tensor bias);

  ad::Parameter kernel;        // (out_ch, in_ch, k, k)
  ad::Parameter bias;          // (out_ch)
  ad::Parameter shift_weight;  // (U, H_c * W_c)
  ad::Parameter shift_bias;    // (U)

 private:
  std::size_t out_ch_, k_, units_, plane_h_, plane_w_;
};

/// Most-square factorization u_h x u_w of `units` with u_h <= u_w.
std::pair<std::size_t, std::size_t> square_factorization(std::size_t units);

/// Convolution over the left half of the input (columns [0, W/2)) with
/// `pad` implicit zero columns on its right edge, ReLU, then each plane
/// mirrored about the vertical axis to full width.
class HalfConv final : public Layer {
 public:
  HalfConv(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, std::size_t pad,
           Rng* rng = nullptr);

  LayerKind kind() const override { return LayerKind::HalfConv; }
  Shape output_shape() const override;
  ad::Var forward(ad::Tape& tape, ad::Var x) override;
  std::vector<ad::Parameter*> parameters() override { return {&kernel, &bias}; }
  std::vector<double> descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<HalfConv>(*this); }

  std::size_t pad() const { return pad_; }
  std::size_t half_width() const { return in_shape_[2] / 2; }
  std::size_t half_out_width() const { return half_width() + pad_ - k_w_ + 1; }

  ad::Parameter kernel;  // (out_ch, in_ch, k_h, k_w)
  ad::Parameter bias;    // (out_ch)

 private:
  std::size_t out_ch_, k_h_, k_w_, pad_;
};

/// Transposed valid convolution: spatial dims grow by kernel - 1.
class Deconv2D final : public Layer {
 public:
  Deconv2D(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, Rng* rng = nullptr);

  LayerKind kind() const override { return LayerKind::Deconv2D; }
  Shape output_shape() const override;
  ad::Var forward(ad::Tape& tape, ad::Var x) override;
  std::vector<ad::Parameter*> parameters() override { return {&kernel, &bias}; }
  std::vector<double> descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Deconv2D>(*this); }

  ad::Parameter kernel;  // (in_ch, out_ch, k_h, k_w)
  ad::Parameter bias;    // (out_ch)
};

/// Affine map on flattened inputs: any (N, ...) input is flattened first.
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Rng* rng = nullptr);

  LayerKind kind() const override { return LayerKind::Dense; }
  Shape output_shape() const override { return {out_}; }
  ad::Var forward(ad::Tape& tape, ad::Var x) override;
  std::vector<ad::Parameter*> parameters() override { return {&weight, &bias}; }
  std::vector<double> descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  ad::Parameter weight;  // (out, in)
  ad::Parameter bias;    // (out)

 private:
  std::size_t out_;
};

/// Deep copy of a layer list.
std::vector<std::unique_ptr<Layer>> clone_layers(const std::vector<std::unique_ptr<Layer>>& layers);

}  // namespace gasca
