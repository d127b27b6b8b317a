#pragma once

// Joint generator/discriminator training for one shallow autoencoder.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gasca/autodiff.hpp"
#include "gasca/layers.hpp"
#include "gasca/optim.hpp"

namespace gasca {

/// Training divergence: a loss or activation became non-finite.
struct DivergenceError : NumericError {
  DivergenceError(std::string component, const std::string& detail)
      : NumericError("training diverged in " + component + ": " + detail), component(std::move(component)) {}
  std::string component;
};

/// Layers applied in order.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<std::unique_ptr<Layer>> layers) : layers(std::move(layers)) {}
  Sequential(const Sequential& other) : layers(clone_layers(other.layers)) {}
  Sequential& operator=(const Sequential& other) {
    if (this != &other) layers = clone_layers(other.layers);
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  ad::Var forward(ad::Tape& tape, ad::Var x);
  std::vector<ad::Parameter*> parameters();

  std::vector<std::unique_ptr<Layer>> layers;
};

/// Applies each layer followed by ReLU, then flattens to (N, F).
ad::Var conv_relu_features(Sequential& layers, ad::Tape& tape, ad::Var x);

/// Inputs and targets as two aligned (N, C, H, W) tensors.
struct PairedData {
  Tensor inputs;
  Tensor targets;
  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

/// Rows `indices` of a batched tensor.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& indices);

/// One encoder layer (ConvMLP or HalfConv) and one Deconv2D decoder that
/// restores the encoder's input shape.
class ShallowAE {
 public:
  explicit ShallowAE(std::unique_ptr<Layer> encoder, Rng* rng = nullptr);
  ShallowAE(std::unique_ptr<Layer> encoder, std::unique_ptr<Layer> decoder);
  ShallowAE(const ShallowAE& other);
  ShallowAE& operator=(const ShallowAE& other);
  ShallowAE(ShallowAE&&) noexcept = default;
  ShallowAE& operator=(ShallowAE&&) noexcept = default;

  ad::Var forward(ad::Tape& tape, ad::Var x);
  std::vector<ad::Parameter*> parameters();

  std::unique_ptr<Layer> encoder;
  std::unique_ptr<Layer> decoder;
};

/// Deconv2D that maps `from` back to `to` (same channel count as `to`).
std::unique_ptr<Layer> make_restoring_decoder(const Shape& from, const Shape& to, Rng* rng);

/// Conv2D(3x3)+ReLU feature stages followed by Dense -> sigmoid.
class Discriminator {
 public:
  /// Feature stages with the given channel counts; a stage is skipped when
  /// the remaining plane is smaller than 3x3. A null rng leaves all
  /// weights at zero (constant 0.5 output).
  Discriminator(const Shape& in_shape, const std::vector<std::size_t>& channels, Rng* rng);
  Discriminator(const Discriminator& other);
  Discriminator& operator=(const Discriminator& other);
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  /// (N, 1) probabilities.
  ad::Var forward(ad::Tape& tape, ad::Var x);
  /// Flattened (N, F) output of the feature stages.
  ad::Var features(ad::Tape& tape, ad::Var x);
  std::vector<ad::Parameter*> parameters();
  std::size_t feature_size() const;

  Sequential feature_layers;  // Conv2D layers; ReLU follows each
  std::unique_ptr<Dense> head;
};

enum class AdversarialLoss { Abs, Bce };
AdversarialLoss parse_adversarial_loss(const std::string& s);

struct StepOptions {
  AdversarialLoss loss = AdversarialLoss::Abs;
  /// Apply the three generator and two discriminator updates of the literal
  /// algorithm listing instead of one Adam and one SGD step.
  bool literal_multi_update = false;
  /// Also compute the gradient of the minimax loss w.r.t. G's output.
  bool record_minimax_grad = false;
};

struct LossBundle {
  double generator = 0.0;      // L_g: MAE(x_mu, y)
  double real = 0.0;           // loss(1, D(x_mu))
  double fake = 0.0;           // loss(0, D(y))
  double adversary = 0.0;      // real + fake
  double minimax = 0.0;        // loss(1, D(y)) through frozen D
  double total = 0.0;          // minimax + generator
  Tensor minimax_grad;         // d minimax / d y when requested
};

/// Adversarial loss value(s) for a constant label.
ad::Var adversarial_loss(AdversarialLoss kind, double label, ad::Var p);

/// One joint minibatch update of (G, D). `model` may be any generator whose
/// parameters are exactly `optG`'s.
template <class Generator>
LossBundle gasca_minibatch_step(Generator& generator, Discriminator& discriminator, const Tensor& inputs,
                                const Tensor& targets, AdamState& optG, NesterovState& optD,
                                const StepOptions& options = {});

struct EpochMetrics {
  std::size_t epoch = 0;
  double generator = 0.0;
  double real = 0.0;
  double fake = 0.0;
  double minimax = 0.0;
  double adversary = 0.0;
  double val_mae = 0.0;
};

struct PairTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double g_lr = 0.001;
  double d_lr = 0.01;
  double d_momentum = 0.9;
  std::uint64_t seed = 1;
  StepOptions step;
};

/// Trains (G, D) on `train` for `epochs` epochs of seeded-shuffled
/// minibatches; records mean losses and validation MAE per epoch.
std::vector<EpochMetrics> train_pair(ShallowAE& generator, Discriminator& discriminator, const PairedData& train,
                                     const PairedData& validation, const PairTrainConfig& config);

/// Mean absolute error of generator(inputs) against targets, batched.
template <class Generator>
double evaluate_mae(Generator& generator, const PairedData& data, std::size_t batch = 64);

/// generator(inputs) for a whole batched tensor.
template <class Generator>
Tensor predict(Generator& generator, const Tensor& inputs, std::size_t batch = 64);

/// Per-epoch minibatch order: a seeded shuffle of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path);

}  // namespace gasca

#include "gasca/adversarial_impl.hpp"
