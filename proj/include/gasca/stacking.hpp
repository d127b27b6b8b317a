#pragma once

// Gradual greedy layer-wise construction of the generator and discriminator
// stacks, with whole-stack fine-tuning after each stacking step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "gasca/adversarial.hpp"

namespace gasca {

/// Encoder layer of one stacking stage.
struct StageSpec {
  LayerKind kind = LayerKind::ConvMLP;
  std::size_t channels = 8;
  std::size_t kernel = 3;       // square for ConvMLP; k x k for HalfConv too
  std::size_t units = 100;      // ConvMLP only
  std::size_t pad = 2;          // HalfConv only
};

std::unique_ptr<Layer> make_encoder(const StageSpec& spec, const Shape& in_shape, Rng* rng);

/// Encoders applied first to last, then decoders applied first to last; the
/// newest stage's decoder sits at the front of `decoders`.
class GeneratorStack {
 public:
  GeneratorStack() = default;
  GeneratorStack(const GeneratorStack& o);
  GeneratorStack& operator=(const GeneratorStack& o);
  GeneratorStack(GeneratorStack&&) noexcept = default;
  GeneratorStack& operator=(GeneratorStack&&) noexcept = default;

  /// Appends the stage encoder and prepends its decoder. DimensionError
  /// unless the encoder consumes the current latent shape.
  void push(ShallowAE stage);
  std::size_t depth() const { return encoders.size(); }

  ad::Var forward(ad::Tape& tape, ad::Var x);
  /// First `levels` encoders only.
  ad::Var encode(ad::Tape& tape, ad::Var x, std::size_t levels);
  ad::Var encode(ad::Tape& tape, ad::Var x) { return encode(tape, x, depth()); }
  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> encoder_parameters();

  Shape input_shape() const;
  /// Per-sample shape after `levels` encoders.
  Shape latent_shape(std::size_t levels) const;

  std::vector<std::unique_ptr<Layer>> encoders;
  std::vector<std::unique_ptr<Layer>> decoders;
};

/// Batched encoding of inputs and targets through the first `levels`
/// encoders. ConfigError on a shape mismatch.
PairedData encode_dataset(GeneratorStack& stack, std::size_t levels, const PairedData& data, std::size_t batch = 64);
Tensor encode_tensor(GeneratorStack& stack, std::size_t levels, const Tensor& x, std::size_t batch = 64);

/// Stage discriminators' feature layers, each reading the generator's latent
/// code at its own depth, concatenated into one sigmoid head.
class DiscriminatorStack {
 public:
  struct Level {
    std::size_t depth = 0;  // generator encoders applied before this level
    Sequential features;    // Conv2D layers, ReLU after each
  };

  DiscriminatorStack() = default;
  DiscriminatorStack(const DiscriminatorStack& o);
  DiscriminatorStack& operator=(const DiscriminatorStack& o);
  DiscriminatorStack(DiscriminatorStack&&) noexcept = default;
  DiscriminatorStack& operator=(DiscriminatorStack&&) noexcept = default;

  /// Adds the feature layers of `d` reading latent depth `depth`. The first
  /// level keeps d's head; later levels replace the head with a fresh one
  /// over all concatenated features.
  void push(Discriminator d, std::size_t depth, Rng& rng);
  std::size_t size() const { return levels.size(); }

  /// (N, 1) probabilities for raw images, routed through the (frozen)
  /// encoders of `generator`.
  ad::Var forward(ad::Tape& tape, GeneratorStack& generator, ad::Var x);
  std::vector<ad::Parameter*> parameters();

  std::vector<Level> levels;
  std::unique_ptr<Dense> head;
};

struct FineTuneConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 0.001;
  double momentum = 0.9;  // discriminator only
  std::uint64_t seed = 1;
  AdversarialLoss loss = AdversarialLoss::Abs;  // discriminator only
};

struct FineTuneEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;  // generator only
};

/// Minibatch Adam on MAE of the whole generator stack. epochs == 0 is a no-op.
std::vector<FineTuneEpoch> fine_tune(GeneratorStack& stack, const PairedData& train, const PairedData& validation,
                                     const FineTuneConfig& config);

/// Nesterov SGD on the real-vs-reconstruction task: each `fakes` row labeled
/// 0, each `reals` row labeled 1, presented as aligned pairs.
std::vector<FineTuneEpoch> fine_tune_discriminator(DiscriminatorStack& d, GeneratorStack& g, const Tensor& fakes,
                                                   const Tensor& reals, const FineTuneConfig& config);

struct GanglwConfig {
  std::vector<StageSpec> stages;
  std::vector<double> g_lr{0.001};  // per stage; the last entry repeats
  std::vector<double> d_lr{0.01};
  double d_momentum = 0.9;
  std::vector<std::size_t> d_channels{8, 16};
  std::size_t pretrain_epochs = 100;
  std::size_t finetune_epochs = 20;
  std::size_t d_finetune_epochs = 20;
  std::size_t batch_size = 16;
  double finetune_lr = 0.001;
  std::uint64_t seed = 1;
  StepOptions step;
};

/// Raw-pixel pairs of one stage.
struct StageData {
  PairedData train;
  PairedData validation;
};

struct StageReport {
  std::size_t stage = 0;
  std::vector<EpochMetrics> pretrain;
  std::vector<FineTuneEpoch> finetune;
  std::vector<FineTuneEpoch> d_finetune;
  double val_mae_before = 0.0;  // stacked composition before fine-tuning
  double val_mae_after = 0.0;
};

struct GanglwState {
  GeneratorStack generator;
  DiscriminatorStack discriminator;
  std::size_t completed = 0;
};

using StageCallback = std::function<void(const StageReport&, const GanglwState&)>;

/// Runs stages state.completed + 1 .. config.stages.size(). `data(k)` yields
/// the raw pairs of stage k (1-based). Every random draw of stage k depends
/// only on (config.seed, k), so resuming from a saved state reproduces an
/// uninterrupted run.
GanglwState ganglw_train(const std::function<StageData(std::size_t)>& data, const GanglwConfig& config,
                         GanglwState state = {}, const StageCallback& on_stage = {});

/// Seed of one purpose within one stage.
std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage, std::uint64_t purpose);

}  // namespace gasca
