#pragma once

// Run configuration and the glue between sample pools and the training
// modules.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gasca/classifier.hpp"
#include "gasca/data.hpp"
#include "gasca/stacking.hpp"

namespace gasca {

struct RunConfig {
  Mode mode = Mode::Gasca2;
  std::size_t stages = 3;
  std::uint64_t seed = 1;
  std::size_t image_size = 32;
  std::size_t identities = 100;
  std::size_t classes = 3;
  std::size_t gain_copies = 19;
  std::vector<int> poses{kPoseGrid.begin(), kPoseGrid.end()};
  double train_fraction = 0.7;
  std::size_t threads = 0;

  std::vector<StageSpec> layers{
      {LayerKind::ConvMLP, 8, 5, 100, 0},
      {LayerKind::ConvMLP, 8, 3, 100, 0},
      {LayerKind::ConvMLP, 8, 3, 100, 0},
      {LayerKind::HalfConv, 8, 3, 0, 2},
  };
  std::vector<double> g_lr{0.1, 0.3, 0.5, 0.7, 0.75};
  std::vector<double> d_lr{0.01, 0.03, 0.05, 0.07};
  double d_momentum = 0.9;
  std::vector<std::size_t> d_channels{8, 16};
  AdversarialLoss adversarial_loss = AdversarialLoss::Abs;
  bool literal_multi_update = false;

  std::size_t pretrain_epochs = 100;
  std::size_t finetune_epochs = 20;
  std::size_t d_finetune_epochs = 20;
  std::size_t classifier_epochs = 10;
  std::size_t batch_size = 16;
  double finetune_lr = 0.001;
  double classifier_lr = 0.01;

  bool plots = false;
  std::filesystem::path out = "run";

  /// ConfigError naming the offending field.
  void validate() const;
};

/// Applies one "key = value" setting. ConfigError on an unknown key or a
/// malformed value.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// Parses a key=value file body; '#' starts a comment.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Canonical key=value rendering, parseable by parse_config.
std::string config_to_string(const RunConfig& config);

DatasetConfig dataset_config(const RunConfig& config);
GanglwConfig ganglw_config(const RunConfig& config);

/// Images of `pairs` stacked into aligned (N, 1, H, W) input/target tensors.
PairedData materialize(const SamplePool& pool, const std::vector<TrainingPair>& pairs);
/// Stage k pairs: poses {0, +-15, ..., +-15k} paired k steps toward frontal.
StageData stage_data(const SamplePool& pool, std::size_t stage, Mode mode);

/// Every sample of one split, labeled with its expression.
LabeledData labeled_split(const SamplePool& pool, Split split);

struct PoseError {
  int pose = 0;
  std::size_t samples = 0;
  double model_mae = 0.0;     // MAE(G(x_phi), x_frontal)
  double baseline_mae = 0.0;  // MAE(x_phi, x_frontal)
};

/// Per-pose validation error of the full generator against the frontal
/// target of each sample, for the given poses.
std::vector<PoseError> pose_errors(GeneratorStack& generator, const SamplePool& pool, Mode mode,
                                   const std::vector<int>& poses);

}  // namespace gasca
