#pragma once

// Expression classifier built on a pretrained encoder list.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gasca/stacking.hpp"

namespace gasca {

struct LabeledData {
  Tensor images;  // (N, C, H, W)
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

/// Encoder list followed by one Dense layer and softmax.
class EmotionClassifier {
 public:
  EmotionClassifier(std::vector<std::unique_ptr<Layer>> encoders, std::size_t classes, Rng& rng);
  EmotionClassifier(std::vector<std::unique_ptr<Layer>> encoders, std::unique_ptr<Dense> head);
  EmotionClassifier(const EmotionClassifier& o);
  EmotionClassifier& operator=(const EmotionClassifier& o);
  EmotionClassifier(EmotionClassifier&&) noexcept = default;
  EmotionClassifier& operator=(EmotionClassifier&&) noexcept = default;

  std::size_t classes() const { return head->output_shape()[0]; }
  ad::Var encode(ad::Tape& tape, ad::Var x);
  ad::Var logits(ad::Tape& tape, ad::Var x);
  /// (N, C) softmax probabilities.
  ad::Var forward(ad::Tape& tape, ad::Var x);
  Tensor predict_proba(const Tensor& images, std::size_t batch = 64);
  std::vector<std::size_t> predict(const Tensor& images, std::size_t batch = 64);
  std::vector<ad::Parameter*> parameters();

  std::vector<std::unique_ptr<Layer>> encoders;
  std::unique_ptr<Dense> head;
};

/// Copies the stack's encoders and attaches a Glorot-initialized head.
EmotionClassifier from_encoder(const GeneratorStack& stack, std::size_t classes, Rng& rng);
/// Same architecture as from_encoder(stack, ...) with every weight redrawn.
EmotionClassifier random_classifier(const GeneratorStack& stack, std::size_t classes, Rng& rng);

struct ClassifierConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

struct ClassifierEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;  // 0 when no held-out set is given
};

/// Minibatch Adam on cross-entropy over encoders and head together.
std::vector<ClassifierEpoch> fine_tune_classifier(EmotionClassifier& clf, const LabeledData& train,
                                                  const ClassifierConfig& config,
                                                  const LabeledData* heldout = nullptr);

/// First epoch (1-based) with held-out accuracy >= threshold, or 0 if none.
std::size_t epochs_to_accuracy(const std::vector<ClassifierEpoch>& history, double threshold);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  void add(std::size_t truth, std::size_t predicted);

  std::size_t classes() const { return n_; }
  std::size_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::size_t total() const;
  std::size_t row_total(std::size_t truth) const;
  /// Row-normalized percentage; 0 for an empty row.
  double percent(std::size_t truth, std::size_t predicted) const;
  double accuracy() const;

  /// Header row "truth\predicted,<names...>", then one row of counts per class.
  std::string to_csv(const std::vector<std::string>& names) const;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix evaluate(EmotionClassifier& clf, const LabeledData& data);

}  // namespace gasca
