#include "gasca/classifier.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gasca/ops.hpp"

namespace gasca {

namespace {

std::size_t flat_size(const std::vector<std::unique_ptr<Layer>>& encoders) {
  if (encoders.empty()) throw ConfigError("classifier needs at least one encoder layer");
  return shape_size(encoders.back()->output_shape());
}

}  // namespace

EmotionClassifier::EmotionClassifier(std::vector<std::unique_ptr<Layer>> enc, std::size_t classes, Rng& rng)
    : encoders(std::move(enc)) {
  if (classes < 2) throw ConfigError("classifier needs at least 2 classes");
  head = std::make_unique<Dense>(flat_size(encoders), classes, &rng);
}

EmotionClassifier::EmotionClassifier(std::vector<std::unique_ptr<Layer>> enc, std::unique_ptr<Dense> h)
    : encoders(std::move(enc)), head(std::move(h)) {
  if (!head || head->input_shape()[0] != flat_size(encoders))
    throw DimensionError("classifier head does not match the encoder output size");
}

EmotionClassifier::EmotionClassifier(const EmotionClassifier& o)
    : encoders(clone_layers(o.encoders)), head(std::make_unique<Dense>(*o.head)) {}

EmotionClassifier& EmotionClassifier::operator=(const EmotionClassifier& o) {
  if (this != &o) {
    encoders = clone_layers(o.encoders);
    head = std::make_unique<Dense>(*o.head);
  }
  return *this;
}

ad::Var EmotionClassifier::encode(ad::Tape& tape, ad::Var x) {
  for (auto& l : encoders) x = l->forward(tape, x);
  return x;
}

ad::Var EmotionClassifier::logits(ad::Tape& tape, ad::Var x) { return head->forward(tape, encode(tape, x)); }

ad::Var EmotionClassifier::forward(ad::Tape& tape, ad::Var x) { return ad::softmax(logits(tape, x)); }

Tensor EmotionClassifier::predict_proba(const Tensor& images, std::size_t batch) {
  return gasca::predict(*this, images, batch);
}

std::vector<std::size_t> EmotionClassifier::predict(const Tensor& images, std::size_t batch) {
  const Tensor p = predict_proba(images, batch);
  const std::size_t n = p.dim(0), c = p.dim(1);
  std::vector<std::size_t> out(n);
  const auto d = p.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = d.subspan(i * c, c);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<ad::Parameter*> EmotionClassifier::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : encoders)
    for (ad::Parameter* p : l->parameters()) out.push_back(p);
  for (ad::Parameter* p : head->parameters()) out.push_back(p);
  return out;
}

EmotionClassifier from_encoder(const GeneratorStack& stack, std::size_t classes, Rng& rng) {
  return EmotionClassifier(clone_layers(stack.encoders), classes, rng);
}

EmotionClassifier random_classifier(const GeneratorStack& stack, std::size_t classes, Rng& rng) {
  std::vector<std::unique_ptr<Layer>> fresh;
  for (const auto& l : stack.encoders) {
    std::unique_ptr<Layer> z = make_layer(l->descriptor());
    for (ad::Parameter* p : z->parameters()) {
      if (p->name == "bias" || p->name == "shift_bias") continue;
      const Shape& s = p->value.shape();
      std::size_t fan_in = 1, fan_out = 1;
      if (s.size() == 4) {
        fan_in = s[1] * s[2] * s[3];
        fan_out = s[0] * s[2] * s[3];
      } else if (s.size() == 2) {
        fan_in = s[1];
        fan_out = s[0];
      }
      p->value = init_glorot(s, fan_in, fan_out, rng);
    }
    fresh.push_back(std::move(z));
  }
  return EmotionClassifier(std::move(fresh), classes, rng);
}

std::vector<ClassifierEpoch> fine_tune_classifier(EmotionClassifier& clf, const LabeledData& train,
                                                  const ClassifierConfig& cfg, const LabeledData* heldout) {
  std::vector<ClassifierEpoch> out;
  if (cfg.epochs == 0) return out;
  if (train.size() == 0) throw ContractError("fine_tune_classifier: empty training set");
  if (train.images.empty() || train.images.dim(0) != train.size())
    throw DimensionError("fine_tune_classifier: image/label count mismatch");
  for (std::size_t l : train.labels)
    if (l >= clf.classes())
      throw ContractError("fine_tune_classifier: label " + std::to_string(l) + " >= class count " +
                          std::to_string(clf.classes()));
  if (cfg.batch_size == 0) throw ConfigError("fine_tune_classifier: batch size must be positive");
  std::vector<ad::Parameter*> params = clf.parameters();
  AdamState opt(params, cfg.lr);
  const std::size_t n = train.size();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::vector<std::size_t> order = epoch_order(n, cfg.seed, e);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      ad::Tape t;
      ad::Var l = detail::guarded("classifier", [&] {
        return ad::cross_entropy(clf.forward(t, t.constant(gather_rows(train.images, idx))), labels);
      });
      loss += l.value().item();
      t.backward(l, params);
      opt.step();
      detail::require_finite_params(clf, "classifier");
      ++batches;
    }
    ClassifierEpoch m{e + 1, loss / static_cast<double>(batches), 0.0};
    if (heldout && heldout->size() > 0) m.heldout_accuracy = evaluate(clf, *heldout).accuracy();
    out.push_back(m);
  }
  return out;
}

std::size_t epochs_to_accuracy(const std::vector<ClassifierEpoch>& history, double threshold) {
  for (const ClassifierEpoch& e : history)
    if (e.heldout_accuracy >= threshold) return e.epoch;
  return 0;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= n_ || predicted >= n_) throw ContractError("confusion matrix: class index out of range");
  ++counts_[truth * n_ + predicted];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t j = 0; j < n_; ++j) s += count(truth, j);
  return s;
}

double ConfusionMatrix::percent(std::size_t truth, std::size_t predicted) const {
  const std::size_t r = row_total(truth);
  return r == 0 ? 0.0 : 100.0 * static_cast<double>(count(truth, predicted)) / static_cast<double>(r);
}

double ConfusionMatrix::accuracy() const {
  const std::size_t t = total();
  if (t == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t i = 0; i < n_; ++i) diag += count(i, i);
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& names) const {
  if (names.size() != n_) throw ContractError("confusion matrix: need one name per class");
  std::ostringstream os;
  os << "truth\\predicted";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < n_; ++i) {
    os << names[i];
    for (std::size_t j = 0; j < n_; ++j) os << ',' << count(i, j);
    os << '\n';
  }
  os << std::fixed << std::setprecision(3);
  for (std::size_t i = 0; i < n_; ++i) {
    os << names[i] << " %";
    for (std::size_t j = 0; j < n_; ++j) os << ',' << percent(i, j);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix evaluate(EmotionClassifier& clf, const LabeledData& data) {
  if (data.size() == 0) throw ContractError("evaluate: empty set");
  ConfusionMatrix cm(clf.classes());
  const std::vector<std::size_t> pred = clf.predict(data.images);
  for (std::size_t i = 0; i < data.size(); ++i) cm.add(data.labels[i], pred[i]);
  return cm;
}

}  // namespace gasca
