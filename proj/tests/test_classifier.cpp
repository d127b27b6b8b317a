#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "gasca/classifier.hpp"
#include "oracles.hpp"

using namespace gasca;

namespace {

GeneratorStack toy_stack(Rng& rng) {
  GeneratorStack s;
  s.push(ShallowAE(std::make_unique<ConvMLP>(Shape{1, 12, 12}, 3, 3, 16, &rng), &rng));
  s.push(ShallowAE(std::make_unique<HalfConv>(Shape{3, 4, 4}, 2, 3, 3, 2, &rng), &rng));
  return s;
}

// Class c is a bright square in one of three corners, plus noise.
LabeledData toy_labeled(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  LabeledData d{Tensor({n, 1, 12, 12}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 3;
    d.labels.push_back(c);
    const std::size_t r0 = c == 2 ? 6 : 0, c0 = c == 1 ? 6 : 0;
    for (std::size_t r = 0; r < 12; ++r)
      for (std::size_t q = 0; q < 12; ++q) {
        const bool on = r >= r0 && r < r0 + 6 && q >= c0 && q < c0 + 6;
        d.images[i * 144 + r * 12 + q] = noise(g) + (on ? 0.7 : 0.0);
      }
  }
  return d;
}

}  // namespace

TEST(Classifier, FromEncoderCopiesWeights) {
  Rng rng(1);
  GeneratorStack s = toy_stack(rng);
  Rng hr(2);
  EmotionClassifier clf = from_encoder(s, 3, hr);
  ASSERT_EQ(clf.encoders.size(), 2u);
  std::mt19937_64 g(1);
  const Tensor probe = oracle::random_tensor({4, 1, 12, 12}, g, 0.0, 1.0);
  ad::Tape t1, t2;
  EXPECT_EQ(clf.encode(t1, t1.constant(probe)).value(), s.encode(t2, t2.constant(probe)).value());
  // A copy, not a view.
  clf.encoders[0]->parameters()[0]->value[0] += 1.0;
  EXPECT_NE(clf.encoders[0]->parameters()[0]->value[0], s.encoders[0]->parameters()[0]->value[0]);
}

TEST(Classifier, HeadInputIsFinalLatentSize) {
  Rng rng(3);
  GeneratorStack s = toy_stack(rng);
  const Shape latent = s.latent_shape(2);
  EmotionClassifier clf = from_encoder(s, 3, rng);
  EXPECT_EQ(clf.head->input_shape()[0], latent[0] * latent[1] * latent[2]);
  EXPECT_EQ(clf.classes(), 3u);
  EXPECT_THROW(from_encoder(s, 1, rng), ConfigError);
}

TEST(Classifier, UntrainedHeadIsNearUniform) {
  Rng rng(4);
  GeneratorStack s = toy_stack(rng);
  EmotionClassifier clf = from_encoder(s, 3, rng);
  std::mt19937_64 g(4);
  const Tensor p = clf.predict_proba(oracle::random_tensor({100, 1, 12, 12}, g, 0.0, 1.0));
  double mean_max = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    double mx = 0.0, sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      mx = std::max(mx, p[i * 3 + c]);
      sum += p[i * 3 + c];
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
    mean_max += mx / 100.0;
  }
  EXPECT_LE(mean_max, 0.6);
}

TEST(Classifier, RandomClassifierSharesArchitectureOnly) {
  Rng rng(5);
  GeneratorStack s = toy_stack(rng);
  Rng r2(6);
  EmotionClassifier a = from_encoder(s, 3, r2), b = random_classifier(s, 3, r2);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i]->value.shape(), b.parameters()[i]->value.shape());
  EXPECT_NE(a.encoders[0]->parameters()[0]->value, b.encoders[0]->parameters()[0]->value);
}

TEST(Classifier, ZeroEpochsLeavesParameters) {
  Rng rng(7);
  GeneratorStack s = toy_stack(rng);
  EmotionClassifier clf = from_encoder(s, 3, rng);
  std::vector<Tensor> before;
  for (auto* p : clf.parameters()) before.push_back(p->value);
  ClassifierConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(fine_tune_classifier(clf, toy_labeled(9, 1), cfg).empty());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(clf.parameters()[i]->value, before[i]);
}

TEST(Classifier, ContractErrors) {
  Rng rng(8);
  GeneratorStack s = toy_stack(rng);
  EmotionClassifier clf = from_encoder(s, 3, rng);
  ClassifierConfig cfg;
  EXPECT_THROW(fine_tune_classifier(clf, LabeledData{}, cfg), ContractError);
  LabeledData bad = toy_labeled(3, 2);
  bad.labels[1] = 3;
  EXPECT_THROW(fine_tune_classifier(clf, bad, cfg), ContractError);
  EXPECT_THROW(evaluate(clf, LabeledData{}), ContractError);
}

TEST(Classifier, LearnsSeparableToyTaskDeterministically) {
  Rng rng(9);
  GeneratorStack s = toy_stack(rng);
  const LabeledData train = toy_labeled(60, 3), held = toy_labeled(30, 4);
  ClassifierConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 10;
  cfg.lr = 0.003;
  Rng ha(10), hb(10);
  EmotionClassifier a = from_encoder(s, 3, ha), b = from_encoder(s, 3, hb);
  const auto hist = fine_tune_classifier(a, train, cfg, &held);
  const auto hist_b = fine_tune_classifier(b, train, cfg, &held);
  ASSERT_EQ(hist.size(), 15u);
  for (std::size_t e = 0; e < hist.size(); ++e) EXPECT_EQ(hist[e].train_loss, hist_b[e].train_loss);
  EXPECT_LT(hist.back().train_loss, hist.front().train_loss);
  EXPECT_GE(evaluate(a, held).accuracy(), 0.9);
}

TEST(Classifier, EpochsToAccuracy) {
  std::vector<ClassifierEpoch> h{{1, 1.0, 0.5}, {2, 0.8, 0.91}, {3, 0.5, 0.95}};
  EXPECT_EQ(epochs_to_accuracy(h, 0.9), 2u);
  EXPECT_EQ(epochs_to_accuracy(h, 0.99), 0u);
}

TEST(Confusion, AccuracyMatchesRecount) {
  Rng rng(11);
  GeneratorStack s = toy_stack(rng);
  EmotionClassifier clf = from_encoder(s, 3, rng);
  const LabeledData d = toy_labeled(45, 5);
  const ConfusionMatrix m = evaluate(clf, d);
  const auto pred = clf.predict(d.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hits += pred[i] == d.labels[i];
  EXPECT_DOUBLE_EQ(m.accuracy(), static_cast<double>(hits) / 45.0);
  EXPECT_EQ(m.total(), 45u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(m.row_total(c), 15u);
    double pct = 0.0;
    for (std::size_t q = 0; q < 3; ++q) pct += m.percent(c, q);
    EXPECT_NEAR(pct, 100.0, 1e-9);
  }
}

TEST(Confusion, PerfectAndConstantPredictors) {
  ConfusionMatrix perfect(3), constant(3);
  for (std::size_t i = 0; i < 30; ++i) {
    perfect.add(i % 3, i % 3);
    constant.add(i % 3, 0);
  }
  EXPECT_DOUBLE_EQ(perfect.accuracy(), 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(perfect.percent(c, c), 100.0);
  EXPECT_NEAR(constant.accuracy(), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(perfect.add(3, 0), ContractError);
}

TEST(Confusion, CsvLayout) {
  ConfusionMatrix m(2);
  m.add(0, 0);
  m.add(0, 1);
  m.add(1, 1);
  std::istringstream in(m.to_csv({"a", "b"}));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "truth\\predicted,a,b");
  std::getline(in, line);
  EXPECT_EQ(line, "a,1,1");
  std::getline(in, line);
  EXPECT_EQ(line, "b,0,1");
  EXPECT_THROW(m.to_csv({"a"}), ContractError);
}
