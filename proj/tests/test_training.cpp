#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gasca/adversarial.hpp"
#include "gasca/checkpoint.hpp"
#include "gasca/stacking.hpp"
#include "oracles.hpp"

using namespace gasca;

namespace {

struct Fixture {
  ShallowAE G;
  Discriminator D;
  Tensor x, t;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n = 6) {
  Rng rng(seed);
  std::mt19937_64 g(seed);
  Fixture f{ShallowAE(std::make_unique<ConvMLP>(Shape{1, 8, 8}, 2, 3, 9, &rng), &rng),
            Discriminator({1, 8, 8}, {4}, &rng), oracle::random_tensor({n, 1, 8, 8}, g, 0.0, 1.0),
            oracle::random_tensor({n, 1, 8, 8}, g, 0.0, 1.0)};
  return f;
}

std::vector<Tensor> values(const std::vector<ad::Parameter*>& ps) {
  std::vector<Tensor> out;
  for (const ad::Parameter* p : ps) out.push_back(p->value);
  return out;
}

PairedData random_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  return {oracle::random_tensor({n, 1, 8, 8}, g, 0.0, 1.0), oracle::random_tensor({n, 1, 8, 8}, g, 0.0, 1.0)};
}

}  // namespace

TEST(GascaStep, ZeroLearningRatesIsolateEachPlayer) {
  Fixture f = make_fixture(1);
  const auto g0 = values(f.G.parameters()), d0 = values(f.D.parameters());
  {
    AdamState og(f.G.parameters(), 0.0);
    NesterovState od(f.D.parameters(), 0.05, 0.9);
    gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od);
  }
  EXPECT_EQ(values(f.G.parameters()), g0);
  EXPECT_NE(values(f.D.parameters()), d0);

  Fixture h = make_fixture(1);
  {
    AdamState og(h.G.parameters(), 0.01);
    NesterovState od(h.D.parameters(), 0.0, 0.9);
    gasca_minibatch_step(h.G, h.D, h.x, h.t, og, od);
  }
  EXPECT_NE(values(h.G.parameters()), g0);
  EXPECT_EQ(values(h.D.parameters()), d0);
}

TEST(GascaStep, LossBundleIdentities) {
  for (AdversarialLoss kind : {AdversarialLoss::Abs, AdversarialLoss::Bce}) {
    Fixture f = make_fixture(2), fresh = make_fixture(2);
    AdamState og(f.G.parameters(), 0.001);
    NesterovState od(f.D.parameters(), 0.01, 0.9);
    StepOptions opt;
    opt.loss = kind;
    const LossBundle b = gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od, opt);
    EXPECT_EQ(b.adversary, b.real + b.fake);
    EXPECT_EQ(b.total, b.minimax + b.generator);
    EXPECT_NEAR(b.generator, mae_loss(f.t, predict(fresh.G, f.x)), 1e-15);
  }
}

TEST(GascaStep, UpdatesMatchSeparatelyComputedGradients) {
  Fixture f = make_fixture(3), ref = make_fixture(3);
  AdamState og(f.G.parameters(), 0.01);
  NesterovState od(f.D.parameters(), 0.05, 0.9);
  gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od);

  // Generator: Adam on d(minimax + L_g)/dG with D held fixed.
  Discriminator d_copy = ref.D;
  {
    ad::Tape tape;
    ad::Var y = ref.G.forward(tape, tape.constant(ref.x));
    ad::Var loss = ad::add(ad::abs_loss(1.0, d_copy.forward(tape, y)), ad::mae(tape.constant(ref.t), y));
    tape.backward(loss, ref.G.parameters());
  }
  // Discriminator: Nesterov on d(L_real + L_fake)/dD at the pre-update G.
  {
    ad::Tape tape;
    ad::Var y = ref.G.forward(tape, tape.constant(ref.x));
    ad::Var loss = ad::add(ad::abs_loss(1.0, ref.D.forward(tape, tape.constant(ref.t))),
                           ad::abs_loss(0.0, ref.D.forward(tape, y)));
    tape.backward(loss, ref.D.parameters());
  }
  AdamState rg(ref.G.parameters(), 0.01);
  NesterovState rd(ref.D.parameters(), 0.05, 0.9);
  rg.step();
  rd.step();
  const auto a = values(f.G.parameters()), b = values(ref.G.parameters());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(oracle::max_abs_diff(a[i], b[i]), 1e-15);
  const auto c = values(f.D.parameters()), d = values(ref.D.parameters());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LE(oracle::max_abs_diff(c[i], d[i]), 1e-15);
}

TEST(GascaStep, MinimaxGradientMatchesFiniteDifferences) {
  Fixture f = make_fixture(4, 3);
  const Tensor y = predict(f.G, f.x);
  Discriminator d = f.D;
  AdamState og(f.G.parameters(), 0.0);
  NesterovState od(f.D.parameters(), 0.0, 0.0);
  StepOptions opt;
  opt.record_minimax_grad = true;
  const LossBundle b = gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od, opt);
  const Tensor numeric = oracle::finite_diff(
      [&](const Tensor& v) {
        ad::Tape t;
        return ad::abs_loss(1.0, d.forward(t, t.constant(v))).value().item();
      },
      y);
  EXPECT_LE(oracle::max_rel_err(b.minimax_grad, numeric, 1e-4), 1e-3);
}

TEST(GascaStep, LiteralModeTakesThreeGeneratorSteps) {
  Fixture f = make_fixture(5);
  AdamState og(f.G.parameters(), 0.001);
  NesterovState od(f.D.parameters(), 0.01, 0.9);
  StepOptions opt;
  opt.literal_multi_update = true;
  const LossBundle b = gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od, opt);
  EXPECT_EQ(og.steps(), 3u);
  EXPECT_TRUE(std::isfinite(b.total));
  EXPECT_EQ(b.adversary, b.real + b.fake);
}

TEST(GascaStep, DivergenceNamesTheComponent) {
  Fixture f = make_fixture(6);
  f.D.head->weight.value[0] = NAN;
  AdamState og(f.G.parameters(), 0.001);
  NesterovState od(f.D.parameters(), 0.01, 0.9);
  try {
    gasca_minibatch_step(f.G, f.D, f.x, f.t, og, od);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.component, "discriminator");
  }
  Fixture h = make_fixture(6);
  h.G.decoder->parameters()[0]->value[0] = INFINITY;
  AdamState og2(h.G.parameters(), 0.001);
  NesterovState od2(h.D.parameters(), 0.01, 0.9);
  try {
    gasca_minibatch_step(h.G, h.D, h.x, h.t, og2, od2);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.component, "generator");
  }
}

TEST(GascaStep, BatchMismatchIsDimensionError) {
  Fixture f = make_fixture(7);
  AdamState og(f.G.parameters(), 0.001);
  NesterovState od(f.D.parameters(), 0.01, 0.9);
  EXPECT_THROW(gasca_minibatch_step(f.G, f.D, f.x, gather_rows(f.t, {0, 1}), og, od), DimensionError);
}

TEST(TrainPair, SingleFullBatchEpochIsOneStep) {
  Fixture f = make_fixture(8), ref = make_fixture(8);
  const PairedData data{f.x, f.t};
  PairTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = data.size();
  train_pair(f.G, f.D, data, data, cfg);
  AdamState og(ref.G.parameters(), cfg.g_lr);
  NesterovState od(ref.D.parameters(), cfg.d_lr, cfg.d_momentum);
  gasca_minibatch_step(ref.G, ref.D, ref.x, ref.t, og, od);
  const auto a = values(f.G.parameters()), b = values(ref.G.parameters());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(oracle::max_abs_diff(a[i], b[i]), 1e-12);
}

TEST(TrainPair, DeterministicUnderSeed) {
  const PairedData train = random_pairs(20, 9), val = random_pairs(6, 10);
  PairTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  Fixture a = make_fixture(9), b = make_fixture(9);
  const auto ma = train_pair(a.G, a.D, train, val, cfg);
  const auto mb = train_pair(b.G, b.D, train, val, cfg);
  ASSERT_EQ(ma.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(ma[e].generator, mb[e].generator);
    EXPECT_EQ(ma[e].val_mae, mb[e].val_mae);
  }
  EXPECT_EQ(values(a.G.parameters()), values(b.G.parameters()));
}

TEST(TrainPair, RejectsEmptyDataAndZeroBatch) {
  Fixture f = make_fixture(10);
  PairTrainConfig cfg;
  EXPECT_THROW(train_pair(f.G, f.D, PairedData{}, PairedData{}, cfg), ConfigError);
  cfg.batch_size = 0;
  EXPECT_THROW(train_pair(f.G, f.D, random_pairs(4, 1), random_pairs(4, 2), cfg), ConfigError);
}

TEST(TrainPair, EpochOrderIsAPermutation) {
  auto o = epoch_order(50, 3, 2);
  EXPECT_EQ(o, epoch_order(50, 3, 2));
  EXPECT_NE(o, epoch_order(50, 3, 3));
  std::sort(o.begin(), o.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(o[i], i);
}

// --- stacking -----------------------------------------------------------------------

namespace {

GeneratorStack two_stage_stack(Rng& rng) {
  GeneratorStack s;
  s.push(ShallowAE(std::make_unique<ConvMLP>(Shape{1, 16, 16}, 2, 5, 36, &rng), &rng));
  s.push(ShallowAE(std::make_unique<ConvMLP>(Shape{2, 6, 6}, 2, 3, 16, &rng), &rng));
  return s;
}

}  // namespace

TEST(Stacking, TwoStageShapes) {
  Rng rng(20);
  GeneratorStack s = two_stage_stack(rng);
  EXPECT_EQ(s.depth(), 2u);
  EXPECT_EQ(s.latent_shape(0), (Shape{1, 16, 16}));
  EXPECT_EQ(s.latent_shape(1), (Shape{2, 6, 6}));
  EXPECT_EQ(s.latent_shape(2), (Shape{2, 4, 4}));
  // Newest decoder first: it undoes the second encoder.
  EXPECT_EQ(s.decoders[0]->input_shape(), (Shape{2, 4, 4}));
  EXPECT_EQ(s.decoders[1]->output_shape(), (Shape{1, 16, 16}));
  std::mt19937_64 g(20);
  const Tensor x = oracle::random_tensor({3, 1, 16, 16}, g, 0.0, 1.0);
  EXPECT_EQ(predict(s, x).shape(), x.shape());
  EXPECT_EQ(encode_tensor(s, 1, x).shape(), (Shape{3, 2, 6, 6}));
  EXPECT_EQ(encode_tensor(s, 2, x).shape(), (Shape{3, 2, 4, 4}));
  EXPECT_EQ(encode_tensor(s, 0, x), x);
}

TEST(Stacking, PushRejectsMismatchedStage) {
  Rng rng(21);
  GeneratorStack s = two_stage_stack(rng);
  EXPECT_THROW(s.push(ShallowAE(std::make_unique<ConvMLP>(Shape{1, 16, 16}, 2, 5, 36, &rng), &rng)), DimensionError);
  std::mt19937_64 g(21);
  EXPECT_THROW(encode_tensor(s, 1, oracle::random_tensor({1, 1, 8, 8}, g)), ConfigError);
}

TEST(Stacking, ZeroEpochFineTuneIsNoOp) {
  Rng rng(22);
  GeneratorStack s = two_stage_stack(rng);
  const auto before = values(s.parameters());
  std::mt19937_64 g(22);
  const PairedData d{oracle::random_tensor({4, 1, 16, 16}, g), oracle::random_tensor({4, 1, 16, 16}, g)};
  FineTuneConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(fine_tune(s, d, d, cfg).empty());
  EXPECT_EQ(values(s.parameters()), before);
  cfg.epochs = 1;
  EXPECT_THROW(fine_tune(s, PairedData{}, d, cfg), ContractError);
}

TEST(Stacking, FineTuneDoesNotIncreaseTrainingLossOnTinyProblem) {
  Rng rng(23);
  GeneratorStack s = two_stage_stack(rng);
  std::mt19937_64 g(23);
  const Tensor x = oracle::random_tensor({8, 1, 16, 16}, g, 0.0, 1.0);
  const PairedData d{x, x};
  const double before = evaluate_mae(s, d);
  FineTuneConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.lr = 0.001;
  const auto hist = fine_tune(s, d, d, cfg);
  EXPECT_EQ(hist.size(), 5u);
  EXPECT_LT(evaluate_mae(s, d), before);
}

TEST(Stacking, DiscriminatorStackOutputsProbabilities) {
  Rng rng(24);
  GeneratorStack s = two_stage_stack(rng);
  DiscriminatorStack d;
  d.push(Discriminator(s.latent_shape(0), {4}, &rng), 0, rng);
  d.push(Discriminator(s.latent_shape(1), {4}, &rng), 1, rng);
  EXPECT_EQ(d.size(), 2u);
  std::mt19937_64 g(24);
  ad::Tape tape;
  const Tensor p = d.forward(tape, s, tape.constant(oracle::random_tensor({5, 1, 16, 16}, g, 0.0, 1.0))).value();
  EXPECT_EQ(p.shape(), (Shape{5, 1}));
  for (double v : p.storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Stacking, DiscriminatorFineTuneLeavesGeneratorAlone) {
  Rng rng(25);
  GeneratorStack s = two_stage_stack(rng);
  DiscriminatorStack d;
  d.push(Discriminator(s.latent_shape(0), {4}, &rng), 0, rng);
  d.push(Discriminator(s.latent_shape(1), {4}, &rng), 1, rng);
  const auto g0 = values(s.parameters()), d0 = values(d.parameters());
  std::mt19937_64 g(25);
  FineTuneConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr = 0.01;
  fine_tune_discriminator(d, s, oracle::random_tensor({8, 1, 16, 16}, g), oracle::random_tensor({8, 1, 16, 16}, g),
                          cfg);
  EXPECT_EQ(values(s.parameters()), g0);
  EXPECT_NE(values(d.parameters()), d0);
}

namespace {

StageData toy_stage(std::size_t) {
  std::mt19937_64 g(77);
  const Tensor x = oracle::random_tensor({12, 1, 16, 16}, g, 0.0, 1.0);
  const Tensor v = oracle::random_tensor({4, 1, 16, 16}, g, 0.0, 1.0);
  return {{x, x}, {v, v}};
}

GanglwConfig toy_ganglw() {
  GanglwConfig c;
  c.stages = {{LayerKind::ConvMLP, 2, 5, 36, 0}, {LayerKind::ConvMLP, 2, 3, 16, 0}};
  c.g_lr = {0.001};
  c.d_lr = {0.01, 0.03};
  c.d_channels = {4};
  c.pretrain_epochs = 2;
  c.finetune_epochs = 2;
  c.d_finetune_epochs = 1;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Ganglw, ReportsEveryStage) {
  std::vector<StageReport> reports;
  const GanglwState st =
      ganglw_train(toy_stage, toy_ganglw(), {}, [&](const StageReport& r, const GanglwState&) { reports.push_back(r); });
  EXPECT_EQ(st.completed, 2u);
  EXPECT_EQ(st.generator.depth(), 2u);
  EXPECT_EQ(st.discriminator.size(), 2u);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].pretrain.size(), 2u);
  EXPECT_TRUE(reports[0].finetune.empty());
  EXPECT_EQ(reports[1].finetune.size(), 2u);
  EXPECT_EQ(reports[1].d_finetune.size(), 1u);
}

TEST(Ganglw, ResumeFromCheckpointMatchesUninterruptedRun) {
  const GanglwConfig cfg = toy_ganglw();
  const GanglwState full = ganglw_train(toy_stage, cfg);
  GanglwConfig first = cfg;
  first.stages.resize(1);
  const GanglwState half = ganglw_train(toy_stage, first);
  const GanglwState restored = import_state(decode_checkpoint(encode_checkpoint(export_state(half))));
  const GanglwState resumed = ganglw_train(toy_stage, cfg, restored);
  EXPECT_EQ(encode_checkpoint(export_state(resumed)), encode_checkpoint(export_state(full)));
}

TEST(Ganglw, StageSeedsDiffer) {
  EXPECT_NE(stage_seed(1, 1, 1), stage_seed(1, 2, 1));
  EXPECT_NE(stage_seed(1, 1, 1), stage_seed(1, 1, 2));
  EXPECT_NE(stage_seed(1, 1, 1), stage_seed(2, 1, 1));
  EXPECT_EQ(stage_seed(3, 2, 4), stage_seed(3, 2, 4));
}
