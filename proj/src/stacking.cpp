#include "gasca/stacking.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "gasca/ops.hpp"

namespace gasca {

std::unique_ptr<Layer> make_encoder(const StageSpec& s, const Shape& in, Rng* rng) {
  switch (s.kind) {
    case LayerKind::ConvMLP:
      return std::make_unique<ConvMLP>(in, s.channels, s.kernel, s.units, rng);
    case LayerKind::HalfConv:
      return std::make_unique<HalfConv>(in, s.channels, s.kernel, s.kernel, s.pad, rng);
    case LayerKind::Conv2D:
      return std::make_unique<Conv2D>(in, s.channels, s.kernel, s.kernel, rng);
    default:
      throw ConfigError("stage encoder must be ConvMLP, HalfConv or Conv2D, got " +
                        std::string(layer_kind_name(s.kind)));
  }
}

// --- GeneratorStack ---------------------------------------------------------

GeneratorStack::GeneratorStack(const GeneratorStack& o)
    : encoders(clone_layers(o.encoders)), decoders(clone_layers(o.decoders)) {}

GeneratorStack& GeneratorStack::operator=(const GeneratorStack& o) {
  if (this != &o) {
    encoders = clone_layers(o.encoders);
    decoders = clone_layers(o.decoders);
  }
  return *this;
}

void GeneratorStack::push(ShallowAE stage) {
  if (!encoders.empty() && stage.encoder->input_shape() != latent_shape(depth()))
    throw DimensionError("stage " + std::to_string(depth() + 1) + " encoder expects " +
                         shape_string(stage.encoder->input_shape()) + " but the stack produces " +
                         shape_string(latent_shape(depth())));
  encoders.push_back(std::move(stage.encoder));
  decoders.insert(decoders.begin(), std::move(stage.decoder));
}

ad::Var GeneratorStack::forward(ad::Tape& tape, ad::Var x) {
  x = encode(tape, x, depth());
  for (auto& d : decoders) x = d->forward(tape, x);
  return x;
}

ad::Var GeneratorStack::encode(ad::Tape& tape, ad::Var x, std::size_t levels) {
  if (levels > depth())
    throw ContractError("encode: " + std::to_string(levels) + " levels requested from a stack of depth " +
                        std::to_string(depth()));
  for (std::size_t i = 0; i < levels; ++i) x = encoders[i]->forward(tape, x);
  return x;
}

std::vector<ad::Parameter*> GeneratorStack::encoder_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : encoders)
    for (ad::Parameter* p : l->parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> GeneratorStack::parameters() {
  std::vector<ad::Parameter*> out = encoder_parameters();
  for (auto& l : decoders)
    for (ad::Parameter* p : l->parameters()) out.push_back(p);
  return out;
}

Shape GeneratorStack::input_shape() const {
  if (encoders.empty()) throw ContractError("empty generator stack has no input shape");
  return encoders.front()->input_shape();
}

Shape GeneratorStack::latent_shape(std::size_t levels) const {
  if (levels == 0) return input_shape();
  if (levels > depth()) throw ContractError("latent_shape: depth out of range");
  return encoders[levels - 1]->output_shape();
}

namespace {

struct EncoderView {
  GeneratorStack& stack;
  std::size_t levels;
  ad::Var forward(ad::Tape& t, ad::Var x) { return stack.encode(t, x, levels); }
};

}  // namespace

Tensor encode_tensor(GeneratorStack& stack, std::size_t levels, const Tensor& x, std::size_t batch) {
  if (levels == 0) return x;
  if (x.empty() || x.rank() != 4) throw ConfigError("encode: expected a (N, C, H, W) batch, got " + shape_string(x.shape()));
  const Shape want = stack.latent_shape(0);
  if (Shape(x.shape().begin() + 1, x.shape().end()) != want)
    throw ConfigError("encode: encoder list expects " + shape_string(want) + " samples, got " +
                      shape_string(x.shape()));
  EncoderView view{stack, levels};
  return predict(view, x, batch);
}

PairedData encode_dataset(GeneratorStack& stack, std::size_t levels, const PairedData& data, std::size_t batch) {
  if (data.size() == 0) return data;
  return {encode_tensor(stack, levels, data.inputs, batch), encode_tensor(stack, levels, data.targets, batch)};
}

// --- DiscriminatorStack -----------------------------------------------------

DiscriminatorStack::DiscriminatorStack(const DiscriminatorStack& o)
    : levels(o.levels), head(o.head ? std::make_unique<Dense>(*o.head) : nullptr) {}

DiscriminatorStack& DiscriminatorStack::operator=(const DiscriminatorStack& o) {
  if (this != &o) {
    levels = o.levels;
    head = o.head ? std::make_unique<Dense>(*o.head) : nullptr;
  }
  return *this;
}

void DiscriminatorStack::push(Discriminator d, std::size_t depth, Rng& rng) {
  if (!levels.empty() && depth < levels.back().depth)
    throw ContractError("discriminator levels must be pushed in increasing depth");
  const std::size_t added = d.feature_size();
  levels.push_back({depth, std::move(d.feature_layers)});
  if (levels.size() == 1) {
    head = std::move(d.head);
  } else {
    head = std::make_unique<Dense>(head->input_shape()[0] + added, 1, &rng);
  }
}

ad::Var DiscriminatorStack::forward(ad::Tape& tape, GeneratorStack& g, ad::Var x) {
  if (levels.empty()) throw ContractError("empty discriminator stack");
  std::vector<ad::Var> parts;
  std::size_t at = 0;
  for (Level& lv : levels) {
    if (lv.depth > g.depth())
      throw ContractError("discriminator level reads depth " + std::to_string(lv.depth) +
                          " of a generator stack of depth " + std::to_string(g.depth()));
    for (; at < lv.depth; ++at) x = g.encoders[at]->forward(tape, x);
    parts.push_back(conv_relu_features(lv.features, tape, x));
  }
  ad::Var f = parts.size() == 1 ? parts.front() : ad::concat_cols(parts);
  return ad::sigmoid(head->forward(tape, f));
}

std::vector<ad::Parameter*> DiscriminatorStack::parameters() {
  std::vector<ad::Parameter*> out;
  for (Level& lv : levels)
    for (ad::Parameter* p : lv.features.parameters()) out.push_back(p);
  if (head)
    for (ad::Parameter* p : head->parameters()) out.push_back(p);
  return out;
}

// --- fine-tuning ------------------------------------------------------------

namespace {

std::vector<std::size_t> slice(const std::vector<std::size_t>& order, std::size_t start, std::size_t batch) {
  const std::size_t end = std::min(order.size(), start + batch);
  return {order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

}  // namespace

std::vector<FineTuneEpoch> fine_tune(GeneratorStack& stack, const PairedData& train, const PairedData& validation,
                                     const FineTuneConfig& cfg) {
  std::vector<FineTuneEpoch> out;
  if (cfg.epochs == 0) return out;
  if (train.size() == 0) throw ContractError("fine_tune: empty training set");
  if (cfg.batch_size == 0) throw ConfigError("fine_tune: batch size must be positive");
  std::vector<ad::Parameter*> params = stack.parameters();
  AdamState opt(params, cfg.lr);
  const std::size_t n = train.size();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::vector<std::size_t> order = epoch_order(n, cfg.seed, e);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::vector<std::size_t> idx = slice(order, start, cfg.batch_size);
      ad::Tape t;
      ad::Var y = detail::guarded("generator", [&] { return stack.forward(t, t.constant(gather_rows(train.inputs, idx))); });
      ad::Var l = ad::mae(t.constant(gather_rows(train.targets, idx)), y);
      loss += l.value().item();
      t.backward(l, params);
      opt.step();
      detail::require_finite_params(stack, "generator");
      ++batches;
    }
    out.push_back({e + 1, loss / static_cast<double>(batches), evaluate_mae(stack, validation)});
  }
  return out;
}

std::vector<FineTuneEpoch> fine_tune_discriminator(DiscriminatorStack& d, GeneratorStack& g, const Tensor& fakes,
                                                   const Tensor& reals, const FineTuneConfig& cfg) {
  std::vector<FineTuneEpoch> out;
  if (cfg.epochs == 0) return out;
  if (fakes.empty() || reals.empty()) throw ContractError("fine_tune_discriminator: empty training set");
  if (fakes.shape() != reals.shape())
    throw DimensionError("fine_tune_discriminator: reconstructions " + shape_string(fakes.shape()) +
                         " and targets " + shape_string(reals.shape()) + " differ");
  if (cfg.batch_size == 0) throw ConfigError("fine_tune_discriminator: batch size must be positive");
  std::vector<ad::Parameter*> params = d.parameters();
  NesterovState opt(params, cfg.lr, cfg.momentum);
  const std::size_t n = fakes.dim(0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::vector<std::size_t> order = epoch_order(n, cfg.seed, e);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::vector<std::size_t> idx = slice(order, start, cfg.batch_size);
      ad::Tape t;
      ad::Var l = detail::guarded("discriminator", [&] {
        ad::Var p0 = d.forward(t, g, t.constant(gather_rows(fakes, idx)));
        ad::Var p1 = d.forward(t, g, t.constant(gather_rows(reals, idx)));
        return ad::add(adversarial_loss(cfg.loss, 0.0, p0), adversarial_loss(cfg.loss, 1.0, p1));
      });
      loss += l.value().item();
      t.backward(l, params);
      opt.step();
      detail::require_finite_params(d, "discriminator");
      ++batches;
    }
    out.push_back({e + 1, loss / static_cast<double>(batches), 0.0});
  }
  return out;
}

// --- GANGLW -----------------------------------------------------------------

std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(purpose)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (std::uint64_t{w[0]} << 32) | w[1];
}

namespace {

enum Purpose : std::uint64_t { kInitG = 1, kInitD = 2, kShuffle = 3, kFineTune = 4, kHead = 5, kDFineTune = 6 };

double pick(const std::vector<double>& v, std::size_t stage, const char* what) {
  if (v.empty()) throw ConfigError(std::string(what) + ": no learning rate given");
  return v[std::min(stage - 1, v.size() - 1)];
}

}  // namespace

GanglwState ganglw_train(const std::function<StageData(std::size_t)>& data, const GanglwConfig& cfg,
                         GanglwState state, const StageCallback& on_stage) {
  if (state.completed != state.generator.depth())
    throw ContractError("resume state: completed stages do not match the generator depth");
  if (state.completed > cfg.stages.size())
    throw ConfigError("resume state has " + std::to_string(state.completed) + " stages but the run has " +
                      std::to_string(cfg.stages.size()));
  for (std::size_t k = state.completed + 1; k <= cfg.stages.size(); ++k) {
    const StageData raw = data(k);
    if (raw.train.size() == 0) throw ConfigError("stage " + std::to_string(k) + ": empty training set");
    GeneratorStack& G = state.generator;
    const std::size_t prior = k - 1;
    const Shape raw_shape(raw.train.inputs.shape().begin() + 1, raw.train.inputs.shape().end());
    const Shape in_shape = prior == 0 ? raw_shape : G.latent_shape(prior);

    Rng init_g(stage_seed(cfg.seed, k, kInitG));
    Rng init_d(stage_seed(cfg.seed, k, kInitD));
    std::unique_ptr<Layer> enc;
    try {
      enc = make_encoder(cfg.stages[k - 1], in_shape, &init_g);
    } catch (const std::exception& e) {
      throw ConfigError("stage " + std::to_string(k) + ": " + e.what());
    }
    ShallowAE ae(std::move(enc), &init_g);
    Discriminator dk(in_shape, cfg.d_channels, &init_d);

    StageData latent = raw;
    if (prior > 0) {
      latent.train = encode_dataset(G, prior, raw.train);
      latent.validation = encode_dataset(G, prior, raw.validation);
    }
    PairTrainConfig pc;
    pc.epochs = cfg.pretrain_epochs;
    pc.batch_size = cfg.batch_size;
    pc.g_lr = pick(cfg.g_lr, k, "g_lr");
    pc.d_lr = pick(cfg.d_lr, k, "d_lr");
    pc.d_momentum = cfg.d_momentum;
    pc.seed = stage_seed(cfg.seed, k, kShuffle);
    pc.step = cfg.step;

    StageReport report;
    report.stage = k;
    report.pretrain = train_pair(ae, dk, latent.train, latent.validation, pc);

    G.push(std::move(ae));
    Rng head_rng(stage_seed(cfg.seed, k, kHead));
    state.discriminator.push(std::move(dk), prior, head_rng);

    report.val_mae_before = evaluate_mae(G, raw.validation);
    report.val_mae_after = report.val_mae_before;
    if (k >= 2) {
      FineTuneConfig fc;
      fc.epochs = cfg.finetune_epochs;
      fc.batch_size = cfg.batch_size;
      fc.lr = cfg.finetune_lr;
      fc.seed = stage_seed(cfg.seed, k, kFineTune);
      report.finetune = fine_tune(G, raw.train, raw.validation, fc);
      report.val_mae_after = evaluate_mae(G, raw.validation);

      FineTuneConfig dc = fc;
      dc.epochs = cfg.d_finetune_epochs;
      dc.momentum = cfg.d_momentum;
      dc.loss = cfg.step.loss;
      dc.seed = stage_seed(cfg.seed, k, kDFineTune);
      const Tensor fakes = predict(G, raw.train.inputs);
      report.d_finetune = fine_tune_discriminator(state.discriminator, G, fakes, raw.train.targets, dc);
    }
    state.completed = k;
    if (on_stage) on_stage(report, state);
  }
  return state;
}

}  // namespace gasca
