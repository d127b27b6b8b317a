#include "gasca/adversarial.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace gasca {

ad::Var Sequential::forward(ad::Tape& tape, ad::Var x) {
  for (auto& l : layers) x = l->forward(tape, x);
  return x;
}

std::vector<ad::Parameter*> Sequential::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : layers)
    for (ad::Parameter* p : l->parameters()) out.push_back(p);
  return out;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& indices) {
  if (t.empty() || t.rank() < 1) throw DimensionError("gather_rows: empty tensor");
  if (indices.empty()) throw ContractError("gather_rows: no rows requested");
  const std::size_t n = t.dim(0);
  const std::size_t row = t.size() / n;
  std::vector<double> out(indices.size() * row);
  const auto src = t.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n)
      throw ContractError("gather_rows: row " + std::to_string(indices[i]) + " out of range " + std::to_string(n));
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape s = t.shape();
  s[0] = indices.size();
  return Tensor(std::move(s), std::move(out));
}

std::unique_ptr<Layer> make_restoring_decoder(const Shape& from, const Shape& to, Rng* rng) {
  if (from.size() != 3 || to.size() != 3 || from[1] > to[1] || from[2] > to[2])
    throw ConfigError("no deconvolution maps " + shape_string(from) + " to " + shape_string(to));
  return std::make_unique<Deconv2D>(from, to[0], to[1] - from[1] + 1, to[2] - from[2] + 1, rng);
}

ShallowAE::ShallowAE(std::unique_ptr<Layer> enc, Rng* rng) : encoder(std::move(enc)) {
  if (!encoder) throw ContractError("ShallowAE: missing encoder");
  decoder = make_restoring_decoder(encoder->output_shape(), encoder->input_shape(), rng);
}

ShallowAE::ShallowAE(std::unique_ptr<Layer> enc, std::unique_ptr<Layer> dec)
    : encoder(std::move(enc)), decoder(std::move(dec)) {
  if (!encoder || !decoder) throw ContractError("ShallowAE: missing encoder or decoder");
  if (decoder->input_shape() != encoder->output_shape() || decoder->output_shape() != encoder->input_shape())
    throw DimensionError("ShallowAE: decoder " + shape_string(decoder->input_shape()) + " -> " +
                         shape_string(decoder->output_shape()) + " does not invert encoder " +
                         shape_string(encoder->input_shape()) + " -> " + shape_string(encoder->output_shape()));
}

ShallowAE::ShallowAE(const ShallowAE& o) : encoder(o.encoder->clone()), decoder(o.decoder->clone()) {}

ShallowAE& ShallowAE::operator=(const ShallowAE& o) {
  if (this != &o) {
    encoder = o.encoder->clone();
    decoder = o.decoder->clone();
  }
  return *this;
}

ad::Var ShallowAE::forward(ad::Tape& tape, ad::Var x) { return decoder->forward(tape, encoder->forward(tape, x)); }

std::vector<ad::Parameter*> ShallowAE::parameters() {
  std::vector<ad::Parameter*> out = encoder->parameters();
  for (ad::Parameter* p : decoder->parameters()) out.push_back(p);
  return out;
}

Discriminator::Discriminator(const Shape& in_shape, const std::vector<std::size_t>& channels, Rng* rng) {
  if (in_shape.size() != 3) throw ConfigError("Discriminator: input must be (C, H, W), got " + shape_string(in_shape));
  Shape s = in_shape;
  for (std::size_t c : channels) {
    if (s[1] < 3 || s[2] < 3) break;
    feature_layers.layers.push_back(std::make_unique<Conv2D>(s, c, 3, 3, rng));
    s = feature_layers.layers.back()->output_shape();
  }
  head = std::make_unique<Dense>(shape_size(s), 1, rng);
}

Discriminator::Discriminator(const Discriminator& o)
    : feature_layers(o.feature_layers), head(std::make_unique<Dense>(*o.head)) {}

Discriminator& Discriminator::operator=(const Discriminator& o) {
  if (this != &o) {
    feature_layers = o.feature_layers;
    head = std::make_unique<Dense>(*o.head);
  }
  return *this;
}

ad::Var conv_relu_features(Sequential& layers, ad::Tape& tape, ad::Var x) {
  for (auto& l : layers.layers) x = ad::relu(l->forward(tape, x));
  return x.shape().size() == 2 ? x : ad::flatten(x);
}

ad::Var Discriminator::features(ad::Tape& tape, ad::Var x) { return conv_relu_features(feature_layers, tape, x); }

ad::Var Discriminator::forward(ad::Tape& tape, ad::Var x) { return ad::sigmoid(head->forward(tape, features(tape, x))); }

std::vector<ad::Parameter*> Discriminator::parameters() {
  std::vector<ad::Parameter*> out = feature_layers.parameters();
  for (ad::Parameter* p : head->parameters()) out.push_back(p);
  return out;
}

std::size_t Discriminator::feature_size() const { return head->input_shape()[0]; }

AdversarialLoss parse_adversarial_loss(const std::string& s) {
  if (s == "abs") return AdversarialLoss::Abs;
  if (s == "bce") return AdversarialLoss::Bce;
  throw ConfigError("unknown adversarial loss '" + s + "' (expected abs or bce)");
}

ad::Var adversarial_loss(AdversarialLoss kind, double label, ad::Var p) {
  return kind == AdversarialLoss::Abs ? ad::abs_loss(label, p) : ad::bce_loss(label, p);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<EpochMetrics> train_pair(ShallowAE& G, Discriminator& D, const PairedData& train,
                                     const PairedData& validation, const PairTrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (train.inputs.dim(0) != train.targets.dim(0)) throw DimensionError("train inputs/targets row mismatch");
  AdamState optG(G.parameters(), cfg.g_lr);
  NesterovState optD(D.parameters(), cfg.d_lr, cfg.d_momentum);
  std::vector<EpochMetrics> history;
  const std::size_t n = train.size();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::vector<std::size_t> order = epoch_order(n, cfg.seed, e);
    EpochMetrics m;
    m.epoch = e + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
      const LossBundle b =
          gasca_minibatch_step(G, D, gather_rows(train.inputs, idx), gather_rows(train.targets, idx), optG, optD,
                               cfg.step);
      m.generator += b.generator;
      m.real += b.real;
      m.fake += b.fake;
      m.minimax += b.minimax;
      m.adversary += b.adversary;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    m.generator *= inv;
    m.real *= inv;
    m.fake *= inv;
    m.minimax *= inv;
    m.adversary *= inv;
    m.val_mae = evaluate_mae(G, validation);
    history.push_back(m);
  }
  return history;
}

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,L_g,L_real,L_fake,L_minimax,val_mae\n" << std::setprecision(17);
  for (const EpochMetrics& m : metrics)
    f << m.epoch << ',' << m.generator << ',' << m.real << ',' << m.fake << ',' << m.minimax << ',' << m.val_mae
      << '\n';
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace gasca
