#include "gasca/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gasca/ops.hpp"

namespace gasca {

Tensor init_glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ContractError("init_glorot: fans must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects (N, C) logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out = logits;
  for (std::size_t r = 0; r < n; ++r) {
    double* row = out.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return out;
}

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::ConvMLP: return "ConvMLP";
    case LayerKind::HalfConv: return "HalfConv";
    case LayerKind::Deconv2D: return "Deconv2D";
    case LayerKind::Dense: return "Dense";
  }
  return "?";
}

std::vector<const ad::Parameter*> Layer::parameters() const {
  auto mut = const_cast<Layer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const ad::Parameter* p : parameters()) n += p->value.size();
  return n;
}

void Layer::check_input(const ad::Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != in_shape_.size() + 1 || !std::equal(in_shape_.begin(), in_shape_.end(), s.begin() + 1))
    throw DimensionError(std::string(layer_kind_name(kind())) + " expects (N, " + shape_string(in_shape_) +
                         ") input, got " + shape_string(s));
}

namespace {

void require_chw(const Shape& s, const char* who) {
  if (s.size() != 3) throw ConfigError(std::string(who) + ": input shape must be (C, H, W)");
}

Tensor maybe_glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng* rng) {
  return rng ? init_glorot(shape, fan_in, fan_out, *rng) : Tensor(shape);
}

}  // namespace

// --- Conv2D ---------------------------------------------------------------

Conv2D::Conv2D(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, Rng* rng)
    : Layer(std::move(in_shape)) {
  require_chw(in_shape_, "Conv2D");
  if (k_h == 0 || k_w == 0 || k_h > in_shape_[1] || k_w > in_shape_[2] || out_ch == 0)
    throw ConfigError("Conv2D: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) + " does not fit input " +
                      shape_string(in_shape_));
  const std::size_t c = in_shape_[0];
  kernel = ad::Parameter("kernel", maybe_glorot({out_ch, c, k_h, k_w}, c * k_h * k_w, out_ch * k_h * k_w, rng));
  bias = ad::Parameter("bias", Tensor({out_ch}));
}

Shape Conv2D::output_shape() const {
  const Shape& k = kernel.value.shape();
  return {k[0], in_shape_[1] - k[2] + 1, in_shape_[2] - k[3] + 1};
}

ad::Var Conv2D::forward(ad::Tape& tape, ad::Var x) {
  check_input(x);
  return ad::conv2d(x, tape.param(kernel), tape.param(bias));
}

std::vector<double> Conv2D::descriptor() const {
  const Shape& k = kernel.value.shape();
  return {double(LayerKind::Conv2D), double(in_shape_[0]), double(in_shape_[1]), double(in_shape_[2]),
          double(k[0]), double(k[2]), double(k[3]), 0, 0, 0, 0};
}

// --- ConvMLP --------------------------------------------------------------

std::pair<std::size_t, std::size_t> square_factorization(std::size_t units) {
  if (units == 0) throw ConfigError("shifting unit count must be positive");
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(units)));
  while (h > 1 && units % h != 0) --h;
  return {h, units / h};
}

ConvMLP::ConvMLP(Shape in_shape, std::size_t out_ch, std::size_t kernel_size, std::size_t units, Rng* rng)
    : Layer(std::move(in_shape)), out_ch_(out_ch), k_(kernel_size), units_(units) {
  require_chw(in_shape_, "ConvMLP");
  if (k_ == 0 || k_ > in_shape_[1] || k_ > in_shape_[2] || out_ch == 0)
    throw ConfigError("ConvMLP: kernel " + std::to_string(k_) + " does not fit input " + shape_string(in_shape_));
  std::tie(plane_h_, plane_w_) = square_factorization(units);
  const std::size_t c = in_shape_[0];
  const std::size_t plane = conv_h() * conv_w();
  kernel = ad::Parameter("kernel", maybe_glorot({out_ch, c, k_, k_}, c * k_ * k_, out_ch * k_ * k_, rng));
  bias = ad::Parameter("bias", Tensor({out_ch}));
  shift_weight = ad::Parameter("shift_weight", maybe_glorot({units, plane}, plane, units, rng));
  shift_bias = ad::Parameter("shift_bias", Tensor({units}));
}

void ConvMLP::set_shift(Tensor weight, Tensor b) {
  const std::size_t plane = conv_h() * conv_w();
  if (weight.shape() != Shape{units_, plane})
    throw ConfigError("ConvMLP: shifting weight must be " + shape_string({units_, plane}) + ", got " +
                      shape_string(weight.shape()));
  if (b.size() != units_) throw ConfigError("ConvMLP: shifting bias must have " + std::to_string(units_) + " entries");
  shift_weight = ad::Parameter("shift_weight", std::move(weight));
  shift_bias = ad::Parameter("shift_bias", b.reshaped({units_}));
}

Shape ConvMLP::output_shape() const { return {out_ch_, plane_h_, plane_w_}; }

ad::Var ConvMLP::forward(ad::Tape& tape, ad::Var x) {
  check_input(x);
  const std::size_t plane = conv_h() * conv_w();
  if (shift_weight.value.shape() != Shape{units_, plane})
    throw ConfigError("ConvMLP: shifting weight " + shape_string(shift_weight.value.shape()) +
                      " does not match conv output plane " + std::to_string(plane));
  const std::size_t n = x.shape()[0];
  ad::Var conv = ad::conv2d(x, tape.param(kernel), tape.param(bias));
  ad::Var rows = ad::reshape(conv, {n * out_ch_, plane});
  ad::Var shifted = ad::linear(rows, tape.param(shift_weight), tape.param(shift_bias));
  return ad::reshape(ad::relu(shifted), {n, out_ch_, plane_h_, plane_w_});
}

std::vector<double> ConvMLP::descriptor() const {
  return {double(LayerKind::ConvMLP), double(in_shape_[0]), double(in_shape_[1]), double(in_shape_[2]),
          double(out_ch_), double(k_), double(k_), double(units_), double(plane_h_), double(plane_w_), 0};
}

// --- HalfConv -------------------------------------------------------------

HalfConv::HalfConv(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, std::size_t pad,
                   Rng* rng)
    : Layer(std::move(in_shape)), out_ch_(out_ch), k_h_(k_h), k_w_(k_w), pad_(pad) {
  require_chw(in_shape_, "HalfConv");
  if (in_shape_[2] % 2 != 0)
    throw DimensionError("HalfConv: input width " + std::to_string(in_shape_[2]) + " must be even");
  if (half_width() + pad_ < k_w_ || k_w_ == 0)
    throw DimensionError("HalfConv: half width " + std::to_string(half_width()) + " + pad " + std::to_string(pad_) +
                         " is narrower than kernel width " + std::to_string(k_w_));
  if (k_h_ == 0 || k_h_ > in_shape_[1] || out_ch == 0)
    throw DimensionError("HalfConv: kernel height does not fit input " + shape_string(in_shape_));
  const std::size_t c = in_shape_[0];
  kernel = ad::Parameter("kernel", maybe_glorot({out_ch, c, k_h, k_w}, c * k_h * k_w, out_ch * k_h * k_w, rng));
  bias = ad::Parameter("bias", Tensor({out_ch}));
}

Shape HalfConv::output_shape() const { return {out_ch_, in_shape_[1] - k_h_ + 1, 2 * half_out_width()}; }

ad::Var HalfConv::forward(ad::Tape& tape, ad::Var x) {
  check_input(x);
  ad::Var left = ad::slice_cols(x, 0, half_width());
  ad::Var conv = ad::conv2d(left, tape.param(kernel), tape.param(bias), pad_);
  return ad::mirror_concat(ad::relu(conv));
}

std::vector<double> HalfConv::descriptor() const {
  return {double(LayerKind::HalfConv), double(in_shape_[0]), double(in_shape_[1]), double(in_shape_[2]),
          double(out_ch_), double(k_h_), double(k_w_), 0, 0, 0, double(pad_)};
}

// --- Deconv2D -------------------------------------------------------------

Deconv2D::Deconv2D(Shape in_shape, std::size_t out_ch, std::size_t k_h, std::size_t k_w, Rng* rng)
    : Layer(std::move(in_shape)) {
  require_chw(in_shape_, "Deconv2D");
  if (k_h == 0 || k_w == 0 || out_ch == 0) throw ConfigError("Deconv2D: kernel extents must be positive");
  const std::size_t c = in_shape_[0];
  kernel = ad::Parameter("kernel", maybe_glorot({c, out_ch, k_h, k_w}, c * k_h * k_w, out_ch * k_h * k_w, rng));
  bias = ad::Parameter("bias", Tensor({out_ch}));
}

Shape Deconv2D::output_shape() const {
  const Shape& k = kernel.value.shape();
  return {k[1], in_shape_[1] + k[2] - 1, in_shape_[2] + k[3] - 1};
}

ad::Var Deconv2D::forward(ad::Tape& tape, ad::Var x) {
  check_input(x);
  return ad::deconv2d(x, tape.param(kernel), tape.param(bias));
}

std::vector<double> Deconv2D::descriptor() const {
  const Shape& k = kernel.value.shape();
  return {double(LayerKind::Deconv2D), double(in_shape_[0]), double(in_shape_[1]), double(in_shape_[2]),
          double(k[1]), double(k[2]), double(k[3]), 0, 0, 0, 0};
}

// --- Dense ----------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out, Rng* rng) : Layer(Shape{in}), out_(out) {
  if (in == 0 || out == 0) throw ConfigError("Dense: extents must be positive");
  weight = ad::Parameter("weight", maybe_glorot({out, in}, in, out, rng));
  bias = ad::Parameter("bias", Tensor({out}));
}

ad::Var Dense::forward(ad::Tape& tape, ad::Var x) {
  const Shape& s = x.shape();
  if (s.size() < 2 || x.value().size() / s[0] != in_shape_[0])
    throw DimensionError("Dense expects " + std::to_string(in_shape_[0]) + " features per sample, got " +
                         shape_string(s));
  ad::Var flat = s.size() == 2 ? x : ad::flatten(x);
  return ad::linear(flat, tape.param(weight), tape.param(bias));
}

std::vector<double> Dense::descriptor() const {
  return {double(LayerKind::Dense), double(in_shape_[0]), 0, 0, double(out_), 0, 0, 0, 0, 0, 0};
}

// --- factory --------------------------------------------------------------

std::unique_ptr<Layer> make_layer(const std::vector<double>& d) {
  if (d.size() != 11) throw ConfigError("layer descriptor must have 11 entries");
  for (double v : d)
    if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("layer descriptor entries must be non-negative integers");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(d[i]); };
  const Shape chw{u(1), u(2), u(3)};
  switch (static_cast<LayerKind>(u(0))) {
    case LayerKind::Conv2D: return std::make_unique<Conv2D>(chw, u(4), u(5), u(6));
    case LayerKind::ConvMLP: {
      if (u(5) != u(6)) throw ConfigError("ConvMLP descriptor requires a square kernel");
      auto layer = std::make_unique<ConvMLP>(chw, u(4), u(5), u(7));
      if (layer->plane_h() != u(8) || layer->plane_w() != u(9))
        throw ConfigError("ConvMLP descriptor plane geometry disagrees with unit count");
      return layer;
    }
    case LayerKind::HalfConv: return std::make_unique<HalfConv>(chw, u(4), u(5), u(6), u(10));
    case LayerKind::Deconv2D: return std::make_unique<Deconv2D>(chw, u(4), u(5), u(6));
    case LayerKind::Dense: return std::make_unique<Dense>(u(1), u(4));
  }
  throw ConfigError("unknown layer kind " + std::to_string(u(0)));
}

std::vector<std::unique_ptr<Layer>> clone_layers(const std::vector<std::unique_ptr<Layer>>& layers) {
  std::vector<std::unique_ptr<Layer>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l->clone());
  return out;
}

}  // namespace gasca
