#include "gasca/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gasca {

namespace {

void check_grads(const std::vector<ad::Parameter*>& params, const std::vector<Tensor>& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Parameter& p = *params[i];
    if (p.grad.shape() != p.value.shape() || state[i].shape() != p.value.shape())
      throw ContractError("optimizer: gradient/state shape mismatch for parameter '" + p.name + "'");
  }
}

std::vector<Tensor> zeros_like(const std::vector<ad::Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const ad::Parameter* p : params) out.emplace_back(p->value.shape());
  return out;
}

}  // namespace

AdamState::AdamState(std::vector<ad::Parameter*> params, double learning_rate, double beta1, double beta2,
                     double eps)
    : params_(std::move(params)), m_(zeros_like(params_)), v_(zeros_like(params_)), lr_(learning_rate),
      beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamState::step() {
  check_grads(params_, m_);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& theta = params_[k]->value.storage();
    const auto& g = params_[k]->grad.storage();
    auto& m = m_[k].storage();
    auto& v = v_[k].storage();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

NesterovState::NesterovState(std::vector<ad::Parameter*> params, double learning_rate, double momentum)
    : params_(std::move(params)), vel_(zeros_like(params_)), lr_(learning_rate), mu_(momentum) {}

void NesterovState::step() {
  check_grads(params_, vel_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& theta = params_[k]->value.storage();
    const auto& g = params_[k]->grad.storage();
    auto& vel = vel_[k].storage();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      vel[i] = mu_ * vel[i] + lr_ * g[i];
      theta[i] -= mu_ * vel[i] + lr_ * g[i];
    }
  }
}

double mae_loss(const Tensor& target, const Tensor& pred) {
  if (target.shape() != pred.shape())
    throw DimensionError("mae_loss: shape mismatch " + shape_string(target.shape()) + " vs " +
                         shape_string(pred.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(target[i] - pred[i]);
  return acc / static_cast<double>(pred.size());
}

double cross_entropy(const Tensor& probs, std::size_t label) {
  if (label >= probs.size())
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
  return -std::log(std::max(probs[label], 1e-12));
}

}  // namespace gasca
