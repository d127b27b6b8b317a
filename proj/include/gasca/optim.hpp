#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gasca/autodiff.hpp"
#include "gasca/tensor.hpp"

namespace gasca {

/// Bias-corrected Adam over a fixed parameter list. step() consumes each
/// parameter's current grad.
class AdamState {
 public:
  AdamState(std::vector<ad::Parameter*> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  void step();
  std::uint64_t steps() const { return t_; }
  double learning_rate() const { return lr_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

/// SGD with Nesterov momentum in the velocity form
///   v <- mu v + lr g,   theta <- theta - (mu v + lr g).
class NesterovState {
 public:
  NesterovState(std::vector<ad::Parameter*> params, double learning_rate, double momentum = 0.9);

  void step();
  double learning_rate() const { return lr_; }
  double momentum() const { return mu_; }
  const std::vector<Tensor>& velocities() const { return vel_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Tensor> vel_;
  double lr_, mu_;
};

/// Mean of |target - pred|.
double mae_loss(const Tensor& target, const Tensor& pred);
/// -log(max(probs[label], 1e-12)).
double cross_entropy(const Tensor& probs, std::size_t label);

}  // namespace gasca
