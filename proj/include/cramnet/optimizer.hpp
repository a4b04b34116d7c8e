#pragma once

#include <stdexcept>

#include "cramnet/tensor.hpp"

namespace cramnet {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double decay = 0.9;  // running-average coefficient rho
  double epsilon = 1e-8;
  Index batch_size = 32;
};

// learning_rate 0 is admitted as a degenerate value: a zero-rate run is
// the cheapest way to observe that the loop itself changes nothing.
inline void validate(const OptimizerConfig& cfg) {
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(cfg.decay > 0.0 && cfg.decay < 1.0)) throw std::invalid_argument("decay must be in (0, 1)");
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

/// One RMSProp update, elementwise:
///   ms <- rho * ms + (1 - rho) * g^2
///   w  <- w - lr * g / (sqrt(ms) + eps)
/// mean_square must be zero-initialised before the first call.
template <typename Scalar>
void rmsprop_step(TensorT<Scalar>& param, const TensorT<Scalar>& grad,
                  TensorT<Scalar>& mean_square, const OptimizerConfig& cfg) {
  if (!param.same_shape(grad) || !param.same_shape(mean_square))
    throw std::invalid_argument("rmsprop_step: parameter, gradient and state shapes must agree");
  if (!grad.all_finite()) throw std::domain_error("rmsprop_step: non-finite gradient");
  auto& ms = mean_square.flat();
  const Scalar rho = static_cast<Scalar>(cfg.decay);
  ms = rho * ms + (Scalar(1) - rho) * grad.flat().square();
  param.flat() -=
      static_cast<Scalar>(cfg.learning_rate) * grad.flat() / (ms.sqrt() + static_cast<Scalar>(cfg.epsilon));
}

}  // namespace cramnet
