#pragma once

#include "dermnet/error.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

struct OptimizerConfig {
  double learning_rate = 0.0006;
  double momentum = 0.9;
  bool nesterov = true;

  void validate() const {
    // zero is allowed so a frozen-dynamics run can still compute metrics
    if (learning_rate < 0) raise(Err::BadConfig, "learning_rate must be >= 0");
    if (momentum < 0 || momentum >= 1)
      raise(Err::BadConfig, "momentum must be in [0,1)");
  }
};

/// One SGD update, element-wise:
///   v <- mu*v - lr*g
///   theta <- theta + mu*v - lr*g   (Nesterov)
///   theta <- theta + v             (classic momentum)
template <typename T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity,
              const OptimizerConfig& cfg) {
  if (!same_shape(param, grad) || !same_shape(param, velocity))
    raise(Err::ShapeMismatch, "param/grad/velocity shapes differ");
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const T v = mu * velocity.data[i] - lr * grad.data[i];
    velocity.data[i] = v;
    param.data[i] += cfg.nesterov ? mu * v - lr * grad.data[i] : v;
  }
}

}  // namespace dermnet
