#pragma once

#include <cmath>
#include <vector>

#include "dermnet/error.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

inline constexpr double kLogClamp = 1e-12;

/// Weighted categorical cross-entropy:
///   L = -(1/B) * sum_i w[y_i] * log(max(p_{i,y_i}, 1e-12))
template <typename T>
double weighted_cce(const TensorT<T>& probs, const std::vector<int>& targets,
                    const std::vector<double>& weights) {
  if (probs.shape.size() != 2 ||
      probs.dim(0) != static_cast<int>(targets.size()))
    raise(Err::ShapeMismatch, "probs must be (batch, K) matching targets");
  const int k = probs.dim(1);
  if (static_cast<int>(weights.size()) != k)
    raise(Err::ShapeMismatch, "weights length must equal K");

  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int y = targets[i];
    if (y < 0 || y >= k) raise(Err::CodeOutOfRange, "target out of range");
    const double p = probs.data[i * static_cast<std::size_t>(k) +
                                static_cast<std::size_t>(y)];
    sum += weights[static_cast<std::size_t>(y)] * std::log(std::max(p, kLogClamp));
  }
  return -sum / static_cast<double>(targets.size());
}

/// dL/dprobs for the loss above. Zero where the clamp is active (the loss is
/// constant there), so analytic and finite-difference gradients agree.
template <typename T>
TensorT<T> weighted_cce_grad(const TensorT<T>& probs, const std::vector<int>& targets,
                             const std::vector<double>& weights) {
  const int k = probs.dim(1);
  const double b = static_cast<double>(targets.size());
  TensorT<T> grad(probs.shape);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int y = targets[i];
    const double p = probs.data[i * static_cast<std::size_t>(k) +
                                static_cast<std::size_t>(y)];
    if (p > kLogClamp) {
      grad.data[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(y)] =
          static_cast<T>(-weights[static_cast<std::size_t>(y)] / (b * p));
    }
  }
  return grad;
}

}  // namespace dermnet
