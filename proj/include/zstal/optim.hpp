#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zstal/tensor.hpp"

namespace zstal {

struct AdamWOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;
};

// First/second moment accumulators, one pair per parameter tensor.
struct OptState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static OptState zeros_like(std::span<const Tensor* const> params);
};

// One AdamW update:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// Throws kNumerical naming the parameter index if a gradient is non-finite.
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                OptState& state, const AdamWOptions& options);

}  // namespace zstal
