#include "zstal/optim.hpp"

#include <cmath>
#include <string>

#include "zstal/error.hpp"

namespace zstal {

OptState OptState::zeros_like(std::span<const Tensor* const> params) {
  OptState state;
  for (const Tensor* p : params) {
    state.first_moment.emplace_back(p->dims());
    state.second_moment.emplace_back(p->dims());
  }
  return state;
}

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                OptState& state, const AdamWOptions& options) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->size() != grads[k].size() ||
        params[k]->size() != state.first_moment[k].size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "adamw_step: shape mismatch at parameter " + std::to_string(k));
    }
    if (!grads[k].all_finite()) {
      throw Error(ErrorCode::kNumerical,
                  "adamw_step: non-finite gradient for parameter " +
                      std::to_string(k));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  const double decay = 1.0 - options.learning_rate * options.weight_decay;

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->values();
    const auto& g = grads[k].values();
    auto& m = state.first_moment[k].values();
    auto& v = state.second_moment[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g[i];
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
  }
}

}  // namespace zstal
