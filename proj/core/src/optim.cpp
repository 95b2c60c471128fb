#include "tubenerf/optim.hpp"

#include <cmath>

namespace tubenerf {

void adam_step(ParameterSet& params, AdamState& state) {
  while (state.first_moment.size() < params.size()) {
    const auto& p = params[state.first_moment.size()];
    state.first_moment.push_back(Tensor::zeros_like(p.value));
    state.second_moment.push_back(Tensor::zeros_like(p.value));
    state.param_steps.push_back(0);
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    // Parameters the loss never reached have no gradient buffer yet.
    if (!p.trainable || p.grad.size() != p.value.size()) continue;
    const std::int64_t t = ++state.param_steps[i];
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p.value[k] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
  params.zero_grad();
}

}  // namespace tubenerf
