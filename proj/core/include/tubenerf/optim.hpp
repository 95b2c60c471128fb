#pragma once

#include "tubenerf/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace tubenerf {

/// Adam with bias correction. Moment buffers follow ParameterSet order and
/// grow when parameters are appended (e.g. after a stage is added).
struct AdamState {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  /// Per-parameter step counts; a parameter added late starts its own bias correction.
  std::vector<std::int64_t> param_steps;
};

/// Applies one update to every trainable parameter, then zeroes all gradients.
void adam_step(ParameterSet& params, AdamState& state);

}  // namespace tubenerf
