#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include "tubenerf/autodiff.hpp"
#include "tubenerf/dataset.hpp"
#include "tubenerf/random.hpp"
#include "tubenerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tubenerf::testing {

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Norm-wise relative error between the tape gradient of `f` and central
/// finite differences with step h, over all inputs at once.
inline double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<double> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) {
      const auto g = v.grad().values();
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.variable(t));
    return f(tape, vars).item();
  };
  std::vector<double> numeric;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double fp = eval(work);
      work[k][i] = x0 - h;
      const double fm = eval(work);
      work[k][i] = x0;
      numeric.push_back((fp - fm) / (2.0 * h));
    }
  }
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

/// Values bounded away from 0 so kinked primitives stay differentiable.
inline Tensor away_from_zero(Rng& rng, std::size_t rows, std::size_t cols, double margin = 0.1) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) {
    const double m = uniform(rng, margin, 1.0);
    v = uniform01(rng) < 0.5 ? -m : m;
  }
  return t;
}

/// Dot with fixed random weights so every output element reaches the loss.
inline Var weighted_sum(Tape& tape, Var v, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w(v.value().shape());
  for (double& x : w.values()) x = uniform(rng, -1.0, 1.0);
  return ad::sum(ad::mul(v, tape.constant(w)));
}

/// Small, fast training configuration for tests.
inline TrainConfig tiny_train_config() {
  TrainConfig c;
  c.stages = 2;
  c.iterations_per_stage = 4;
  c.rays_per_batch = 48;
  c.patch_size = 4;
  c.spin_rays = 32;
  c.spin_pool_refresh = 3;
  c.helix_rays = 24;
  c.vit_window = 8;
  c.extractor.stride = 4;
  c.extractor.channels = 8;
  c.trans_samples = 64;
  c.field.hidden = 16;
  c.field.trunk_layers = 2;
  c.field.color_hidden = 8;
  c.field.visibility_hidden = 8;
  c.field.visibility_layers = 1;
  c.field.encoding.position_bands = 3;
  c.field.encoding.direction_bands = 2;
  c.render.samples_per_ray = 12;
  c.render.stratified_jitter = true;
  c.learning_rate = 5e-3;
  return c;
}

inline TubePhantomConfig tiny_phantom(const std::string& preset = "straight-tube", int frames = 12, int size = 24) {
  TubePhantomConfig c = TubePhantomConfig::preset_named(preset);
  c.frame_count = frames;
  c.width = size;
  c.height = size;
  return c;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tubenerf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tubenerf::testing
