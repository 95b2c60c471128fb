#pragma once

// Training objectives. Every function returns a scalar Var on the tape of its
// first argument; targets are plain tensors and never receive gradients.

#include "tubenerf/autodiff.hpp"
#include "tubenerf/image.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace tubenerf {

struct LossWeights {
  double depth = 8.0;
  double ori = 1.0;
  double vit = 10.0;
  double trans = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Mean over rays of the squared L2 colour error; pred and target are [R, 3].
Var pixel_loss(Var pred, const Tensor& target);
/// Mean of squared differences over all elements.
Var mse_loss(Var pred, const Tensor& target);

struct OriTerms {
  Var patch;
  Var rand;
  Var total;
};

/// L_patch + L_rand. Each part is pixel_loss on RGB plus MSE on depth.
/// Depth inputs are [N, 1]. Pass an invalid Var to skip the patch part.
OriTerms ori_loss(Var patch_rgb, const Tensor& patch_rgb_target, Var patch_depth,
                  const Tensor& patch_depth_target, Var rand_rgb, const Tensor& rand_rgb_target,
                  Var rand_depth, const Tensor& rand_depth_target);

/// Mean smooth-L1 over rows with valid[i] != 0. An empty valid set yields 0
/// and increments `*degenerate` when given.
Var masked_smooth_l1(Tape& tape, Var pred, const Tensor& target, const Mask& valid, double beta,
                     int* degenerate = nullptr);

/// Sum of the helix and spin masked smooth-L1 terms. Either prediction may be
/// an invalid Var when that family is absent; it then contributes 0.
Var depth_loss(Tape& tape, Var helix_pred, const Tensor& helix_target, const Mask& helix_valid, Var spin_pred,
               const Tensor& spin_target, const Mask& spin_valid, double beta = 1.0, int* degenerate = nullptr);

/// MSE between rendered-view features and (detached) target features.
Var vit_loss(Var rendered_features, const Tensor& target_features);

/// Mean absolute difference between visibility predictions and targets.
Var trans_loss(Var predictions, const Tensor& targets);

struct LossComponents {
  double depth = 0.0;
  double ori = 0.0;
  double vit = 0.0;
  double trans = 0.0;
};

/// Throws std::domain_error naming the first non-finite component.
void check_finite(const LossComponents& c);
double total_loss(const LossComponents& c, const LossWeights& w);
/// Weighted sum on the tape. Invalid Vars count as 0.
Var total_loss(Tape& tape, Var depth, Var ori, Var vit, Var trans, const LossWeights& w);

/// CSV log with columns iteration,L_depth,L_ori,L_ViT,L_trans,total.
class LossLogger {
 public:
  LossLogger(const std::filesystem::path& path, LossWeights weights, bool append = false);
  /// Throws std::logic_error when `total` is not the weighted component sum.
  void log(long iteration, const LossComponents& c, double total);

 private:
  std::ofstream out_;
  LossWeights weights_;
};

}  // namespace tubenerf
