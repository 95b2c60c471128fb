#include "tubenerf/losses.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace tubenerf {

void LossWeights::validate() const {
  if (!(depth >= 0.0) || !(ori >= 0.0) || !(vit >= 0.0) || !(trans >= 0.0)) {
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"depth", w.depth}, {"ori", w.ori}, {"vit", w.vit}, {"trans", w.trans}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.depth = j.value("depth", w.depth);
  w.ori = j.value("ori", w.ori);
  w.vit = j.value("vit", w.vit);
  w.trans = j.value("trans", w.trans);
}

namespace {

void require_same(const char* what, const Var& pred, const Tensor& target) {
  if (pred.value().size() != target.size() || pred.rows() != target.rows()) {
    throw std::invalid_argument(std::string(what) + ": prediction " + shape_string(pred.shape()) +
                                " vs target " + shape_string(target.shape()));
  }
}

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

}  // namespace

Var pixel_loss(Var pred, const Tensor& target) {
  require_same("pixel_loss", pred, target);
  Tape& tape = pred.tape();
  Var diff = ad::sub(pred, tape.constant(target.reshaped(pred.shape())));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(pred.rows()));
}

Var mse_loss(Var pred, const Tensor& target) {
  require_same("mse_loss", pred, target);
  Tape& tape = pred.tape();
  return ad::mean(ad::square(ad::sub(pred, tape.constant(target.reshaped(pred.shape())))));
}

OriTerms ori_loss(Var patch_rgb, const Tensor& patch_rgb_target, Var patch_depth,
                  const Tensor& patch_depth_target, Var rand_rgb, const Tensor& rand_rgb_target,
                  Var rand_depth, const Tensor& rand_depth_target) {
  Tape& tape = rand_rgb.tape();
  OriTerms t;
  t.rand = ad::add(pixel_loss(rand_rgb, rand_rgb_target), mse_loss(rand_depth, rand_depth_target));
  if (patch_rgb.valid()) {
    t.patch = ad::add(pixel_loss(patch_rgb, patch_rgb_target), mse_loss(patch_depth, patch_depth_target));
  } else {
    t.patch = zero(tape);
  }
  t.total = ad::add(t.patch, t.rand);
  return t;
}

Var masked_smooth_l1(Tape& tape, Var pred, const Tensor& target, const Mask& valid, double beta,
                     int* degenerate) {
  if (!pred.valid()) return zero(tape);
  require_same("masked_smooth_l1", pred, target);
  if (valid.size() != pred.rows()) {
    throw std::invalid_argument("masked_smooth_l1: mask has " + std::to_string(valid.size()) + " entries for " +
                                std::to_string(pred.rows()) + " rows");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) rows.push_back(i);
  }
  if (rows.empty()) {
    if (degenerate) ++*degenerate;
    return zero(tape);
  }
  const std::size_t cols = pred.cols();
  Tensor t = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] = target[rows[r] * cols + c];
  }
  Var p = ad::gather_rows(ad::reshape(pred, {pred.rows(), cols}), rows);
  return ad::mean(ad::smooth_l1(ad::sub(p, tape.constant(std::move(t))), beta));
}

Var depth_loss(Tape& tape, Var helix_pred, const Tensor& helix_target, const Mask& helix_valid, Var spin_pred,
               const Tensor& spin_target, const Mask& spin_valid, double beta, int* degenerate) {
  return ad::add(masked_smooth_l1(tape, helix_pred, helix_target, helix_valid, beta, degenerate),
                 masked_smooth_l1(tape, spin_pred, spin_target, spin_valid, beta, degenerate));
}

Var vit_loss(Var rendered_features, const Tensor& target_features) {
  if (rendered_features.shape() != target_features.shape()) {
    throw std::invalid_argument("vit_loss: feature maps " + shape_string(rendered_features.shape()) + " vs " +
                                shape_string(target_features.shape()));
  }
  return mse_loss(rendered_features, target_features);
}

Var trans_loss(Var predictions, const Tensor& targets) {
  require_same("trans_loss", predictions, targets);
  Tape& tape = predictions.tape();
  return ad::mean(ad::abs(ad::sub(predictions, tape.constant(targets.reshaped(predictions.shape())))));
}

void check_finite(const LossComponents& c) {
  const std::pair<const char*, double> parts[] = {
      {"L_depth", c.depth}, {"L_ori", c.ori}, {"L_ViT", c.vit}, {"L_trans", c.trans}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite loss component ") + name);
  }
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  check_finite(c);
  return w.depth * c.depth + w.ori * c.ori + w.vit * c.vit + w.trans * c.trans;
}

Var total_loss(Tape& tape, Var depth, Var ori, Var vit, Var trans, const LossWeights& w) {
  LossComponents c;
  c.depth = depth.valid() ? depth.item() : 0.0;
  c.ori = ori.valid() ? ori.item() : 0.0;
  c.vit = vit.valid() ? vit.item() : 0.0;
  c.trans = trans.valid() ? trans.item() : 0.0;
  check_finite(c);
  Var total = zero(tape);
  const std::pair<Var, double> terms[] = {{depth, w.depth}, {ori, w.ori}, {vit, w.vit}, {trans, w.trans}};
  for (const auto& [v, weight] : terms) {
    if (v.valid()) total = ad::add(total, ad::scale(v, weight));
  }
  return total;
}

LossLogger::LossLogger(const std::filesystem::path& path, LossWeights weights, bool append)
    : weights_(weights) {
  const bool fresh = !append || !std::filesystem::exists(path);
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open loss log " + path.string());
  if (fresh) out_ << "iteration,L_depth,L_ori,L_ViT,L_trans,total\n";
}

void LossLogger::log(long iteration, const LossComponents& c, double total) {
  const double expected = total_loss(c, weights_);
  if (std::abs(expected - total) > 1e-9 * std::max(1.0, std::abs(expected))) {
    throw std::logic_error("LossLogger: total " + std::to_string(total) + " differs from weighted sum " +
                           std::to_string(expected));
  }
  char line[256];
  std::snprintf(line, sizeof line, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", iteration, c.depth, c.ori, c.vit,
                c.trans, total);
  out_ << line;
  out_.flush();
}

}  // namespace tubenerf
