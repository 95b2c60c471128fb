#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every op applied to its Vars in creation order, so the node
// list is topologically sorted by construction. backward() walks it once in
// reverse. Trainable tensors live in a ParameterSet; a tape references them
// through leaf nodes and adds the leaf gradients into Parameter::grad at the
// end of every backward pass (repeated passes accumulate).

#include "tubenerf/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace tubenerf {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Named registry of trainable tensors. References stay valid on insertion.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  /// Gradient from the most recent backward pass (zeros when unreached).
  const Tensor& grad() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// With record_gradients = false the tape only evaluates values.
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Leaf that receives gradients but is not registered as a parameter.
  Var variable(Tensor value);
  /// Leaf bound to a registered parameter.
  Var parameter(Parameter& p);

  /// Loss must be a one-element node.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

  // Op-author interface.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  /// Gradient buffer of `id`, allocated (zeros) on first access.
  Tensor& grad_buffer(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  Tensor empty_grad_;
};

/// Outputs of the fused volume-compositing op.
struct CompositeResult {
  Var rgb;    // [R, 3]
  Var depth;  // [R, 1] expected termination distance
  Var acc;    // [R, 1] sum of weights
  Tensor transmittance;        // [R, S] T_j, detached
  Tensor weights;              // [R, S] w_j, detached
  Tensor final_transmittance;  // [R, 1]
};

namespace ad {

Var matmul(Var a, Var b);
/// x * w + b with b a single row; fused for speed.
Var linear(Var x, Var w, Var b);
/// Elementwise binary ops; `b` may also be a single row broadcast over a's rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);

/// Concatenate along columns (axis 1) or rows (axis 0).
Var concat(const std::vector<Var>& parts, int axis = 1);
/// Half-open range [begin, end) along columns (axis 1) or rows (axis 0).
Var slice(Var a, int axis, std::size_t begin, std::size_t end);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
Var reshape(Var a, std::vector<std::size_t> shape);
Var detach(Var a);

Var sum(Var a);
Var mean(Var a);
/// Row-wise sum, [N, F] -> [N, 1].
Var sum_cols(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var abs(Var a);
Var square(Var a);
Var clamp_max(Var a, double hi);
/// 0.5 x^2 / beta when |x| < beta, |x| - 0.5 beta otherwise.
Var smooth_l1(Var a, double beta);

/// Alpha compositing of per-sample densities along rays.
/// sigma: [R, S] non-negative densities; color: [R, S*3]; tvals, deltas: [R, S].
/// `background` is added with weight T_final when `use_background` is set.
CompositeResult composite(Var sigma, Var color, const Tensor& tvals, const Tensor& deltas,
                          const double background[3], bool use_background);

/// Patch extraction for a 2D convolution on an image stored as [H*W, C].
/// Output is [Ho*Wo, k*k*C] with zero padding.
Var im2col(Var image, int height, int width, int kernel, int stride, int pad);
int conv_output_size(int input, int kernel, int stride, int pad);

/// Per-row L2 normalization: x / sqrt(|x|^2 + eps).
Var l2_normalize_rows(Var a, double eps = 1e-12);

}  // namespace ad

}  // namespace tubenerf
