#include "tubenerf/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace tubenerf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

// Eigen picks vectorization peeling from the runtime address of its operands,
// which makes results depend on where std::vector happened to allocate. Products
// therefore run on Eigen-owned (aligned) copies so identical inputs give
// bit-identical outputs.
void load(RowMatrix& m, const Tensor& t) {
  m.resize(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  std::copy(t.data(), t.data() + t.size(), m.data());
}

enum class Op { plain, transposed };

// out (+)= op(a) * op(b)
void product(const Tensor& a, Op ta, const Tensor& b, Op tb, Tensor& out, bool accumulate) {
  thread_local RowMatrix ma;
  thread_local RowMatrix mb;
  thread_local RowMatrix mc;
  load(ma, a);
  load(mb, b);
  if (ta == Op::transposed && tb == Op::plain) {
    mc.noalias() = ma.transpose() * mb;
  } else if (ta == Op::plain && tb == Op::transposed) {
    mc.noalias() = ma * mb.transpose();
  } else if (ta == Op::plain) {
    mc.noalias() = ma * mb;
  } else {
    mc.noalias() = ma.transpose() * mb.transpose();
  }
  double* o = out.data();
  const double* c = mc.data();
  if (accumulate) {
    for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] += c[i];
  } else {
    std::copy(c, c + out.size(), o);
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                              " and " + shape_string(b.shape()));
}

// True when b is a single row broadcast over a's rows.
bool check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() == b.size() && a.rows() == b.rows()) return false;
  if (b.rows() == 1 && b.cols() == a.cols()) return true;
  shape_error(op, a, b);
}

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const double* xs = x.data();
  double* ys = y.data();
  for (std::size_t i = 0, n = x.size(); i < n; ++i) ys[i] = f(xs[i]);
  return a.tape().push(std::move(y), {a.id()}, [df, ia = a.id()](Tape& t, std::size_t self) {
    const double* xs = t.value(ia).data();
    const double* ys = t.value(self).data();
    const double* g = t.grad(self).data();
    double* gx = t.grad_buffer(ia).data();
    for (std::size_t i = 0, n = t.value(ia).size(); i < n; ++i) gx[i] += g[i] * df(xs[i], ys[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParameterSet: duplicate parameter " + name);
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor::zeros_like(value);
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter& ParameterSet::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("ParameterSet: no parameter named " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("ParameterSet: no parameter named " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = record_ && p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) {
    // Unreached nodes report zeros.
    auto& self = const_cast<Tape&>(*this);
    self.nodes_[id].grad = Tensor::zeros_like(n.value);
  }
  return nodes_[id].grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(loss.value().shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param && n.requires_grad && !n.grad.empty()) {
      if (n.param->grad.size() != n.grad.size()) n.param->grad = Tensor::zeros_like(n.param->value);
      add_into(n.param->grad, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ad {

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  product(x, Op::plain, y, Op::plain, out, false);
  return a.tape().push(std::move(out), {a.id(), b.id()},
                       [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.grad(self);
                         if (t.requires_grad(ia)) {
                           product(g, Op::plain, t.value(ib), Op::transposed, t.grad_buffer(ia), true);
                         }
                         if (t.requires_grad(ib)) {
                           product(t.value(ia), Op::transposed, g, Op::plain, t.grad_buffer(ib), true);
                         }
                       });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows()) shape_error("linear", xv, wv);
  if (bv.size() != wv.cols()) shape_error("linear", wv, bv);
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  product(xv, Op::plain, wv, Op::plain, out, false);
  const std::size_t cols = wv.cols();
  for (std::size_t r = 0, rows = xv.rows(); r < rows; ++r) {
    double* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bv[c];
  }
  return x.tape().push(std::move(out), {x.id(), w.id(), b.id()},
                       [ix = x.id(), iw = w.id(), ib = b.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.grad(self);
                         if (t.requires_grad(ix)) {
                           product(g, Op::plain, t.value(iw), Op::transposed, t.grad_buffer(ix), true);
                         }
                         if (t.requires_grad(iw)) {
                           product(t.value(ix), Op::transposed, g, Op::plain, t.grad_buffer(iw), true);
                         }
                         if (t.requires_grad(ib)) {
                           Tensor& gb = t.grad_buffer(ib);
                           const std::size_t cols = gb.size();
                           for (std::size_t r = 0, rows = g.rows(); r < rows; ++r) {
                             const double* row = g.data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) gb[c] += row[c];
                           }
                         }
                       });
}

namespace {

template <typename F, typename GA, typename GB>
Var binary(const char* name, Var a, Var b, F f, GA ga, GB gb) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bcast = check_broadcast(name, x, y);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const double* yr = y.data() + (bcast ? 0 : r * cols);
    double* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] = f(xr[c], yr[c]);
  }
  return a.tape().push(std::move(out), {a.id(), b.id()},
                       [ga, gb, bcast, rows, cols, ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                         const Tensor& x = t.value(ia);
                         const Tensor& y = t.value(ib);
                         const Tensor& g = t.grad(self);
                         const bool need_x = t.requires_grad(ia);
                         const bool need_y = t.requires_grad(ib);
                         double* gx = need_x ? t.grad_buffer(ia).data() : nullptr;
                         double* gy = need_y ? t.grad_buffer(ib).data() : nullptr;
                         for (std::size_t r = 0; r < rows; ++r) {
                           const std::size_t xo = r * cols;
                           const std::size_t yo = bcast ? 0 : r * cols;
                           for (std::size_t c = 0; c < cols; ++c) {
                             const double xv = x[xo + c];
                             const double yv = y[yo + c];
                             if (need_x) gx[xo + c] += g[xo + c] * ga(xv, yv);
                             if (need_y) gy[yo + c] += g[xo + c] * gb(xv, yv);
                           }
                         }
                       });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  Tape& tape = parts.front().tape();
  if (axis == 1) {
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
      if (p.rows() != rows) shape_error("concat", parts.front().value(), p.value());
      cols += p.cols();
    }
    Tensor out = Tensor::matrix(rows, cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const Tensor& v = p.value();
      const std::size_t pc = v.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(v.data() + r * pc, pc, out.data() + r * cols + offset);
      }
      offset += pc;
    }
    return tape.push(std::move(out), ids, [ids, rows, cols](Tape& t, std::size_t self) {
      const Tensor& g = t.grad(self);
      std::size_t offset = 0;
      for (auto id : ids) {
        const std::size_t pc = t.value(id).cols();
        if (t.requires_grad(id)) {
          Tensor& gi = t.grad_buffer(id);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < pc; ++c) gi[r * pc + c] += g[r * cols + offset + c];
          }
        }
        offset += pc;
      }
    });
  }
  if (axis != 0) throw std::invalid_argument("concat: axis must be 0 or 1");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat", parts.front().value(), p.value());
    rows += p.rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset);
    offset += p.value().size();
  }
  return tape.push(std::move(out), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Tensor& gi = t.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  const std::size_t limit = axis == 0 ? rows : cols;
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  if (begin >= end || end > limit) {
    throw std::out_of_range("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") invalid for shape " + shape_string(x.shape()));
  }
  if (axis == 0) {
    Tensor out = Tensor::matrix(end - begin, cols);
    std::copy_n(x.data() + begin * cols, (end - begin) * cols, out.data());
    return a.tape().push(std::move(out), {a.id()}, [ia = a.id(), begin, cols](Tape& t, std::size_t self) {
      const Tensor& g = t.grad(self);
      Tensor& gx = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
    });
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * cols + begin, w, out.data() + r * w);
  return a.tape().push(std::move(out), {a.id()},
                       [ia = a.id(), begin, w, rows, cols](Tape& t, std::size_t self) {
                         const Tensor& g = t.grad(self);
                         Tensor& gx = t.grad_buffer(ia);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
                         }
                       });
}

Var gather_rows(Var a, const std::vector<std::size_t>& row_ids) {
  const Tensor& x = a.value();
  const std::size_t cols = x.cols();
  if (row_ids.empty()) throw std::invalid_argument("gather_rows: empty index list");
  Tensor out = Tensor::matrix(row_ids.size(), cols);
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    if (row_ids[i] >= x.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(x.data() + row_ids[i] * cols, cols, out.data() + i * cols);
  }
  return a.tape().push(std::move(out), {a.id()}, [ia = a.id(), row_ids, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gx[row_ids[i] * cols + c] += g[i * cols + c];
    }
  });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().push(std::move(out), {a.id()}, [ia = a.id()](Tape& t, std::size_t self) {
    add_into(t.grad_buffer(ia), t.grad(self));
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().push(Tensor::scalar(s), {a.id()}, [ia = a.id()](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).values()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_cols(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c];
    out[r] = s;
  }
  return a.tape().push(std::move(out), {a.id()}, [ia = a.id(), rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
    }
  });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var sin(Var a) {
  return unary(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp_max(Var a, double hi) {
  return unary(
      a, [hi](double x) { return x < hi ? x : hi; }, [hi](double x, double) { return x < hi ? 1.0 : 0.0; });
}

Var smooth_l1(Var a, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  return unary(
      a,
      [beta](double x) {
        const double ax = std::abs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x, double) {
        if (std::abs(x) < beta) return x / beta;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

CompositeResult composite(Var sigma, Var color, const Tensor& tvals, const Tensor& deltas,
                          const double background[3], bool use_background) {
  const Tensor& s = sigma.value();
  const std::size_t R = s.rows();
  const std::size_t S = s.cols();
  if (color.value().rows() != R || color.value().cols() != 3 * S) {
    shape_error("composite(color)", s, color.value());
  }
  if (tvals.size() != R * S || deltas.size() != R * S) shape_error("composite(tvals)", s, tvals);
  const Tensor& c = color.value();

  CompositeResult res;
  res.transmittance = Tensor::matrix(R, S);
  res.weights = Tensor::matrix(R, S);
  res.final_transmittance = Tensor::matrix(R, 1);
  Tensor rgb = Tensor::matrix(R, 3);
  Tensor depth = Tensor::matrix(R, 1);
  Tensor acc = Tensor::matrix(R, 1);
  const std::array<double, 3> bg{background[0], background[1], background[2]};

  for (std::size_t r = 0; r < R; ++r) {
    double T = 1.0;
    double a = 0.0;
    double num = 0.0;
    double col[3] = {0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < S; ++j) {
      const std::size_t k = r * S + j;
      const double trans = std::exp(-s[k] * deltas[k]);
      const double w = T * (1.0 - trans);
      res.transmittance[k] = T;
      res.weights[k] = w;
      a += w;
      num += w * tvals[k];
      for (int ch = 0; ch < 3; ++ch) col[ch] += w * c[r * 3 * S + 3 * j + ch];
      T *= trans;
    }
    res.final_transmittance[r] = T;
    for (int ch = 0; ch < 3; ++ch) rgb[r * 3 + ch] = col[ch] + (use_background ? T * bg[ch] : 0.0);
    acc[r] = a;
    depth[r] = num / std::max(a, 1e-8);
  }

  Tape& tape = sigma.tape();
  // The three outputs share one backward node: rgb, depth and acc are views
  // into a packed [R, 5] tensor so gradients from all of them meet in one place.
  Tensor packed = Tensor::matrix(R, 5);
  for (std::size_t r = 0; r < R; ++r) {
    packed[r * 5 + 0] = rgb[r * 3 + 0];
    packed[r * 5 + 1] = rgb[r * 3 + 1];
    packed[r * 5 + 2] = rgb[r * 3 + 2];
    packed[r * 5 + 3] = depth[r];
    packed[r * 5 + 4] = acc[r];
  }
  Tensor T_all = res.transmittance;
  Tensor W_all = res.weights;
  Tensor T_final = res.final_transmittance;
  Var node = tape.push(
      std::move(packed), {sigma.id(), color.id()},
      [is = sigma.id(), ic = color.id(), tvals, deltas, T_all, W_all, T_final, bg, use_background, R,
       S](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& c = t.value(ic);
        const Tensor& out = t.value(self);
        const bool need_s = t.requires_grad(is);
        const bool need_c = t.requires_grad(ic);
        Tensor* gs = need_s ? &t.grad_buffer(is) : nullptr;
        Tensor* gc = need_c ? &t.grad_buffer(ic) : nullptr;
        for (std::size_t r = 0; r < R; ++r) {
          const double gC[3] = {g[r * 5 + 0], g[r * 5 + 1], g[r * 5 + 2]};
          const double gD = g[r * 5 + 3];
          const double gA = g[r * 5 + 4];
          const double a = out[r * 5 + 4];
          const double D = out[r * 5 + 3];
          const bool guarded = !(a > 1e-8);
          const double Tf = T_final[r];
          double suffix_c[3] = {0.0, 0.0, 0.0};
          double suffix_t = 0.0;
          double suffix_w = 0.0;
          for (std::size_t j = S; j-- > 0;) {
            const std::size_t k = r * S + j;
            const double w = W_all[k];
            const double T_next = T_all[k] - w;
            const double* ck = c.data() + r * 3 * S + 3 * j;
            if (need_c) {
              for (int ch = 0; ch < 3; ++ch) (*gc)[r * 3 * S + 3 * j + ch] += w * gC[ch];
            }
            if (need_s) {
              double gE = 0.0;
              for (int ch = 0; ch < 3; ++ch) {
                double d = T_next * ck[ch] - suffix_c[ch];
                if (use_background) d -= Tf * bg[ch];
                gE += gC[ch] * d;
              }
              const double d_acc = T_next - suffix_w;
              const double d_num = T_next * tvals[k] - suffix_t;
              gE += gA * d_acc;
              gE += gD * (guarded ? d_num / 1e-8 : (d_num - D * d_acc) / a);
              (*gs)[k] += gE * deltas[k];
            }
            for (int ch = 0; ch < 3; ++ch) suffix_c[ch] += w * ck[ch];
            suffix_t += w * tvals[k];
            suffix_w += w;
          }
        }
      });
  res.rgb = slice(node, 1, 0, 3);
  res.depth = slice(node, 1, 3, 4);
  res.acc = slice(node, 1, 4, 5);
  return res;
}

int conv_output_size(int input, int kernel, int stride, int pad) {
  return (input + 2 * pad - kernel) / stride + 1;
}

Var im2col(Var image, int height, int width, int kernel, int stride, int pad) {
  const Tensor& x = image.value();
  const std::size_t C = x.cols();
  if (x.rows() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("im2col: image rows " + std::to_string(x.rows()) + " != " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  const int Ho = conv_output_size(height, kernel, stride, pad);
  const int Wo = conv_output_size(width, kernel, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("im2col: image smaller than kernel");
  const std::size_t patch = static_cast<std::size_t>(kernel) * kernel * C;
  // Source row per (output pixel, tap); -1 marks padding.
  std::vector<long> src(static_cast<std::size_t>(Ho) * Wo * kernel * kernel, -1);
  Tensor out = Tensor::matrix(static_cast<std::size_t>(Ho) * Wo, patch);
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      const std::size_t o = static_cast<std::size_t>(oy) * Wo + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const int iy = oy * stride - pad + ky;
          const int ix = ox * stride - pad + kx;
          const std::size_t tap = static_cast<std::size_t>(ky) * kernel + kx;
          if (iy < 0 || ix < 0 || iy >= height || ix >= width) continue;
          const long row = static_cast<long>(iy) * width + ix;
          src[o * kernel * kernel + tap] = row;
          std::copy_n(x.data() + row * C, C, out.data() + o * patch + tap * C);
        }
      }
    }
  }
  const std::size_t taps = static_cast<std::size_t>(kernel) * kernel;
  return image.tape().push(std::move(out), {image.id()},
                           [ii = image.id(), src = std::move(src), C, patch, taps](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             Tensor& gx = t.grad_buffer(ii);
                             for (std::size_t i = 0; i < src.size(); ++i) {
                               if (src[i] < 0) continue;
                               const std::size_t o = i / taps;
                               const std::size_t tap = i % taps;
                               const double* gp = g.data() + o * patch + tap * C;
                               double* dst = gx.data() + static_cast<std::size_t>(src[i]) * C;
                               for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += gp[ch];
                             }
                           });
}

Var l2_normalize_rows(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c] * x[r * cols + c];
    norms[r] = std::sqrt(s + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / norms[r];
  }
  return a.tape().push(std::move(out), {a.id()},
                       [ia = a.id(), norms = std::move(norms), rows, cols](Tape& t, std::size_t self) {
                         const Tensor& y = t.value(self);
                         const Tensor& g = t.grad(self);
                         Tensor& gx = t.grad_buffer(ia);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double yg = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) yg += y[r * cols + c] * g[r * cols + c];
                           for (std::size_t c = 0; c < cols; ++c) {
                             gx[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * yg) / norms[r];
                           }
                         }
                       });
}

}  // namespace ad

}  // namespace tubenerf
