// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "m3rec/errors.hpp"
#include "m3rec/matrix.hpp"

namespace m3rec {

// A named trainable tensor. `grad` is scratch storage written during backward
// passes; it is mutable so that inference over a const model stays const.
struct Parameter {
  std::string name;
  Matrix value;
  mutable Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() const { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

// Handle to one tape node. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  bool valid() const { return tape != nullptr; }
  const Matrix& value() const;
  Matrix grad() const;
};

// Record of forward operations for one reverse sweep. Nodes are replayed in
// exact reverse creation order; a node's backward reads its own accumulated
// grad and adds contributions into its parents' grads. Confined to a single
// thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
    backward_done_ = false;
  }

  Var constant(Matrix v) { return push(std::move(v), {}); }

  // Leaf for a trainable parameter. Repeated uses of the same parameter on one
  // tape share a node, so gradient contributions accumulate additively before
  // being flushed into Parameter::grad.
  Var param(const Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    const Parameter* ptr = &p;
    Var v = push(p.value, [ptr](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (ptr->grad.empty()) ptr->grad = Matrix(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ptr->grad[i] += g[i];
    });
    param_nodes_.emplace(ptr, v.idx);
    return v;
  }

  // Reverse sweep from a scalar loss. Each recorded operation is visited once,
  // in reverse forward order. Running it again without new forward work is an
  // error by contract.
  void backward(Var loss) {
    check_mine(loss);
    if (backward_done_)
      throw TapeError("Tape::backward: already run; record new forward ops first");
    const Matrix& lv = nodes_[loss.idx].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ShapeError("Tape::backward: loss must be 1x1, got " + lv.shape_str());
    grad_buf(loss.idx)[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      if (n.grad.empty()) continue;  // no gradient flowed here
      n.backward(*this, i);
    }
    backward_done_ = true;
  }

  const Matrix& value_of(std::size_t idx) const { return nodes_[idx].value; }

  Matrix grad_of(std::size_t idx) const {
    const Node& n = nodes_[idx];
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Matrix value;
    Matrix grad;  // empty until something accumulates into it
    BackwardFn backward;
  };
  // deque: node references handed out via Var::value() stay valid across pushes

  Var push(Matrix value, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(fn)});
    backward_done_ = false;
    return Var{this, nodes_.size() - 1};
  }

  Matrix& grad_buf(std::size_t idx) {
    Node& n = nodes_[idx];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void check_mine(Var v) const {
    if (v.tape != this || v.idx >= nodes_.size())
      throw TapeError("Var does not belong to this tape");
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;

  friend struct Var;
  friend class TapeOps;
};

inline const Matrix& Var::value() const { return tape->value_of(idx); }
inline Matrix Var::grad() const { return tape->grad_of(idx); }

// All op implementations funnel through here to reach tape internals.
class TapeOps {
 public:
  static Var push(Tape& t, Matrix v, Tape::BackwardFn fn) {
    return t.push(std::move(v), std::move(fn));
  }
  static Matrix& grad_buf(Tape& t, std::size_t idx) { return t.grad_buf(idx); }
  static const Matrix& val(Tape& t, std::size_t idx) { return t.nodes_[idx].value; }
  static void check(const Var& a) {
    if (!a.valid()) throw TapeError("operation on invalid Var");
  }
  static Tape& same_tape(const Var& a, const Var& b) {
    if (a.tape == nullptr || a.tape != b.tape)
      throw TapeError("operands recorded on different tapes");
    return *a.tape;
  }
};

namespace detail {

// C (+)= A * B
inline void mm(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    double* crow = c.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A * B^T
inline void mm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    double* crow = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C (+)= A^T * B
inline void mm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a.data() + p * n;
    const double* brow = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Each returns a new tape node; backward closures capture parent indices
// only, never references into the node vector.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: " + av.shape_str() + " * " + bv.shape_str());
  Matrix out(av.rows(), bv.cols());
  detail::mm(av, bv, out);
  std::size_t ai = a.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    detail::mm_nt(up, TapeOps::val(tp, bi), TapeOps::grad_buf(tp, ai));  // dA += dC * B^T
    detail::mm_tn(TapeOps::val(tp, ai), up, TapeOps::grad_buf(tp, bi));  // dB += A^T * dC
  });
}

// A * B^T without materializing the transpose.
inline Var matmul_nt(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw ShapeError("matmul_nt: " + av.shape_str() + " * (" + bv.shape_str() + ")^T");
  Matrix out(av.rows(), bv.rows());
  detail::mm_nt(av, bv, out);
  std::size_t ai = a.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    detail::mm(up, TapeOps::val(tp, bi), TapeOps::grad_buf(tp, ai));     // dA += dC * B
    detail::mm_tn(up, TapeOps::val(tp, ai), TapeOps::grad_buf(tp, bi));  // dB += dC^T * A
  });
}

// A^T * B without materializing the transpose.
inline Var matmul_tn(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows())
    throw ShapeError("matmul_tn: (" + av.shape_str() + ")^T * " + bv.shape_str());
  Matrix out(av.cols(), bv.cols());
  detail::mm_tn(av, bv, out);
  std::size_t ai = a.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    detail::mm_nt(TapeOps::val(tp, bi), up, TapeOps::grad_buf(tp, ai));  // dA += B * dC^T
    detail::mm(TapeOps::val(tp, ai), up, TapeOps::grad_buf(tp, bi));     // dB += A * dC
  });
}

inline Var add(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "add");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  std::size_t ai = a.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& ga = TapeOps::grad_buf(tp, ai);
    Matrix& gb = TapeOps::grad_buf(tp, bi);
    for (std::size_t i = 0; i < up.size(); ++i) {
      ga[i] += up[i];
      gb[i] += up[i];
    }
  });
}

// Sum of same-shaped vars in one node (used for batch losses).
inline Var add_all(std::span<const Var> xs) {
  if (xs.empty()) throw ConfigError("add_all: empty operand list");
  Tape& t = *xs.front().tape;
  Matrix out = xs.front().value();
  std::vector<std::size_t> parents;
  parents.reserve(xs.size());
  parents.push_back(xs.front().idx);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    TapeOps::same_tape(xs.front(), xs[k]);
    const Matrix& v = xs[k].value();
    require_same_shape(out, v, "add_all");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    parents.push_back(xs[k].idx);
  }
  return TapeOps::push(t, std::move(out),
                       [parents = std::move(parents)](Tape& tp, std::size_t self) {
                         const Matrix& up = tp.grad_of(self);
                         for (std::size_t p : parents) {
                           Matrix& g = TapeOps::grad_buf(tp, p);
                           for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
                         }
                       });
}

// M (n x d) plus column vector b (d x 1) added to every row.
inline Var add_bias_rows(Var m, Var b) {
  Tape& t = TapeOps::same_tape(m, b);
  const Matrix& mv = m.value();
  const Matrix& bv = b.value();
  if (!bv.is_column_vector() || bv.rows() != mv.cols())
    throw ShapeError("add_bias_rows: " + mv.shape_str() + " with bias " + bv.shape_str());
  Matrix out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  std::size_t mi = m.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [mi, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& gm = TapeOps::grad_buf(tp, mi);
    Matrix& gb = TapeOps::grad_buf(tp, bi);
    for (std::size_t r = 0; r < up.rows(); ++r)
      for (std::size_t c = 0; c < up.cols(); ++c) {
        gm(r, c) += up(r, c);
        gb[c] += up(r, c);
      }
  });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "hadamard");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  std::size_t ai = a.idx, bi = b.idx;
  return TapeOps::push(t, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    const Matrix& av2 = TapeOps::val(tp, ai);
    const Matrix& bv2 = TapeOps::val(tp, bi);
    Matrix& ga = TapeOps::grad_buf(tp, ai);
    Matrix& gb = TapeOps::grad_buf(tp, bi);
    for (std::size_t i = 0; i < up.size(); ++i) {
      ga[i] += up[i] * bv2[i];
      gb[i] += up[i] * av2[i];
    }
  });
}

enum class Activation { sigmoid, tanh, relu };

inline Var elementwise(Activation f, Var x) {
  TapeOps::check(x);
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix out = xv;
  switch (f) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
      break;
  }
  std::size_t xi = x.idx;
  // sigma' = y(1-y); tanh' = 1-y^2; relu' = 1 for x>0 (y>0 iff x>0), else 0
  return TapeOps::push(t, std::move(out), [xi, f](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    const Matrix& y = TapeOps::val(tp, self);
    Matrix& gx = TapeOps::grad_buf(tp, xi);
    switch (f) {
      case Activation::sigmoid:
        for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::relu:
        for (std::size_t i = 0; i < up.size(); ++i) gx[i] += y[i] > 0.0 ? up[i] : 0.0;
        break;
    }
  });
}

inline Var sigmoid(Var x) { return elementwise(Activation::sigmoid, x); }
inline Var tanh(Var x) { return elementwise(Activation::tanh, x); }
inline Var relu(Var x) { return elementwise(Activation::relu, x); }

// mul * x + shift, entrywise with scalar constants.
inline Var scalar_affine(Var x, double mul, double shift) {
  TapeOps::check(x);
  Tape& t = *x.tape;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul * out[i] + shift;
  std::size_t xi = x.idx;
  return TapeOps::push(t, std::move(out), [xi, mul](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& gx = TapeOps::grad_buf(tp, xi);
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] += mul * up[i];
  });
}

// Column-vector concatenation (x stacked over y).
inline Var vconcat(Var x, Var y) {
  Tape& t = TapeOps::same_tape(x, y);
  const Matrix& xv = x.value();
  const Matrix& yv = y.value();
  if (!xv.is_column_vector() && !xv.empty())
    throw ShapeError("vconcat: left operand is not a column vector: " + xv.shape_str());
  if (!yv.is_column_vector() && !yv.empty())
    throw ShapeError("vconcat: right operand is not a column vector: " + yv.shape_str());
  Matrix out(xv.rows() + yv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) out[i] = xv[i];
  for (std::size_t i = 0; i < yv.rows(); ++i) out[xv.rows() + i] = yv[i];
  std::size_t xi = x.idx, yi = y.idx, nx = xv.rows();
  return TapeOps::push(t, std::move(out), [xi, yi, nx](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& gx = TapeOps::grad_buf(tp, xi);
    Matrix& gy = TapeOps::grad_buf(tp, yi);
    for (std::size_t i = 0; i < nx; ++i) gx[i] += up[i];
    for (std::size_t i = nx; i < up.size(); ++i) gy[i - nx] += up[i];
  });
}

// Horizontal concatenation [A | B] of matrices with equal row counts.
inline Var hconcat(Var a, Var b) {
  Tape& t = TapeOps::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows())
    throw ShapeError("hconcat: " + av.shape_str() + " | " + bv.shape_str());
  Matrix out(av.rows(), av.cols() + bv.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
    for (std::size_t c = 0; c < bv.cols(); ++c) out(r, av.cols() + c) = bv(r, c);
  }
  std::size_t ai = a.idx, bi = b.idx, ac = av.cols();
  return TapeOps::push(t, std::move(out), [ai, bi, ac](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& ga = TapeOps::grad_buf(tp, ai);
    Matrix& gb = TapeOps::grad_buf(tp, bi);
    for (std::size_t r = 0; r < up.rows(); ++r) {
      for (std::size_t c = 0; c < ac; ++c) ga(r, c) += up(r, c);
      for (std::size_t c = ac; c < up.cols(); ++c) gb(r, c - ac) += up(r, c);
    }
  });
}

// Row r of M as a column vector.
inline Var row_as_col(Var m, std::size_t row) {
  TapeOps::check(m);
  Tape& t = *m.tape;
  const Matrix& mv = m.value();
  if (row >= mv.rows())
    throw ShapeError("row_as_col: row " + std::to_string(row) + " out of " +
                     mv.shape_str());
  Matrix out(mv.cols(), 1);
  for (std::size_t c = 0; c < mv.cols(); ++c) out[c] = mv(row, c);
  std::size_t mi = m.idx;
  return TapeOps::push(t, std::move(out), [mi, row](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    Matrix& gm = TapeOps::grad_buf(tp, mi);
    for (std::size_t c = 0; c < up.rows(); ++c) gm(row, c) += up[c];
  });
}

// Rows of a table gathered by id; backward scatters into the selected rows.
inline Var take_rows(Var table, std::span<const std::uint32_t> ids) {
  TapeOps::check(table);
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows())
      throw LookupError("take_rows: id " + std::to_string(ids[r]) + " out of table " +
                        tv.shape_str());
    for (std::size_t c = 0; c < tv.cols(); ++c) out(r, c) = tv(ids[r], c);
  }
  std::size_t ti = table.idx;
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return TapeOps::push(t, std::move(out),
                       [ti, idv = std::move(idv)](Tape& tp, std::size_t self) {
                         const Matrix& up = tp.grad_of(self);
                         Matrix& gt = TapeOps::grad_buf(tp, ti);
                         for (std::size_t r = 0; r < idv.size(); ++r)
                           for (std::size_t c = 0; c < up.cols(); ++c)
                             gt(idv[r], c) += up(r, c);
                       });
}

// Numerically stable softmax over a column vector (max-subtraction).
inline Var softmax(Var z) {
  TapeOps::check(z);
  Tape& t = *z.tape;
  const Matrix& zv = z.value();
  if (zv.empty()) throw ConfigError("softmax: empty vector");
  if (!zv.is_column_vector())
    throw ShapeError("softmax: expected column vector, got " + zv.shape_str());
  double mx = zv[0];
  for (std::size_t i = 1; i < zv.size(); ++i) mx = std::max(mx, zv[i]);
  Matrix out(zv.rows(), 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    out[i] = std::exp(zv[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sum;
  std::size_t zi = z.idx;
  // dz = y .* (dy - <dy, y>)
  return TapeOps::push(t, std::move(out), [zi](Tape& tp, std::size_t self) {
    const Matrix& up = tp.grad_of(self);
    const Matrix& y = TapeOps::val(tp, self);
    double dot = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) dot += up[i] * y[i];
    Matrix& gz = TapeOps::grad_buf(tp, zi);
    for (std::size_t i = 0; i < up.size(); ++i) gz[i] += y[i] * (up[i] - dot);
  });
}

// Fused -log softmax(logits)[target]; never materializes log of a tiny
// probability. Backward is softmax(logits) - onehot(target).
inline Var softmax_cross_entropy(Var logits, std::size_t target) {
  TapeOps::check(logits);
  Tape& t = *logits.tape;
  const Matrix& zv = logits.value();
  if (!zv.is_column_vector() || zv.empty())
    throw ShapeError("softmax_cross_entropy: expected nonempty column vector, got " +
                     zv.shape_str());
  if (target >= zv.rows())
    throw LookupError("softmax_cross_entropy: target " + std::to_string(target) +
                      " out of range " + std::to_string(zv.rows()));
  double mx = zv[0];
  for (std::size_t i = 1; i < zv.size(); ++i) mx = std::max(mx, zv[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) sum += std::exp(zv[i] - mx);
  const double lse = std::log(sum) + mx;
  Matrix out(1, 1);
  out[0] = lse - zv[target];
  std::size_t zi = logits.idx;
  return TapeOps::push(t, std::move(out), [zi, target, lse](Tape& tp, std::size_t self) {
    const double up = tp.grad_of(self)[0];
    const Matrix& zv2 = TapeOps::val(tp, zi);
    Matrix& gz = TapeOps::grad_buf(tp, zi);
    for (std::size_t i = 0; i < zv2.size(); ++i) {
      double p = std::exp(zv2[i] - lse);
      gz[i] += up * (p - (i == target ? 1.0 : 0.0));
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient verification oracle: central finite differences per coordinate.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// `eval(with_grad)` computes the scalar objective; when with_grad is true it
// must also run a backward pass so Parameter::grad holds analytic gradients.
// Relative error uses a max(|analytic|,|numeric|) + 1e-8 denominator guard.
inline double finite_diff_check(std::span<Parameter* const> params,
                                const std::function<double(bool)>& eval, double eps,
                                GradCheckReport* report = nullptr) {
  if (eps <= 0.0) throw OracleError("finite_diff_check: eps must be > 0");
  const double f1 = eval(false);
  const double f2 = eval(false);
  if (f1 != f2)
    throw OracleError("finite_diff_check: forward is non-deterministic (" +
                      std::to_string(f1) + " vs " + std::to_string(f2) + ")");
  for (Parameter* p : params) p->zero_grad();
  (void)eval(true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double fp = eval(false);
      p.value[i] = saved - eps;
      const double fm = eval(false);
      p.value[i] = saved;
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = analytic[pi][i];
      const double denom = std::max(std::abs(num), std::abs(ana)) + 1e-8;
      const double rel = std::abs(num - ana) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
        rep.worst_coord = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  if (report) *report = rep;
  return rep.max_rel_err;
}

}  // namespace m3rec
