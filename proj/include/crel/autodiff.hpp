#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied during one forward pass. Calling
// backward() on a 1x1 result propagates gradients to every node and then
// accumulates them into the Parameters that were bound with Tape::param().
// Tapes are single-use and not thread safe; build one per forward pass.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "crel/tensor.hpp"

namespace crel {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 result.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter; its gradient is added to p.grad by backward().
  Var param(Parameter& p);

  /// Seeds d(out)/d(out) = 1. `out` must be 1x1.
  void backward(const Var& out);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }

  // Internal: used by the op implementations.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;
  Var record(Matrix value, BackwardFn fn);
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad.noalias() += g;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, Parameter*>> bindings_;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_bt(const Var& a, const Var& b);
/// s * x for a constant sparse s.
Var spmm(const SparseMatrix& s, const Var& x);
/// Rows of `table` picked by `index`.
Var gather_rows(const Var& table, const std::vector<int>& index);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var add_const(const Var& a, const Matrix& m);
/// Broadcasts a 1xN row over every row of a.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);

Var tanh(const Var& a);
Var relu(const Var& a);
Var concat_cols(const Var& a, const Var& b);

/// Row-wise standardization (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm_rows(const Var& a, double eps = 1e-5);
/// Row-wise x / ||x||_2. Throws NumericError on an all-zero row.
Var l2_normalize_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var softmax_rows(const Var& a);

/// Column vector with entries sum_j a_ij * w_ij.
Var rowsum_weighted(const Var& a, const Matrix& w);
/// 1x1 result sum_ij a_ij * w_ij.
Var sum_weighted(const Var& a, const Matrix& w);
Var mean(const Var& a);

}  // namespace ad

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline double Var::scalar() const { return value()(0, 0); }

}  // namespace crel
