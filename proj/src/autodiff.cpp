#include "crel/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "crel/errors.hpp"

namespace crel {

Var Tape::constant(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::param(Parameter& p) {
  Var v = record(p.value, nullptr);
  bindings_.emplace_back(v.id(), &p);
  return v;
}

Var Tape::record(Matrix value, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(fn)});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(const Var& out) {
  if (out.tape() != this) throw std::invalid_argument("backward: variable from another tape");
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("backward: output must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[out.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& [id, p] : bindings_) {
    const Matrix& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    if (p->grad.rows() != g.rows() || p->grad.cols() != g.cols()) p->zero_grad();
    p->grad += g;
  }
}

namespace ad {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: uninitialized variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: variables from different tapes");
  return tape_of(a);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_bt: inner dimension mismatch");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value().transpose(), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g * tp.value(ib));
    tp.accumulate_expr(ib, g.transpose() * tp.value(ia));
  });
}

Var spmm(const SparseMatrix& s, const Var& x) {
  Tape& t = tape_of(x);
  if (s.cols() != x.rows()) throw std::invalid_argument("spmm: dimension mismatch");
  const auto ix = x.id();
  Matrix out = s * x.value();
  return t.record(std::move(out), [s, ix](Tape& tp, const Matrix& g) {
    Matrix gx = s.transpose() * g;
    tp.accumulate(ix, gx);
  });
}

Var gather_rows(const Var& table, const std::vector<int>& index) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), tv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= tv.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(index[i]);
  }
  const auto it = table.id();
  return t.record(std::move(out), [it, index](Tape& tp, const Matrix& g) {
    Matrix gt = Matrix::Zero(tp.value(it).rows(), tp.value(it).cols());
    for (std::size_t i = 0; i < index.size(); ++i) gt.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(it, gt);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate_expr(ib, -g);
  });
}

Var scale(const Var& a, double c) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  return t.record(a.value() * c, [ia, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, g * c); });
}

Var add_scalar(const Var& a, double c) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  Matrix out = a.value().array() + c;
  return t.record(std::move(out), [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var add_const(const Var& a, const Matrix& m) {
  Tape& t = tape_of(a);
  if (a.rows() != m.rows() || a.cols() != m.cols()) throw std::invalid_argument("add_const: shape mismatch");
  const auto ia = a.id();
  return t.record(a.value() + m, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  const auto ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate_expr(ir, g.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape mismatch");
  const auto ia = a.id(), ir = row.id();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.record(std::move(out), [ia, ir](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& rv = tp.value(ir);
    tp.accumulate_expr(ia, (g.array().rowwise() * rv.row(0).array()).matrix());
    tp.accumulate_expr(ir, (g.array() * av.array()).colwise().sum().matrix());
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  Matrix out = a.value().array().tanh();
  Matrix y = out;
  return t.record(std::move(out), [ia, y](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), [ia](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    tp.accumulate_expr(ia, (av.array() > 0.0).select(g, 0.0).matrix());
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  const auto ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return t.record(std::move(out), [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g.leftCols(ca));
    tp.accumulate_expr(ib, g.rightCols(cb));
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const Matrix& x = a.value();
  const auto n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat;
  return t.record(std::move(xhat), [ia, y, inv_std, n](Tape& tp, const Matrix& g) {
    Matrix gx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double gm = g.row(i).sum() / n;
      const double gy = g.row(i).dot(y.row(i)) / n;
      gx.row(i) = inv_std(i) * (g.row(i).array() - gm - y.row(i).array() * gy);
    }
    tp.accumulate(ia, gx);
  });
}

Var l2_normalize_rows(const Var& a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const Matrix& x = a.value();
  Vector norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i)))
      throw NumericError("l2_normalize_rows: zero or non-finite row norm");
  }
  Matrix y = x.array().colwise() / norms.array();
  Matrix yc = y;
  return t.record(std::move(y), [ia, yc, norms](Tape& tp, const Matrix& g) {
    Vector dots = (g.array() * yc.array()).rowwise().sum();
    Matrix gx = (g - (yc.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
    tp.accumulate(ia, gx);
  });
}

namespace {
Matrix row_softmax(const Matrix& x) {
  Matrix s = x.colwise() - x.rowwise().maxCoeff();
  s = s.array().exp();
  Vector sums = s.rowwise().sum();
  return s.array().colwise() / sums.array();
}
}  // namespace

Var log_softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const Matrix& x = a.value();
  Vector mx = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - mx;
  Vector lse = shifted.array().exp().rowwise().sum().log();
  Matrix out = shifted.colwise() - lse;
  Matrix probs = out.array().exp();
  return t.record(std::move(out), [ia, probs](Tape& tp, const Matrix& g) {
    Vector gs = g.rowwise().sum();
    Matrix gx = g - (probs.array().colwise() * gs.array()).matrix();
    tp.accumulate(ia, gx);
  });
}

Var softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  Matrix s = row_softmax(a.value());
  Matrix sc = s;
  return t.record(std::move(s), [ia, sc](Tape& tp, const Matrix& g) {
    Vector dots = (g.array() * sc.array()).rowwise().sum();
    Matrix gx = sc.array() * (g.array().colwise() - dots.array());
    tp.accumulate(ia, gx);
  });
}

Var rowsum_weighted(const Var& a, const Matrix& w) {
  Tape& t = tape_of(a);
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw std::invalid_argument("rowsum_weighted: shape mismatch");
  const auto ia = a.id();
  Matrix out = (a.value().array() * w.array()).rowwise().sum().matrix();
  return t.record(std::move(out), [ia, w](Tape& tp, const Matrix& g) {
    Matrix gx = w.array().colwise() * g.col(0).array();
    tp.accumulate(ia, gx);
  });
}

Var sum_weighted(const Var& a, const Matrix& w) {
  Tape& t = tape_of(a);
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw std::invalid_argument("sum_weighted: shape mismatch");
  const auto ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = (a.value().array() * w.array()).sum();
  return t.record(std::move(out), [ia, w](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, w * g(0, 0)); });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return sum_weighted(a, Matrix::Constant(a.rows(), a.cols(), 1.0 / n));
}

}  // namespace ad
}  // namespace crel
