#include "crel/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace crel {

namespace {
Matrix one_hot_scaled(Eigen::Index rows, Eigen::Index cols, const std::vector<int>& labels, double value) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) throw std::invalid_argument("label count mismatch");
  Matrix m = Matrix::Zero(rows, cols);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= cols) throw std::invalid_argument("label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = value;
  }
  return m;
}
}  // namespace

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  Var logp = ad::log_softmax_rows(logits);
  const double n = static_cast<double>(logits.rows());
  return ad::sum_weighted(logp, one_hot_scaled(logits.rows(), logits.cols(), labels, -1.0 / n));
}

Var info_nce(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double tau) {
  Tape& t = *z.tape();
  Var sims = ad::matmul_bt(z, t.constant(prototypes));
  return cross_entropy(ad::scale(sims, 1.0 / tau), labels);
}

std::vector<int> hardest_negatives(const Matrix& z, const Matrix& prototypes, const std::vector<int>& labels) {
  const Matrix sims = z * prototypes.transpose();
  std::vector<int> out(labels.size(), -1);
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < sims.cols(); ++r) {
      if (r == labels[static_cast<std::size_t>(i)]) continue;
      if (sims(i, r) > best) {
        best = sims(i, r);
        out[static_cast<std::size_t>(i)] = static_cast<int>(r);
      }
    }
  }
  return out;
}

Var triplet_margin(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double omega) {
  Tape& t = *z.tape();
  if (prototypes.rows() < 2) return t.constant(Matrix::Zero(1, 1));
  const auto neg = hardest_negatives(z.value(), prototypes, labels);
  Matrix sel = one_hot_scaled(z.rows(), prototypes.rows(), labels, -1.0);
  for (std::size_t i = 0; i < neg.size(); ++i) sel(static_cast<Eigen::Index>(i), neg[i]) = 1.0;
  Var sims = ad::matmul_bt(z, t.constant(prototypes));
  Var margins = ad::relu(ad::add_scalar(ad::rowsum_weighted(sims, sel), omega));
  return ad::mean(margins);
}

Var contrastive_loss(const Var& z, const Matrix& prototypes, const std::vector<int>& labels, double tau, double mu,
                     double omega) {
  Var nce = info_nce(z, prototypes, labels, tau);
  if (prototypes.rows() < 2 || mu == 0.0) return nce;
  return ad::add(nce, ad::scale(triplet_margin(z, prototypes, labels, omega), mu));
}

FocalWeights focal_weights(const Matrix& h, const Matrix& previous_prototypes, const Vector& p_true, double tau2,
                           double gamma) {
  if (previous_prototypes.rows() == 0)
    throw std::invalid_argument("focal_weights: no previous relations; skip distillation on the first task");
  if (h.cols() != previous_prototypes.cols()) throw std::invalid_argument("focal_weights: dimension mismatch");
  if (p_true.size() != h.rows()) throw std::invalid_argument("focal_weights: probability count mismatch");
  const Vector hn = h.rowwise().norm();
  const Vector pn = previous_prototypes.rowwise().norm();
  Matrix cos = h * previous_prototypes.transpose();
  for (Eigen::Index i = 0; i < cos.rows(); ++i)
    for (Eigen::Index j = 0; j < cos.cols(); ++j) {
      const double denom = hn(i) * pn(j);
      cos(i, j) = denom > 0.0 ? cos(i, j) / denom : 0.0;
    }
  Matrix logits = cos / tau2;
  Matrix s = logits.colwise() - logits.rowwise().maxCoeff();
  s = s.array().exp();
  Vector sums = s.rowwise().sum();
  s = s.array().colwise() / sums.array();
  FocalWeights fw;
  Vector focus = (1.0 - p_true.array()).max(0.0).pow(gamma);
  fw.weights = s.array().colwise() * focus.array();
  fw.similarity_softmax = std::move(s);
  return fw;
}

Matrix distillation_targets(const Matrix& weights, const Matrix& teacher_probs) {
  if (weights.rows() != teacher_probs.rows() || weights.cols() != teacher_probs.cols())
    throw std::invalid_argument("distillation_targets: teacher covers " + std::to_string(teacher_probs.cols()) +
                                " relations, weights cover " + std::to_string(weights.cols()));
  return weights.cwiseProduct(teacher_probs);
}

Var focal_distillation(const Var& log_probs, const Matrix& targets) {
  if (targets.rows() != log_probs.rows() || targets.cols() > log_probs.cols())
    throw std::invalid_argument("focal_distillation: target shape does not fit the current relation set");
  Matrix w = Matrix::Zero(log_probs.rows(), log_probs.cols());
  w.leftCols(targets.cols()) = targets * (-1.0 / static_cast<double>(log_probs.rows()));
  return ad::sum_weighted(log_probs, w);
}

}  // namespace crel
