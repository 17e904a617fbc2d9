#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crel/archive.hpp"
#include "crel/autodiff.hpp"
#include "crel/data.hpp"

namespace crel {

/// Linear softmax classifier over all seen relations, one weight row per relation.
/// Rows are only ever appended; a relation keeps its row index for the whole run.
class LinearClassifier {
 public:
  explicit LinearClassifier(int dim) : w_("classifier.weight", Matrix(0, dim)) {}

  /// Appends rows drawn from N(0, 0.02^2). Throws std::invalid_argument on a duplicate.
  void expand(const std::vector<RelationId>& relations, std::uint64_t seed);

  int dim() const { return static_cast<int>(w_.value.cols()); }
  std::size_t size() const { return relations_.size(); }
  const std::vector<RelationId>& relations() const { return relations_; }
  std::optional<int> index_of(RelationId r) const;
  int require_index(RelationId r) const;

  Parameter& weight() { return w_; }
  const Parameter& weight() const { return w_; }

  Var logits(Tape& tape, const Var& h);
  /// Row-wise softmax(W2 h) for a batch of representations.
  Matrix probs(const Matrix& h) const;

  void save(Archive& ar, const std::string& prefix) const;
  static LinearClassifier load(const Archive& ar, const std::string& prefix);

 private:
  Parameter w_;
  std::vector<RelationId> relations_;
};

/// softmax(W2 h) for a single representation; throws std::invalid_argument on a dimension mismatch.
Vector linear_probs(const LinearClassifier& c, const Vector& h);

/// Two-layer MLP d -> d -> d_proj with tanh in between, followed by L2 normalization.
class Projector {
 public:
  Projector(int dim, int proj_dim, std::uint64_t seed);

  int dim() const { return static_cast<int>(w1_.value.cols()); }
  int proj_dim() const { return static_cast<int>(w2_.value.rows()); }

  /// Unit-norm rows. Throws NumericError if an MLP output row is exactly zero.
  Var project(Tape& tape, const Var& h);
  Matrix project(const Matrix& h) const;

  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

  void save(Archive& ar, const std::string& prefix) const;
  static Projector load(const Archive& ar, const std::string& prefix);

 private:
  Projector() = default;
  Parameter w1_, b1_, w2_, b2_;
};

Vector project(const Projector& p, const Vector& h);

/// Row-wise softmax(z . Z^T) without temperature. `prototypes` must have one
/// unit-norm row per seen relation; `expected_rows` guards the row count.
Matrix contrastive_probs(const Matrix& z, const Matrix& prototypes, std::optional<std::size_t> expected_rows = {});

/// Numerically stable row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace crel
