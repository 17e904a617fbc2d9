#include "crel/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

Matrix softmax_rows(const Matrix& logits) {
  Matrix s = logits.colwise() - logits.rowwise().maxCoeff();
  s = s.array().exp();
  Vector sums = s.rowwise().sum();
  return s.array().colwise() / sums.array();
}

// --- LinearClassifier --------------------------------------------------------

void LinearClassifier::expand(const std::vector<RelationId>& relations, std::uint64_t seed) {
  for (std::size_t i = 0; i < relations.size(); ++i) {
    if (index_of(relations[i]) ||
        std::find(relations.begin(), relations.begin() + static_cast<std::ptrdiff_t>(i), relations[i]) !=
            relations.begin() + static_cast<std::ptrdiff_t>(i))
      throw std::invalid_argument("expand: relation " + std::to_string(relations[i].value) + " already present");
  }
  if (relations.empty()) return;
  Rng rng(seed);
  const Eigen::Index old = w_.value.rows();
  Matrix w(old + static_cast<Eigen::Index>(relations.size()), w_.value.cols());
  w.topRows(old) = w_.value;
  for (Eigen::Index i = old; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = 0.02 * rng.normal();
  w_.value = std::move(w);
  w_.zero_grad();
  relations_.insert(relations_.end(), relations.begin(), relations.end());
}

std::optional<int> LinearClassifier::index_of(RelationId r) const {
  auto it = std::find(relations_.begin(), relations_.end(), r);
  if (it == relations_.end()) return std::nullopt;
  return static_cast<int>(it - relations_.begin());
}

int LinearClassifier::require_index(RelationId r) const {
  if (auto i = index_of(r)) return *i;
  throw DataError("relation " + std::to_string(r.value) + " has no classifier row");
}

Var LinearClassifier::logits(Tape& tape, const Var& h) {
  if (h.cols() != w_.value.cols()) throw std::invalid_argument("linear classifier: dimension mismatch");
  return ad::matmul_bt(h, tape.param(w_));
}

Matrix LinearClassifier::probs(const Matrix& h) const {
  if (h.cols() != w_.value.cols()) throw std::invalid_argument("linear classifier: dimension mismatch");
  return softmax_rows(h * w_.value.transpose());
}

Vector linear_probs(const LinearClassifier& c, const Vector& h) {
  if (h.size() != c.dim()) throw std::invalid_argument("linear_probs: representation dimension mismatch");
  return c.probs(h.transpose()).row(0).transpose();
}

void LinearClassifier::save(Archive& ar, const std::string& prefix) const {
  nlohmann::json rel = nlohmann::json::array();
  for (auto r : relations_) rel.push_back(r.value);
  ar.meta[prefix] = {{"relations", rel}, {"dim", dim()}};
  ar.put(prefix + "/weight", w_.value);
}

LinearClassifier LinearClassifier::load(const Archive& ar, const std::string& prefix) {
  if (!ar.meta.contains(prefix)) throw DataError("archive: missing classifier '" + prefix + "'");
  LinearClassifier c(ar.meta.at(prefix).at("dim").get<int>());
  for (const auto& r : ar.meta.at(prefix).at("relations")) c.relations_.push_back(RelationId{r.get<int>()});
  c.w_.value = ar.get(prefix + "/weight");
  if (c.w_.value.rows() != static_cast<Eigen::Index>(c.relations_.size()))
    throw DataError("archive: classifier row count does not match its relation list");
  c.w_.zero_grad();
  return c;
}

// --- Projector -------------------------------------------------------------

Projector::Projector(int dim, int proj_dim, std::uint64_t seed) {
  if (dim <= 0 || proj_dim <= 0) throw ConfigError("projector dimensions must be positive");
  Rng rng(seed);
  auto gauss = [&](Eigen::Index r, Eigen::Index c, double sd) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * sd;
    return m;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  w1_ = Parameter("projector.fc1.weight", gauss(dim, dim, s));
  b1_ = Parameter("projector.fc1.bias", Matrix::Zero(1, dim));
  w2_ = Parameter("projector.fc2.weight", gauss(proj_dim, dim, s));
  b2_ = Parameter("projector.fc2.bias", Matrix::Zero(1, proj_dim));
}

Var Projector::project(Tape& tape, const Var& h) {
  if (h.cols() != dim()) throw std::invalid_argument("projector: dimension mismatch");
  Var a = ad::tanh(ad::add_row(ad::matmul_bt(h, tape.param(w1_)), tape.param(b1_)));
  Var o = ad::add_row(ad::matmul_bt(a, tape.param(w2_)), tape.param(b2_));
  return ad::l2_normalize_rows(o);
}

Matrix Projector::project(const Matrix& h) const {
  if (h.cols() != dim()) throw std::invalid_argument("projector: dimension mismatch");
  Matrix a = ((h * w1_.value.transpose()).rowwise() + b1_.value.row(0)).array().tanh();
  Matrix o = (a * w2_.value.transpose()).rowwise() + b2_.value.row(0);
  Vector n = o.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i)
    if (!(n(i) > 0.0) || !std::isfinite(n(i))) throw NumericError("projector: zero MLP output cannot be normalized");
  return o.array().colwise() / n.array();
}

Vector project(const Projector& p, const Vector& h) { return p.project(h.transpose()).row(0).transpose(); }

void Projector::save(Archive& ar, const std::string& prefix) const {
  ar.meta[prefix] = {{"dim", dim()}, {"proj_dim", proj_dim()}};
  ar.put(prefix + "/fc1.weight", w1_.value);
  ar.put(prefix + "/fc1.bias", b1_.value);
  ar.put(prefix + "/fc2.weight", w2_.value);
  ar.put(prefix + "/fc2.bias", b2_.value);
}

Projector Projector::load(const Archive& ar, const std::string& prefix) {
  if (!ar.meta.contains(prefix)) throw DataError("archive: missing projector '" + prefix + "'");
  Projector p;
  p.w1_ = Parameter("projector.fc1.weight", ar.get(prefix + "/fc1.weight"));
  p.b1_ = Parameter("projector.fc1.bias", ar.get(prefix + "/fc1.bias"));
  p.w2_ = Parameter("projector.fc2.weight", ar.get(prefix + "/fc2.weight"));
  p.b2_ = Parameter("projector.fc2.bias", ar.get(prefix + "/fc2.bias"));
  return p;
}

// --- Contrastive probabilities ---------------------------------------------

Matrix contrastive_probs(const Matrix& z, const Matrix& prototypes, std::optional<std::size_t> expected_rows) {
  if (expected_rows && static_cast<std::size_t>(prototypes.rows()) != *expected_rows)
    throw std::invalid_argument("contrastive_probs: prototype rows (" + std::to_string(prototypes.rows()) +
                                ") do not match seen relations (" + std::to_string(*expected_rows) + ")");
  if (z.cols() != prototypes.cols()) throw std::invalid_argument("contrastive_probs: dimension mismatch");
  for (Eigen::Index i = 0; i < prototypes.rows(); ++i)
    if (std::abs(prototypes.row(i).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("contrastive_probs: prototype rows must be unit-normalized");
  return softmax_rows(z * prototypes.transpose());
}

}  // namespace crel
