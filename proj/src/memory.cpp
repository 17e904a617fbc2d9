#include "crel/memory.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

using nlohmann::json;

// --- MemoryStore -------------------------------------------------------------

void MemoryStore::set(RelationId r, std::vector<Sample> exemplars) {
  for (const auto& s : exemplars) {
    if (s.provenance != Provenance::original)
      throw std::invalid_argument("memory: sample '" + s.id + "' is augmented; only original samples are stored");
    if (s.relation != r) throw std::invalid_argument("memory: sample '" + s.id + "' belongs to another relation");
  }
  if (!contains(r)) order_.push_back(r);
  index_[r] = std::move(exemplars);
}

const std::vector<Sample>& MemoryStore::exemplars(RelationId r) const {
  auto it = index_.find(r);
  if (it == index_.end()) throw std::out_of_range("memory: no exemplars for relation " + std::to_string(r.value));
  return it->second;
}

std::vector<const Sample*> MemoryStore::accumulated() const {
  std::vector<const Sample*> out;
  for (auto r : order_)
    for (const auto& s : index_.at(r)) out.push_back(&s);
  return out;
}

std::size_t MemoryStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [r, v] : index_) n += v.size();
  return n;
}

json MemoryStore::to_json(const RelationVocab& vocab) const {
  json rels = json::array();
  for (auto r : order_) {
    json ids = json::array();
    for (const auto& s : index_.at(r)) ids.push_back(s.id);
    rels.push_back({{"relation", vocab.name(r)}, {"exemplars", ids}});
  }
  return rels;
}

MemoryStore MemoryStore::from_json(const json& j, const RelationVocab& vocab,
                                   const std::unordered_map<std::string, const Sample*>& samples_by_id) {
  MemoryStore m;
  for (const auto& e : j) {
    const RelationId r = vocab.at(e.at("relation").get<std::string>());
    std::vector<Sample> ex;
    for (const auto& id : e.at("exemplars")) {
      auto it = samples_by_id.find(id.get<std::string>());
      if (it == samples_by_id.end()) throw DataError("memory snapshot: unknown sample '" + id.get<std::string>() + "'");
      ex.push_back(*it->second);
    }
    m.set(r, std::move(ex));
  }
  return m;
}

// --- PrototypeStore ----------------------------------------------------------

PrototypeStore::PrototypeStore(double beta) : beta_(beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
}

void PrototypeStore::set_static(RelationId r, Vector v) {
  if (has_static(r))
    throw std::logic_error("static prototype of relation " + std::to_string(r.value) + " is already captured");
  static_.emplace(r, std::move(v));
}

const Vector& PrototypeStore::static_prototype(RelationId r) const {
  auto it = static_.find(r);
  if (it == static_.end())
    throw std::out_of_range("no static prototype for relation " + std::to_string(r.value));
  return it->second;
}

const Vector& PrototypeStore::prototype(RelationId r) const {
  auto it = combined_.find(r);
  if (it == combined_.end()) throw std::out_of_range("no prototype for relation " + std::to_string(r.value));
  return it->second;
}

Matrix PrototypeStore::matrix(const std::vector<RelationId>& order) const {
  if (order.empty()) return Matrix(0, 0);
  const auto d = prototype(order.front()).size();
  Matrix m(static_cast<Eigen::Index>(order.size()), d);
  for (std::size_t i = 0; i < order.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = prototype(order[i]).transpose();
  return m;
}

namespace {
json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
Vector json_vec(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace

json PrototypeStore::to_json(const RelationVocab& vocab) const {
  json st = json::object(), cb = json::object();
  for (const auto& [r, v] : static_) st[vocab.name(r)] = vec_json(v);
  for (const auto& [r, v] : combined_) cb[vocab.name(r)] = vec_json(v);
  return json{{"beta", beta_}, {"static", st}, {"combined", cb}};
}

PrototypeStore PrototypeStore::from_json(const json& j, const RelationVocab& vocab) {
  PrototypeStore p(j.at("beta").get<double>());
  for (auto it = j.at("static").begin(); it != j.at("static").end(); ++it)
    p.set_static(vocab.at(it.key()), json_vec(it.value()));
  for (auto it = j.at("combined").begin(); it != j.at("combined").end(); ++it)
    p.set_combined(vocab.at(it.key()), json_vec(it.value()));
  return p;
}

// --- Selection ---------------------------------------------------------------

std::vector<std::size_t> kmeans_representatives(const Matrix& points, const std::vector<std::string>& ids, int k,
                                                std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (ids.size() != n) throw std::invalid_argument("kmeans: id count mismatch");
  if (k <= 0) throw std::invalid_argument("kmeans: k must be positive");
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  if (kk == n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }

  Rng rng(seed);
  auto sqdist = [&](std::size_t i, const Matrix& c, std::size_t j) {
    return (points.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(j))).squaredNorm();
  };

  // k-means++ seeding
  Matrix centroids(static_cast<Eigen::Index>(kk), points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.uniform_index(n)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < kk; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sqdist(i, centroids, c - 1));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = rng.uniform_index(n);
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
  }

  std::vector<std::size_t> assign(n, 0);
  auto assign_all = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < kk; ++c) {
        const double dd = sqdist(i, centroids, c);
        if (dd < best) {
          best = dd;
          assign[i] = c;
        }
      }
    }
  };

  for (int iter = 0; iter < 50; ++iter) {
    assign_all();
    Matrix next = Matrix::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> count(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      next.row(static_cast<Eigen::Index>(assign[i])) += points.row(static_cast<Eigen::Index>(i));
      ++count[assign[i]];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (count[c] > 0) {
        next.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(count[c]);
        continue;
      }
      // Empty cluster: re-seed at the point farthest from its own centroid.
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dd = sqdist(i, centroids, assign[i]);
        if (dd > fd) {
          fd = dd;
          far = i;
        }
      }
      next.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(far));
    }
    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    if (shift < 1e-6) break;
  }
  assign_all();

  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  auto better = [&](std::size_t i, double di, std::size_t j, double dj) {
    return di < dj || (di == dj && ids[i] < ids[j]);
  };
  for (std::size_t c = 0; c < kk; ++c) {
    std::size_t best = n;
    double bd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != c || taken[i]) continue;
      const double dd = sqdist(i, centroids, c);
      if (best == n || better(i, dd, best, bd)) {
        best = i;
        bd = dd;
      }
    }
    if (best == n) {
      // Still empty (duplicate points): nearest unselected point overall.
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double dd = sqdist(i, centroids, c);
        if (best == n || better(i, dd, best, bd)) {
          best = i;
          bd = dd;
        }
      }
    }
    taken[best] = true;
    chosen.push_back(best);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<Sample> select_typical(const Encoder& encoder, std::span<const Sample> samples, int m,
                                   std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("select_typical: no samples");
  if (m <= 0) throw std::invalid_argument("select_typical: memory size must be positive");
  const RelationId r = samples.front().relation;
  std::vector<const Sample*> ptrs;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    if (s.provenance != Provenance::original)
      throw std::invalid_argument("select_typical: sample '" + s.id + "' is augmented");
    if (s.relation != r) throw std::invalid_argument("select_typical: samples span several relations");
    ptrs.push_back(&s);
    ids.push_back(s.id);
  }
  const Matrix reps = encoder.encode(ptrs);
  std::vector<Sample> out;
  for (auto i : kmeans_representatives(reps, ids, m, seed)) out.push_back(samples[i]);
  return out;
}

// --- Prototypes --------------------------------------------------------------

namespace {
Vector mean_representation(const Encoder& encoder, const std::vector<const Sample*>& samples) {
  constexpr std::size_t kChunk = 256;
  Vector sum = Vector::Zero(encoder.dim());
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    std::vector<const Sample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(i),
                                     samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), i + kChunk)));
    sum += encoder.encode(chunk).colwise().sum().transpose();
  }
  return sum / static_cast<double>(samples.size());
}
}  // namespace

const Vector& capture_static_prototype(PrototypeStore& store, const Encoder& encoder, RelationId r,
                                       std::span<const Sample> training_samples) {
  if (store.has_static(r))
    throw std::logic_error("static prototype of relation " + std::to_string(r.value) + " is already captured");
  if (training_samples.empty()) throw std::invalid_argument("capture_static_prototype: no samples");
  std::vector<const Sample*> ptrs;
  for (const auto& s : training_samples) {
    if (s.provenance != Provenance::original)
      throw std::invalid_argument("capture_static_prototype: sample '" + s.id + "' is augmented");
    if (s.relation != r) throw std::invalid_argument("capture_static_prototype: sample of another relation");
    ptrs.push_back(&s);
  }
  store.set_static(r, mean_representation(encoder, ptrs));
  return store.static_prototype(r);
}

Vector blend_prototype(const Vector& static_proto, const Vector& dynamic_mean, double beta) {
  if (beta == 0.0) return static_proto;
  if (beta == 1.0) return dynamic_mean;
  return (1.0 - beta) * static_proto + beta * dynamic_mean;
}

Vector combined_prototype(const PrototypeStore& store, const Encoder& encoder, const MemoryStore& memory,
                          RelationId r) {
  if (!store.has_static(r))
    throw std::out_of_range("combined_prototype: relation " + std::to_string(r.value) + " has no static prototype");
  const auto& ex = memory.exemplars(r);
  if (ex.empty()) throw std::invalid_argument("combined_prototype: empty memory for relation");
  if (store.beta() == 0.0) return store.static_prototype(r);
  std::vector<const Sample*> ptrs;
  for (const auto& s : ex) ptrs.push_back(&s);
  return blend_prototype(store.static_prototype(r), mean_representation(encoder, ptrs), store.beta());
}

// --- Augmentation ------------------------------------------------------------

Sample replace_entities(const Sample& x, const Sample& donor) {
  const bool head_first = x.head.start < x.tail.start;
  const Span& a = head_first ? x.head : x.tail;
  const Span& b = head_first ? x.tail : x.head;
  const Span& ra = head_first ? donor.head : donor.tail;
  const Span& rb = head_first ? donor.tail : donor.head;
  auto slice = [](const std::vector<std::string>& t, int s, int e) {
    return std::vector<std::string>(t.begin() + s, t.begin() + e);
  };
  Sample out = x;
  out.tokens = slice(x.tokens, 0, a.start);
  Span na{static_cast<int>(out.tokens.size()), 0};
  auto ta = slice(donor.tokens, ra.start, ra.end);
  out.tokens.insert(out.tokens.end(), ta.begin(), ta.end());
  na.end = static_cast<int>(out.tokens.size());
  auto mid = slice(x.tokens, a.end, b.start);
  out.tokens.insert(out.tokens.end(), mid.begin(), mid.end());
  Span nb{static_cast<int>(out.tokens.size()), 0};
  auto tb = slice(donor.tokens, rb.start, rb.end);
  out.tokens.insert(out.tokens.end(), tb.begin(), tb.end());
  nb.end = static_cast<int>(out.tokens.size());
  auto rest = slice(x.tokens, b.end, static_cast<int>(x.tokens.size()));
  out.tokens.insert(out.tokens.end(), rest.begin(), rest.end());
  out.head = head_first ? na : nb;
  out.tail = head_first ? nb : na;
  out.id = x.id + "|rep:" + donor.id;
  out.provenance = Provenance::entity_replaced;
  return out;
}

Sample concatenate(const Sample& x, const Sample& appended) {
  Sample out = x;
  out.tokens.emplace_back(kSentenceSep);
  out.tokens.insert(out.tokens.end(), appended.tokens.begin(), appended.tokens.end());
  out.id = x.id + "|cat:" + appended.id;
  out.provenance =
      x.provenance == Provenance::entity_replaced ? Provenance::replaced_and_concatenated : Provenance::concatenated;
  return out;
}

AugmentedMemory augment(const MemoryStore& memory, std::uint64_t seed) {
  if (memory.relations().size() < 2)
    throw std::invalid_argument("augment: concatenation needs exemplars from at least two relations");
  Rng rng(seed);
  AugmentedMemory out;
  out.samples.reserve(4 * memory.total_size());
  for (RelationId r : memory.relations()) {
    const auto& own = memory.exemplars(r);
    if (own.empty()) throw std::invalid_argument("augment: relation without exemplars");
    std::vector<const Sample*> others;
    for (RelationId o : memory.relations())
      if (o != r)
        for (const auto& s : memory.exemplars(o)) others.push_back(&s);
    for (std::size_t i = 0; i < own.size(); ++i) {
      const Sample& xi = own[i];
      const Sample* donor = &xi;
      if (own.size() > 1) {
        auto j = rng.uniform_index(own.size() - 1);
        if (j >= i) ++j;
        donor = &own[j];
      }
      Sample xij = replace_entities(xi, *donor);
      const auto m_idx = rng.uniform_index(others.size());
      auto n_idx = m_idx;
      if (others.size() > 1) {
        n_idx = rng.uniform_index(others.size() - 1);
        if (n_idx >= m_idx) ++n_idx;
      }
      Sample xim = concatenate(xi, *others[m_idx]);
      Sample xijn = concatenate(xij, *others[n_idx]);
      out.samples.push_back(xi);
      out.samples.push_back(std::move(xij));
      out.samples.push_back(std::move(xim));
      out.samples.push_back(std::move(xijn));
    }
  }
  return out;
}

AugmentedMemory originals_only(const MemoryStore& memory) {
  AugmentedMemory out;
  for (const Sample* s : memory.accumulated()) out.samples.push_back(*s);
  return out;
}

}  // namespace crel
