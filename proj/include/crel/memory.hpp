#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "crel/data.hpp"
#include "crel/encoder.hpp"
#include "crel/tensor.hpp"

namespace crel {

/// Per-relation exemplar sets. Holds original-provenance samples only.
class MemoryStore {
 public:
  /// Replaces the exemplars of r. Throws std::invalid_argument if any sample is augmented
  /// or belongs to another relation.
  void set(RelationId r, std::vector<Sample> exemplars);

  bool contains(RelationId r) const { return index_.count(r) != 0; }
  const std::vector<Sample>& exemplars(RelationId r) const;
  /// Relations in insertion order.
  const std::vector<RelationId>& relations() const { return order_; }
  /// Accumulated memory: every exemplar of every stored relation.
  std::vector<const Sample*> accumulated() const;
  std::size_t total_size() const;

  nlohmann::json to_json(const RelationVocab& vocab) const;
  /// Rebuilds the store from exemplar ids, resolving them against `samples_by_id`.
  static MemoryStore from_json(const nlohmann::json& j, const RelationVocab& vocab,
                               const std::unordered_map<std::string, const Sample*>& samples_by_id);

 private:
  std::vector<RelationId> order_;
  std::map<RelationId, std::vector<Sample>> index_;
};

/// Static (write-once) and combined relation prototypes.
class PrototypeStore {
 public:
  explicit PrototypeStore(double beta = 0.5);

  double beta() const { return beta_; }

  /// Throws std::logic_error if r already has a static prototype.
  void set_static(RelationId r, Vector v);
  bool has_static(RelationId r) const { return static_.count(r) != 0; }
  const Vector& static_prototype(RelationId r) const;

  void set_combined(RelationId r, Vector p) { combined_[r] = std::move(p); }
  bool has_combined(RelationId r) const { return combined_.count(r) != 0; }
  const Vector& prototype(RelationId r) const;
  /// Combined prototypes stacked as rows in the given order.
  Matrix matrix(const std::vector<RelationId>& order) const;

  nlohmann::json to_json(const RelationVocab& vocab) const;
  static PrototypeStore from_json(const nlohmann::json& j, const RelationVocab& vocab);

 private:
  double beta_;
  std::map<RelationId, Vector> static_;
  std::map<RelationId, Vector> combined_;
};

/// Indices of k-means representatives: k = min(k, n) clusters with k-means++
/// seeding, at most 50 Lloyd iterations (or centroid shift < 1e-6), then the
/// member closest to each centroid, ties going to the lowest id. Sorted ascending.
std::vector<std::size_t> kmeans_representatives(const Matrix& points, const std::vector<std::string>& ids, int k,
                                                std::uint64_t seed);

/// Typical samples of one relation. Throws std::invalid_argument on augmented or mixed-relation input.
std::vector<Sample> select_typical(const Encoder& encoder, std::span<const Sample> samples, int m,
                                   std::uint64_t seed);

/// Mean representation of every training sample of r, stored write-once in `store`.
const Vector& capture_static_prototype(PrototypeStore& store, const Encoder& encoder, RelationId r,
                                       std::span<const Sample> training_samples);

/// (1 - beta) * static + beta * dynamic_mean, exact at the endpoints.
Vector blend_prototype(const Vector& static_proto, const Vector& dynamic_mean, double beta);

/// Combined prototype of r from its static vector and the current encodings of M^r.
Vector combined_prototype(const PrototypeStore& store, const Encoder& encoder, const MemoryStore& memory,
                          RelationId r);

/// Replay-only samples produced by memory augmentation. Distinct from MemoryStore
/// so augmented data cannot flow back into selection or prototypes.
struct AugmentedMemory {
  std::vector<Sample> samples;
};

/// Entity replacement: x's head/tail token spans spliced with donor's entity tokens.
Sample replace_entities(const Sample& x, const Sample& donor);
/// Appends `appended` after a [SEP] token; only x's entities stay marked.
Sample concatenate(const Sample& x, const Sample& appended);

/// Four samples per exemplar: original, entity-replaced, original+other-relation
/// sentence, replaced+another other-relation sentence. Requires >= 2 stored relations.
AugmentedMemory augment(const MemoryStore& memory, std::uint64_t seed);
/// The accumulated memory without augmentation.
AugmentedMemory originals_only(const MemoryStore& memory);

}  // namespace crel
