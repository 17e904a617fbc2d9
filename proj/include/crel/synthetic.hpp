#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crel/data.hpp"

namespace crel {

/// Recipe for a synthetic relation corpus with known confusable pairs.
///
/// Each relation owns `templates_per_relation` cue templates of `cue_length`
/// tokens placed between the two entities. The second relation of an
/// analogous pair reuses the first one's templates with only
/// `cue_length - shared_cues` positions swapped for its own tokens, so the
/// pair is separable but close. Relation i goes to task floor(i * K / R).
struct SyntheticSpec {
  int num_relations = 10;
  int num_tasks = 5;
  int samples_per_relation = 50;
  std::vector<std::pair<int, int>> analogous_pairs;
  int templates_per_relation = 3;
  int cue_length = 4;
  int shared_cues = 3;
  int filler_length = 4;
  int filler_vocab = 40;
  int entity_vocab = 60;
  /// Probability that a cue token is replaced by a filler token.
  double cue_noise = 0.1;
  std::uint64_t seed = 7;
  SplitRatios ratios{0.6, 0.1, 0.3};
};

struct SyntheticCorpus {
  TaskSequence sequence;
  /// Ground-truth analogous links, first member learned no later than the second.
  std::vector<std::pair<RelationId, RelationId>> analogous_pairs;
};

/// Throws ConfigError on an empty or inconsistent spec.
void validate(const SyntheticSpec& spec);
SyntheticCorpus generate_synthetic_sequence(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

}  // namespace crel
