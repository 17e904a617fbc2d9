#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace crel {

struct RelationId {
  int value = -1;
  auto operator<=>(const RelationId&) const = default;
};

/// Token range [start, end).
struct Span {
  int start = 0;
  int end = 0;
  int length() const { return end - start; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
  auto operator<=>(const Span&) const = default;
};

enum class Provenance { original, entity_replaced, concatenated, replaced_and_concatenated };
enum class Split { unspecified, train, valid, test };

const char* to_string(Provenance p);
const char* to_string(Split s);
Provenance provenance_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Sample {
  std::string id;
  std::vector<std::string> tokens;
  Span head;
  Span tail;
  RelationId relation;
  Provenance provenance = Provenance::original;
  Split split = Split::unspecified;

  bool operator==(const Sample&) const = default;
};

/// Throws DataError naming the sample id when spans are empty, out of bounds or overlapping.
void validate(const Sample& s);

class RelationVocab {
 public:
  RelationId add(const std::string& name);
  std::optional<RelationId> find(const std::string& name) const;
  RelationId at(const std::string& name) const;
  const std::string& name(RelationId id) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  bool operator==(const RelationVocab& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct Corpus {
  std::vector<Sample> samples;
  RelationVocab vocab;
};

enum class CorpusFormat {
  json_lines,  ///< {"id","tokens","h":[s,e],"t":[s,e],"relation","split"?} per line
  fewrel_json  ///< {"relation": [{"tokens", "h": [name, id, [[positions]]], "t": ...}]}
};

struct IngestOptions {
  bool drop_no_relation = true;
  std::string no_relation_label = "no_relation";
};

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format, const IngestOptions& opts = {});
CorpusFormat corpus_format_from_string(const std::string& s);

struct Task {
  std::vector<RelationId> relations;
  std::vector<Sample> train;
  std::vector<Sample> valid;
  std::vector<Sample> test;
};

struct TaskSequence {
  std::vector<Task> tasks;
  RelationVocab vocab;

  std::size_t size() const { return tasks.size(); }
  /// Union of relation sets of tasks [0, k], in task order.
  std::vector<RelationId> seen_relations(std::size_t k) const;
  /// Index of the task that introduces r. Throws if r is not in the sequence.
  std::size_t task_of(RelationId r) const;
  /// Throws DataError unless relation sets are pairwise disjoint and every sample belongs to its task.
  void validate() const;
};

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

/// Randomly partitions the corpus relations into num_tasks groups, reproducibly by seed.
/// Samples keep their ingested split; unlabeled samples are split per relation by `ratios`.
TaskSequence build_task_sequence(const Corpus& corpus, int num_tasks, std::uint64_t seed,
                                 const SplitRatios& ratios = {});

/// Uses a fixed division (task index -> relation names) instead of a random partition.
TaskSequence build_task_sequence(const Corpus& corpus, const std::vector<std::vector<std::string>>& division,
                                 std::uint64_t seed, const SplitRatios& ratios = {});

/// Reads {"0": ["rel a", ...], "1": [...]} or a JSON array of arrays.
std::vector<std::vector<std::string>> load_task_division(const std::filesystem::path& path);

// JSON forms; the corpus line format uses "h"/"t" for spans.
Sample sample_from_json(const nlohmann::json& j, const RelationVocab& vocab);
nlohmann::json sample_to_json(const Sample& s, const RelationVocab& vocab);

nlohmann::json task_sequence_to_json(const TaskSequence& seq);
TaskSequence task_sequence_from_json(const nlohmann::json& j);

}  // namespace crel
