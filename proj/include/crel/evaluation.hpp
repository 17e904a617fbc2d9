#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crel/data.hpp"
#include "crel/tensor.hpp"

namespace crel {

/// Row-wise (1 - alpha) * contrastive + alpha * linear.
Matrix combine_probs(const Matrix& contrastive, const Matrix& linear, double alpha);
/// Column index of the row-wise argmax of combine_probs (lowest index on ties).
std::vector<int> predict_combined(const Matrix& contrastive, const Matrix& linear, double alpha);

struct Tally {
  long correct = 0;
  long total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

using Predictor = std::function<std::vector<RelationId>(const std::vector<const Sample*>&)>;

/// entry(k, j): accuracy on task j's test set after finishing task k (j <= k).
class AccuracyMatrix {
 public:
  std::size_t num_rows() const { return rows_.size(); }
  double entry(std::size_t k, std::size_t j) const;
  const Tally& tally(std::size_t k, std::size_t j) const;
  /// Pooled accuracy over the union of test sets 0..k.
  double whole_history(std::size_t k) const;
  /// Accuracy on one relation's test samples after task k; nullopt if not yet seen.
  std::optional<double> relation_accuracy(std::size_t k, RelationId r) const;
  const std::map<RelationId, Tally>& relation_tallies(std::size_t k) const { return rows_.at(k).relations; }

  /// Evaluates `predict` on the test sets of tasks 0..k and appends row k.
  /// Throws ConfigError when rows are appended out of order, DataError for an empty test split.
  void record(std::size_t k, const TaskSequence& seq, const Predictor& predict);

  nlohmann::json meta;  ///< seed, config hash, permutation

  nlohmann::json to_json() const;
  static AccuracyMatrix from_json(const nlohmann::json& j);
  std::string to_csv() const;

  bool operator==(const AccuracyMatrix& o) const;

 private:
  struct Row {
    std::vector<Tally> tasks;
    std::map<RelationId, Tally> relations;
  };
  std::vector<Row> rows_;
};

/// Fills a matrix from one predictor per finished task.
AccuracyMatrix evaluate_sequence(const std::vector<Predictor>& after_task, const TaskSequence& seq);

// --- prototype similarity analytics -----------------------------------------

/// Relation prototypes as they stood after each task.
struct PrototypeSnapshot {
  std::vector<RelationId> relations;
  Matrix prototypes;  ///< one row per relation
};
using PrototypeHistory = std::vector<PrototypeSnapshot>;

nlohmann::json to_json(const PrototypeSnapshot& s);
PrototypeSnapshot prototype_snapshot_from_json(const nlohmann::json& j);

double cosine(const Vector& a, const Vector& b);
/// Symmetric cosine-similarity matrix between rows.
Matrix cosine_matrix(const Matrix& rows);
/// Per relation, the maximum cosine similarity to any other relation of the snapshot.
/// Throws DataError with fewer than two relations.
std::map<RelationId, double> max_similarity(const PrototypeSnapshot& s);

enum class SimilarityBin { high, medium, low };
/// high: [0.85, 1.0], medium: [0.70, 0.85), low: below 0.70.
SimilarityBin similarity_bin(double max_sim);
const char* to_string(SimilarityBin b);

struct RelationForgetting {
  RelationId relation;
  std::string name;
  std::size_t first_task = 0;
  double first_accuracy = 0.0;
  double final_accuracy = 0.0;
  double drop = 0.0;
  double max_similarity = 0.0;
  SimilarityBin bin = SimilarityBin::low;
};

struct BinSummary {
  std::string bin;
  std::size_t count = 0;
  std::optional<double> mean_drop;
};

/// Mean max-similarity before and after adjacent-task accuracy drops.
struct SuddenDropRow {
  std::string range;  ///< "(0,20)", "[20,40)", "[40,100]" in accuracy points
  std::size_t count = 0;
  std::optional<double> mean_before;
  std::optional<double> mean_after;
  std::optional<double> mean_change;
};

struct ForgettingReport {
  std::vector<RelationForgetting> relations;
  std::vector<BinSummary> bins;
  std::vector<SuddenDropRow> sudden_drops;
  nlohmann::json meta;
};

/// Sudden-drop bin for a drop in accuracy points; nullopt unless the drop is positive.
std::optional<std::size_t> sudden_drop_bin(double drop_points);

/// Requires one snapshot per accuracy-matrix row; similarity is taken from the final snapshot.
ForgettingReport similarity_analysis(const PrototypeHistory& history, const AccuracyMatrix& acc,
                                     const TaskSequence& seq);
nlohmann::json to_json(const ForgettingReport& r);

struct SubsetMetrics {
  std::vector<RelationId> relations;
  std::optional<double> final_accuracy;  ///< nullopt when the subset is empty
  std::optional<double> drop;
};

struct AnalogousMetrics {
  SubsetMetrics analogous;
  SubsetMetrics dissimilar;
  SubsetMetrics all;
};

/// Relations learned in the first `former_tasks` tasks, split by their maximum final-prototype
/// similarity to relations learned later: above `threshold` is analogous, below `dissimilar_threshold`
/// is dissimilar. `former_tasks` defaults to half of the sequence.
AnalogousMetrics analogous_subset_metrics(const ForgettingReport& report, const PrototypeSnapshot& final_snapshot,
                                          const TaskSequence& seq, double threshold = 0.85,
                                          double dissimilar_threshold = 0.7,
                                          std::optional<std::size_t> former_tasks = std::nullopt);
/// Aggregates an explicit relation subset.
SubsetMetrics subset_metrics(const ForgettingReport& report, const std::vector<RelationId>& subset);
nlohmann::json to_json(const SubsetMetrics& m);
nlohmann::json to_json(const AnalogousMetrics& m);

struct Heatmap {
  std::vector<std::string> names;
  Matrix values;
};

/// Cosine-similarity heatmap over `subset` (all snapshot relations when empty).
Heatmap similarity_heatmap(const PrototypeSnapshot& s, const RelationVocab& vocab,
                           const std::vector<RelationId>& subset = {});
std::string to_csv(const Heatmap& h);
nlohmann::json to_json(const Heatmap& h);

/// Writes via a temporary file and rename.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace crel
