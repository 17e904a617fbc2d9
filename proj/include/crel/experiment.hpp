#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crel/config.hpp"
#include "crel/data.hpp"
#include "crel/evaluation.hpp"
#include "crel/synthetic.hpp"

namespace crel {

/// Where task sequences come from: a corpus file or the synthetic generator.
struct DatasetSource {
  std::optional<std::filesystem::path> corpus;
  CorpusFormat format = CorpusFormat::json_lines;
  /// Fixed task division; permutations then reorder its tasks.
  std::optional<std::filesystem::path> division;
  int num_tasks = 10;
  SplitRatios ratios{};
  std::optional<SyntheticSpec> synthetic;
};

struct ExperimentSpec {
  RunConfig config;
  DatasetSource data;
  int permutations = 5;
  std::filesystem::path output_dir = "run";
};

/// Reads the experiment file. Top-level keys are RunConfig keys plus "data", "permutations", "output_dir".
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& s);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

/// Hash of everything that determines results (config, data source, permutation count).
std::string config_hash(const ExperimentSpec& s);

/// Resolves a relative output directory against $CREL_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& p);

/// Sequence for permutation p; `analogous` receives ground-truth pairs for synthetic data.
TaskSequence build_permutation(const ExperimentSpec& s, int p,
                               std::vector<std::pair<RelationId, RelationId>>* analogous = nullptr);
std::uint64_t permutation_seed(const ExperimentSpec& s, int p);

struct PermutationResult {
  int permutation = 0;
  AccuracyMatrix accuracy;
  PrototypeHistory history;
  std::optional<ForgettingReport> forgetting;  ///< absent when a snapshot has fewer than two relations
  std::optional<AnalogousMetrics> analogous;
  bool complete = false;
};

struct SummaryRow {
  std::vector<double> mean;  ///< whole-history accuracy after each task
  std::vector<double> stddev;
};

struct ExperimentResult {
  std::filesystem::path directory;
  std::vector<PermutationResult> permutations;
  std::optional<SummaryRow> summary;  ///< set once every permutation is complete
};

/// Sample standard deviation (zero for a single value).
SummaryRow summarize(const std::vector<const AccuracyMatrix*>& matrices);
std::string format_summary(const SummaryRow& row);

struct RunOptions {
  /// Stop every permutation after this task index, leaving a resumable directory.
  std::optional<int> stop_after_task;
  std::ostream* log = nullptr;
};

/// Runs every permutation into spec.output_dir. Refuses a directory that already holds a run.
ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& opts = {});

/// Continues an interrupted run from the last completed task. When `expected` is given its
/// config hash must match the stored one. A finished run is left untouched.
ExperimentResult resume_experiment(const std::filesystem::path& dir, const std::optional<ExperimentSpec>& expected = {},
                                   const RunOptions& opts = {});

/// Loads the stored artifacts of a run directory without training.
ExperimentResult load_experiment(const std::filesystem::path& dir);

struct MemorySweepReport {
  std::vector<int> sizes;
  std::vector<SummaryRow> rows;
  /// rows[i+1].mean - rows[i].mean per task, for adjacent sizes.
  std::vector<std::vector<double>> differences;
};

/// Throws ConfigError for an empty list or a size below 1.
MemorySweepReport memory_size_sweep(const ExperimentSpec& spec, const std::vector<int>& sizes,
                                    const RunOptions& opts = {});
nlohmann::json to_json(const MemorySweepReport& r);

struct AblationReport {
  std::vector<std::string> names;
  std::vector<SummaryRow> rows;
};

/// One experiment per ablation name ("full", "FKD", "LM", "CM", "MA", "DP", "SP", "replay").
AblationReport run_ablations(const ExperimentSpec& spec, const std::vector<std::string>& ablations,
                             const RunOptions& opts = {});
nlohmann::json to_json(const AblationReport& r);

}  // namespace crel
