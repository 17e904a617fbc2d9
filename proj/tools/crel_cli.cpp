// Command-line driver: ingest, run, sweep-memory, ablate, analyze, export-heatmap, resume.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crel/errors.hpp"
#include "crel/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crel;

namespace {

struct Overrides {
  std::string config;
  std::string output;
  std::string profile;
  std::string ablation;
  std::string backbone;
  std::optional<std::uint64_t> seed;
  std::optional<int> permutations;
  std::optional<int> memory_size;
  std::optional<int> epochs_new;
  std::optional<int> epochs_replay;
  std::optional<double> alpha;
  std::optional<double> beta;

  void attach(CLI::App* app, bool require_config = true) {
    auto* c = app->add_option("-c,--config", config, "experiment file (JSON)");
    if (require_config) c->required();
    app->add_option("-o,--output", output, "output directory (relative paths use $CREL_OUTPUT_ROOT)");
    app->add_option("--profile", profile, "hyperparameter profile: fewrel or tacred");
    app->add_option("--ablation", ablation, "FKD, LM, CM, MA, DP, SP, replay or full");
    app->add_option("--backbone", backbone, "toy or transformer");
    app->add_option("--seed", seed);
    app->add_option("--permutations", permutations);
    app->add_option("--memory-size", memory_size);
    app->add_option("--epochs-new", epochs_new);
    app->add_option("--epochs-replay", epochs_replay);
    app->add_option("--alpha", alpha);
    app->add_option("--beta", beta);
  }

  ExperimentSpec load() const {
    json j;
    try {
      std::ifstream in(config);
      if (!in) throw ConfigError("cannot open config " + config);
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(config + ": " + e.what());
    }
    // A profile on the command line replaces the file's numeric defaults but not its explicit values.
    if (!profile.empty()) j["profile"] = profile;
    if (!output.empty()) j["output_dir"] = output;
    if (!ablation.empty()) j["ablation"] = ablation;
    if (!backbone.empty()) j["encoder"]["backbone"] = backbone;
    if (seed) j["seed"] = *seed;
    if (permutations) j["permutations"] = *permutations;
    if (memory_size) j["memory_size"] = *memory_size;
    if (epochs_new) j["optimizer"]["epochs_new"] = *epochs_new;
    if (epochs_replay) j["optimizer"]["epochs_replay"] = *epochs_replay;
    if (alpha) j["alpha"] = *alpha;
    if (beta) j["beta"] = *beta;
    return experiment_spec_from_json(j);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_summary(const ExperimentResult& r) {
  if (r.summary) std::cout << "whole-history accuracy (mean ± std over permutations):\n  " << format_summary(*r.summary) << "\n";
  std::cout << "artifacts in " << r.directory.string() << "\n";
}

int cmd_ingest(const std::string& corpus, const std::string& format, const std::string& out, int tasks,
               const std::string& division, std::uint64_t seed, bool keep_no_relation) {
  IngestOptions opts;
  opts.drop_no_relation = !keep_no_relation;
  const Corpus c = ingest_corpus(corpus, corpus_format_from_string(format), opts);
  const fs::path dir = resolve_output_dir(out);
  std::ostringstream lines;
  for (const auto& s : c.samples) lines << sample_to_json(s, c.vocab).dump() << '\n';
  write_text(dir / "corpus.jsonl", lines.str());
  json stats{{"samples", c.samples.size()}, {"relations", c.vocab.size()}, {"relation_names", c.vocab.names()}};
  if (tasks > 0 || !division.empty()) {
    const TaskSequence seq = division.empty() ? build_task_sequence(c, tasks, seed)
                                              : build_task_sequence(c, load_task_division(division), seed);
    write_text(dir / "sequence.json", task_sequence_to_json(seq).dump());
    stats["tasks"] = seq.size();
  }
  write_text(dir / "ingest.json", stats.dump(2));
  std::cout << "ingested " << c.samples.size() << " samples over " << c.vocab.size() << " relations into "
            << dir.string() << "\n";
  return 0;
}

int cmd_analyze(const std::string& run, double threshold, double dissimilar, int former) {
  const ExperimentResult r = load_experiment(run);
  json out = json::array();
  for (const auto& p : r.permutations) {
    if (p.history.empty() || p.history.back().relations.size() < 2) continue;
    const fs::path dir = r.directory / ("perm_" + std::to_string(p.permutation));
    const TaskSequence seq = task_sequence_from_json(json::parse(read_text(dir / "sequence.json")));
    const ForgettingReport rep = similarity_analysis(p.history, p.accuracy, seq);
    const auto m = analogous_subset_metrics(rep, p.history.back(), seq, threshold, dissimilar,
                                            former > 0 ? std::optional<std::size_t>(former) : std::nullopt);
    write_text(dir / "forgetting.json", to_json(rep).dump(2));
    write_text(dir / "analogous.json", to_json(m).dump(2));
    json j{{"permutation", p.permutation}, {"bins", to_json(rep)["bins"]}, {"sudden_drops", to_json(rep)["sudden_drops"]},
           {"subsets", to_json(m)}};
    out.push_back(j);
  }
  write_text(r.directory / "analysis.json", out.dump(2));
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_heatmap(const std::string& run, int perm, int task, const std::string& relations, const std::string& out) {
  const ExperimentResult r = load_experiment(run);
  const auto& p = r.permutations.at(static_cast<std::size_t>(perm));
  if (p.history.empty()) throw DataError("permutation " + std::to_string(perm) + " has no prototype history");
  const std::size_t k = task < 0 ? p.history.size() - 1 : static_cast<std::size_t>(task);
  if (k >= p.history.size()) throw ConfigError("task " + std::to_string(task) + " has not been completed");
  const fs::path dir = r.directory / ("perm_" + std::to_string(perm));
  const TaskSequence seq = task_sequence_from_json(json::parse(read_text(dir / "sequence.json")));
  std::vector<RelationId> subset;
  for (const auto& n : split_list(relations)) {
    auto id = seq.vocab.find(n);
    if (!id) throw ConfigError("unknown relation '" + n + "'");
    subset.push_back(*id);
  }
  const Heatmap h = similarity_heatmap(p.history[k], seq.vocab, subset);
  fs::path target = out.empty() ? dir / ("heatmap_task" + std::to_string(k) + ".csv") : resolve_output_dir(out);
  write_text(target, target.extension() == ".json" ? to_json(h).dump(2) : to_csv(h));
  std::cout << "wrote " << h.names.size() << "x" << h.names.size() << " heatmap to " << target.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual relation extraction with focal distillation and memory replay"};
  app.require_subcommand(1);
  RunOptions opts;
  opts.log = &std::cerr;

  std::string corpus, format = "jsonl", out, division;
  int tasks = 0;
  std::uint64_t ingest_seed = 42;
  bool keep_no_relation = false;
  auto* ingest = app.add_subcommand("ingest", "validate a corpus and write it in the canonical line format");
  ingest->add_option("corpus", corpus, "corpus file")->required();
  ingest->add_option("-f,--format", format, "jsonl or fewrel");
  ingest->add_option("-o,--output", out, "output directory")->required();
  ingest->add_option("--tasks", tasks, "also partition relations into this many tasks");
  ingest->add_option("--division", division, "fixed task division file");
  ingest->add_option("--seed", ingest_seed);
  ingest->add_flag("--keep-no-relation", keep_no_relation);

  Overrides run_o;
  std::optional<int> stop_after;
  auto* run = app.add_subcommand("run", "train and evaluate every task-order permutation");
  run_o.attach(run);
  run->add_option("--stop-after", stop_after, "stop after this task index (for a later resume)");

  Overrides sweep_o;
  std::string sizes = "5,10,15,20";
  auto* sweep = app.add_subcommand("sweep-memory", "repeat the experiment for several memory sizes");
  sweep_o.attach(sweep);
  sweep->add_option("--sizes", sizes, "comma-separated memory sizes");

  Overrides ablate_o;
  std::string ablations = "full,FKD,LM,CM,MA,DP,SP";
  auto* ablate = app.add_subcommand("ablate", "run the experiment once per ablation switch");
  ablate_o.attach(ablate);
  ablate->add_option("--ablations", ablations, "comma-separated ablation names");

  std::string run_dir;
  double threshold = 0.85, dissimilar = 0.7;
  int former = 0;
  auto* analyze = app.add_subcommand("analyze", "forgetting vs. prototype similarity for a finished run");
  analyze->add_option("run", run_dir, "run directory")->required();
  analyze->add_option("--threshold", threshold, "analogous similarity threshold");
  analyze->add_option("--dissimilar", dissimilar, "dissimilar similarity threshold");
  analyze->add_option("--former-tasks", former, "tasks counted as 'former' (default: half)");

  int perm = 0, task = -1;
  std::string relations, heat_out;
  auto* heat = app.add_subcommand("export-heatmap", "cosine similarity between relation prototypes");
  heat->add_option("run", run_dir, "run directory")->required();
  heat->add_option("--permutation", perm);
  heat->add_option("--task", task, "task index (default: last completed)");
  heat->add_option("--relations", relations, "comma-separated relation subset");
  heat->add_option("-o,--output", heat_out, "target .csv or .json");

  Overrides resume_o;
  auto* resume = app.add_subcommand("resume", "continue an interrupted run");
  resume->add_option("run", run_dir, "run directory")->required();
  resume_o.attach(resume, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*ingest) return cmd_ingest(corpus, format, out, tasks, division, ingest_seed, keep_no_relation);
    if (*run) {
      opts.stop_after_task = stop_after;
      print_summary(run_experiment(run_o.load(), opts));
      return 0;
    }
    if (*sweep) {
      std::vector<int> s;
      for (const auto& x : split_list(sizes)) {
        try {
          s.push_back(std::stoi(x));
        } catch (const std::exception&) {
          throw ConfigError("bad memory size '" + x + "'");
        }
      }
      const auto rep = memory_size_sweep(sweep_o.load(), s, opts);
      std::cout << to_json(rep).dump(2) << "\n";
      return 0;
    }
    if (*ablate) {
      const auto rep = run_ablations(ablate_o.load(), split_list(ablations), opts);
      for (std::size_t i = 0; i < rep.names.size(); ++i)
        std::cout << rep.names[i] << ": " << format_summary(rep.rows[i]) << "\n";
      return 0;
    }
    if (*analyze) return cmd_analyze(run_dir, threshold, dissimilar, former);
    if (*heat) return cmd_heatmap(run_dir, perm, task, relations, heat_out);
    if (*resume) {
      std::optional<ExperimentSpec> expected;
      if (!resume_o.config.empty()) expected = resume_o.load();
      print_summary(resume_experiment(run_dir, expected, opts));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
