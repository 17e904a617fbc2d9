#include "crel/experiment.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/random.hpp"
#include "crel/training.hpp"

#ifndef CREL_VERSION
#define CREL_VERSION "unknown"
#endif

namespace crel {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {
const char* format_name(CorpusFormat f) { return f == CorpusFormat::json_lines ? "jsonl" : "fewrel"; }

json data_to_json(const DatasetSource& d) {
  json j;
  if (d.synthetic) {
    j["synthetic"] = synthetic_spec_to_json(*d.synthetic);
    return j;
  }
  if (d.corpus) j["corpus"] = d.corpus->string();
  j["format"] = format_name(d.format);
  if (d.division) j["division"] = d.division->string();
  j["num_tasks"] = d.num_tasks;
  j["split_ratios"] = {d.ratios.train, d.ratios.valid, d.ratios.test};
  return j;
}

DatasetSource data_from_json(const json& j) {
  DatasetSource d;
  if (!j.is_object()) throw ConfigError("\"data\" must be an object");
  try {
    if (j.contains("synthetic")) {
      d.synthetic = synthetic_spec_from_json(j["synthetic"]);
      return d;
    }
    if (!j.contains("corpus")) throw ConfigError("\"data\" needs either \"corpus\" or \"synthetic\"");
    d.corpus = j["corpus"].get<std::string>();
    if (j.contains("format")) d.format = corpus_format_from_string(j["format"].get<std::string>());
    if (j.contains("division")) d.division = j["division"].get<std::string>();
    d.num_tasks = j.value("num_tasks", d.num_tasks);
    if (j.contains("split_ratios")) {
      const auto& r = j["split_ratios"];
      d.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  if (d.num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
  return d;
}

void log_line(const RunOptions& o, const std::string& s) {
  if (o.log) *o.log << s << std::endl;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}
}  // namespace

ExperimentSpec experiment_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment file must hold an object");
  ExperimentSpec s;
  s.config = run_config_from_json(j);
  if (!j.contains("data")) throw ConfigError("experiment file lacks a \"data\" section");
  s.data = data_from_json(j["data"]);
  try {
    s.permutations = j.value("permutations", s.permutations);
    s.output_dir = j.value("output_dir", s.output_dir.string());
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  if (s.permutations < 1) throw ConfigError("permutations must be >= 1");
  return s;
}

json to_json(const ExperimentSpec& s) {
  json j = to_json(s.config);
  j["data"] = data_to_json(s.data);
  j["permutations"] = s.permutations;
  j["output_dir"] = s.output_dir.string();
  return j;
}

ExperimentSpec load_experiment_spec(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return experiment_spec_from_json(j);
}

std::string config_hash(const ExperimentSpec& s) {
  json j = to_json(s);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

fs::path resolve_output_dir(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("CREL_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

std::uint64_t permutation_seed(const ExperimentSpec& s, int p) {
  return s.config.seed + static_cast<std::uint64_t>(p);
}

TaskSequence build_permutation(const ExperimentSpec& s, int p, std::vector<std::pair<RelationId, RelationId>>* analogous) {
  const auto seed = permutation_seed(s, p);
  if (s.data.synthetic) {
    SyntheticSpec sp = *s.data.synthetic;
    sp.seed += static_cast<std::uint64_t>(p);
    auto sc = generate_synthetic_sequence(sp);
    if (analogous) *analogous = sc.analogous_pairs;
    return std::move(sc.sequence);
  }
  const Corpus corpus = ingest_corpus(*s.data.corpus, s.data.format);
  if (s.data.division) {
    auto division = load_task_division(*s.data.division);
    if (p > 0) {
      Rng rng(derive_seed(seed, {0x7061u}));
      rng.shuffle(division);
    }
    return build_task_sequence(corpus, division, seed, s.data.ratios);
  }
  return build_task_sequence(corpus, s.data.num_tasks, seed, s.data.ratios);
}

SummaryRow summarize(const std::vector<const AccuracyMatrix*>& ms) {
  SummaryRow row;
  if (ms.empty()) return row;
  const std::size_t n = ms.front()->num_rows();
  for (const auto* m : ms)
    if (m->num_rows() != n) throw std::invalid_argument("summarize: permutations differ in length");
  for (std::size_t k = 0; k < n; ++k) {
    double sum = 0.0;
    for (const auto* m : ms) sum += m->whole_history(k);
    const double mean = sum / static_cast<double>(ms.size());
    double ss = 0.0;
    for (const auto* m : ms) ss += (m->whole_history(k) - mean) * (m->whole_history(k) - mean);
    row.mean.push_back(mean);
    row.stddev.push_back(ms.size() > 1 ? std::sqrt(ss / static_cast<double>(ms.size() - 1)) : 0.0);
  }
  return row;
}

std::string format_summary(const SummaryRow& row) {
  std::ostringstream out;
  char buf[48];
  for (std::size_t k = 0; k < row.mean.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * row.mean[k], 100.0 * row.stddev[k]);
    out << (k ? "  " : "") << buf;
  }
  return out.str();
}

namespace {

json summary_json(const SummaryRow& r) { return {{"mean", r.mean}, {"std", r.stddev}}; }

SummaryRow summary_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

std::string summary_csv(const SummaryRow& r) {
  std::ostringstream out;
  out << "after_task,mean,std\n";
  char buf[64];
  for (std::size_t k = 0; k < r.mean.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", k, r.mean[k], r.stddev[k]);
    out << buf;
  }
  return out.str();
}

fs::path perm_dir(const fs::path& root, int p) { return root / ("perm_" + std::to_string(p)); }

json history_json(const PrototypeHistory& h) {
  json j = json::array();
  for (const auto& s : h) j.push_back(to_json(s));
  return j;
}

PrototypeHistory history_from_json(const json& j) {
  PrototypeHistory h;
  for (const auto& s : j) h.push_back(prototype_snapshot_from_json(s));
  return h;
}

/// Analytics for a finished (or partial) permutation; skipped while fewer than two relations exist.
void analyze(PermutationResult& r, const TaskSequence& seq) {
  r.forgetting.reset();
  r.analogous.reset();
  if (r.history.empty() || r.history.back().relations.size() < 2) return;
  r.forgetting = similarity_analysis(r.history, r.accuracy, seq);
  r.analogous = analogous_subset_metrics(*r.forgetting, r.history.back(), seq);
}

void write_analysis(const fs::path& dir, const PermutationResult& r) {
  if (r.forgetting) write_text(dir / "forgetting.json", to_json(*r.forgetting).dump(2));
  if (r.analogous) write_text(dir / "analogous.json", to_json(*r.analogous).dump(2));
}

PermutationResult run_permutation(const ExperimentSpec& spec, const fs::path& root, int p, int start_task,
                                  const RunOptions& opts) {
  const fs::path dir = perm_dir(root, p);
  const TaskSequence seq = task_sequence_from_json(read_json(dir / "sequence.json"));
  const json meta = read_json(dir / "meta.json");

  RunConfig cfg = spec.config;
  cfg.seed = permutation_seed(spec, p);

  PermutationResult res;
  res.permutation = p;
  std::optional<ContinualLearner> learner;
  if (start_task == 0) {
    learner.emplace(cfg, seq.vocab);
    res.accuracy.meta = meta;
  } else {
    learner.emplace(ContinualLearner::load(dir / "checkpoints", start_task - 1, cfg, seq));
    try {
      res.accuracy = AccuracyMatrix::from_json(read_json(dir / "accuracy.json"));
      res.history = history_from_json(read_json(dir / "prototypes.json"));
    } catch (const json::exception& e) {
      throw DataError("corrupt evaluation state after task " + std::to_string(start_task - 1) + ": " + e.what());
    }
    if (res.accuracy.num_rows() != static_cast<std::size_t>(start_task) ||
        res.history.size() != static_cast<std::size_t>(start_task))
      throw DataError("evaluation state does not match checkpoint of task " + std::to_string(start_task - 1));
  }

  std::ofstream steps(dir / "steps.jsonl", start_task == 0 ? std::ios::trunc : std::ios::app);
  learner->set_logger([&](const StepLog& s) {
    json j = to_json(s.losses);
    j["task"] = s.task;
    j["phase"] = s.phase;
    j["epoch"] = s.epoch;
    j["step"] = s.step;
    if (s.replay_set_size) j["replay_set_size"] = s.replay_set_size;
    steps << j.dump() << '\n';
  });

  const int last = static_cast<int>(seq.size()) - 1;
  const int stop = opts.stop_after_task ? std::min(*opts.stop_after_task, last) : last;
  for (int k = start_task; k <= stop; ++k) {
    learner->run_task(seq, static_cast<std::size_t>(k));
    res.accuracy.record(static_cast<std::size_t>(k), seq,
                        [&](const std::vector<const Sample*>& b) { return learner->predict(b); });
    res.history.push_back({learner->seen(), learner->prototypes().matrix(learner->seen())});
    learner->save(dir / "checkpoints", k);
    write_text(dir / "accuracy.json", res.accuracy.to_json().dump(1));
    write_text(dir / "accuracy.csv", res.accuracy.to_csv());
    write_text(dir / "prototypes.json", history_json(res.history).dump());
    write_text(dir / "progress.json", json{{"completed_tasks", k + 1}, {"num_tasks", seq.size()}}.dump());
    char buf[96];
    std::snprintf(buf, sizeof buf, "perm %d task %d/%zu whole-history accuracy %.4f", p, k + 1, seq.size(),
                  res.accuracy.whole_history(static_cast<std::size_t>(k)));
    log_line(opts, buf);
  }
  steps.flush();
  res.complete = stop == last;
  analyze(res, seq);
  write_analysis(dir, res);
  return res;
}

void write_summary(const fs::path& root, ExperimentResult& out) {
  std::vector<const AccuracyMatrix*> ms;
  for (const auto& r : out.permutations) {
    if (!r.complete) return;
    ms.push_back(&r.accuracy);
  }
  out.summary = summarize(ms);
  json finals = json::array();
  for (const auto* m : ms) finals.push_back(m->whole_history(m->num_rows() - 1));
  json j = summary_json(*out.summary);
  j["final_per_permutation"] = finals;
  j["formatted"] = format_summary(*out.summary);
  j["config_hash"] = read_json(root / "experiment.json").at("config_hash");
  write_text(root / "summary.json", j.dump(2));
  write_text(root / "summary.csv", summary_csv(*out.summary));
}

int completed_tasks(const fs::path& dir) {
  if (!fs::exists(dir / "progress.json")) return 0;
  return read_json(dir / "progress.json").at("completed_tasks").get<int>();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& opts) {
  spec.config.validate();
  const fs::path root = resolve_output_dir(spec.output_dir);
  if (fs::exists(root / "experiment.json"))
    throw ConfigError("output directory " + root.string() + " already holds a run; use resume to continue it");
  fs::create_directories(root);

  json exp{{"spec", to_json(spec)}, {"config_hash", config_hash(spec)}, {"version", CREL_VERSION}};
  json seeds = json::array();
  for (int p = 0; p < spec.permutations; ++p) seeds.push_back(permutation_seed(spec, p));
  exp["seeds"] = seeds;

  // Sequences are materialized up front so the directory no longer depends on the corpus path.
  for (int p = 0; p < spec.permutations; ++p) {
    std::vector<std::pair<RelationId, RelationId>> pairs;
    const TaskSequence seq = build_permutation(spec, p, &pairs);
    seq.validate();
    const fs::path dir = perm_dir(root, p);
    write_text(dir / "sequence.json", task_sequence_to_json(seq).dump());
    json order = json::array();
    for (const auto& t : seq.tasks) {
      json names = json::array();
      for (auto r : t.relations) names.push_back(seq.vocab.name(r));
      order.push_back(names);
    }
    json jp = json::array();
    for (auto [a, b] : pairs) jp.push_back({seq.vocab.name(a), seq.vocab.name(b)});
    write_text(dir / "meta.json", json{{"seed", permutation_seed(spec, p)},
                                       {"config_hash", exp["config_hash"]},
                                       {"permutation", p},
                                       {"task_order", order},
                                       {"analogous_pairs", jp}}
                                      .dump(1));
  }
  write_text(root / "experiment.json", exp.dump(2));

  ExperimentResult out;
  out.directory = root;
  for (int p = 0; p < spec.permutations; ++p) out.permutations.push_back(run_permutation(spec, root, p, 0, opts));
  write_summary(root, out);
  return out;
}

ExperimentResult resume_experiment(const fs::path& dir_in, const std::optional<ExperimentSpec>& expected,
                                   const RunOptions& opts) {
  const fs::path root = resolve_output_dir(dir_in);
  if (!fs::exists(root / "experiment.json")) throw ConfigError(root.string() + " holds no run to resume");
  const json exp = read_json(root / "experiment.json");
  ExperimentSpec spec = experiment_spec_from_json(exp.at("spec"));
  const std::string stored = exp.at("config_hash").get<std::string>();
  if (config_hash(spec) != stored) throw DataError("experiment.json was modified: config hash mismatch");
  if (expected && config_hash(*expected) != stored)
    throw ConfigError("config hash " + config_hash(*expected) + " differs from the run's " + stored +
                      "; refusing to resume");

  ExperimentResult out;
  out.directory = root;
  bool any = false;
  for (int p = 0; p < spec.permutations; ++p) {
    const fs::path dir = perm_dir(root, p);
    const int done = completed_tasks(dir);
    const auto total = read_json(dir / "sequence.json").at("tasks").size();
    if (done >= static_cast<int>(total)) {
      out.permutations.push_back(load_experiment(root).permutations.at(static_cast<std::size_t>(p)));
      continue;
    }
    any = true;
    log_line(opts, "perm " + std::to_string(p) + ": resuming after " + std::to_string(done) + " completed tasks");
    out.permutations.push_back(run_permutation(spec, root, p, done, opts));
  }
  if (!any) log_line(opts, "run already finished; nothing to resume");
  write_summary(root, out);
  return out;
}

ExperimentResult load_experiment(const fs::path& dir_in) {
  const fs::path root = resolve_output_dir(dir_in);
  const json exp = read_json(root / "experiment.json");
  const int n = exp.at("spec").at("permutations").get<int>();
  ExperimentResult out;
  out.directory = root;
  for (int p = 0; p < n; ++p) {
    const fs::path dir = perm_dir(root, p);
    PermutationResult r;
    r.permutation = p;
    const TaskSequence seq = task_sequence_from_json(read_json(dir / "sequence.json"));
    if (fs::exists(dir / "accuracy.json")) {
      r.accuracy = AccuracyMatrix::from_json(read_json(dir / "accuracy.json"));
      r.history = history_from_json(read_json(dir / "prototypes.json"));
    }
    r.complete = r.accuracy.num_rows() == seq.size();
    analyze(r, seq);
    out.permutations.push_back(std::move(r));
  }
  if (fs::exists(root / "summary.json")) out.summary = summary_from_json(read_json(root / "summary.json"));
  return out;
}

MemorySweepReport memory_size_sweep(const ExperimentSpec& spec, const std::vector<int>& sizes, const RunOptions& opts) {
  if (sizes.empty()) throw ConfigError("memory sweep needs at least one size");
  for (int s : sizes)
    if (s < 1) throw ConfigError("memory sizes must be positive, got " + std::to_string(s));
  MemorySweepReport rep;
  rep.sizes = sizes;
  for (int s : sizes) {
    ExperimentSpec e = spec;
    e.config.memory_size = s;
    e.output_dir = resolve_output_dir(spec.output_dir) / ("memory_" + std::to_string(s));
    log_line(opts, "memory size " + std::to_string(s));
    rep.rows.push_back(*run_experiment(e, opts).summary);
  }
  for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i) {
    std::vector<double> d;
    for (std::size_t k = 0; k < rep.rows[i].mean.size(); ++k) d.push_back(rep.rows[i + 1].mean[k] - rep.rows[i].mean[k]);
    rep.differences.push_back(std::move(d));
  }
  write_text(resolve_output_dir(spec.output_dir) / "memory_sweep.json", to_json(rep).dump(2));
  return rep;
}

json to_json(const MemorySweepReport& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.sizes.size(); ++i) {
    json row = summary_json(r.rows[i]);
    row["memory_size"] = r.sizes[i];
    row["final_accuracy"] = r.rows[i].mean.empty() ? 0.0 : r.rows[i].mean.back();
    rows.push_back(row);
  }
  json diffs = json::array();
  for (std::size_t i = 0; i < r.differences.size(); ++i)
    diffs.push_back({{"from", r.sizes[i]}, {"to", r.sizes[i + 1]}, {"difference", r.differences[i]}});
  return {{"sizes", rows}, {"differences", diffs}};
}

AblationReport run_ablations(const ExperimentSpec& spec, const std::vector<std::string>& ablations,
                             const RunOptions& opts) {
  if (ablations.empty()) throw ConfigError("no ablations requested");
  AblationReport rep;
  for (const auto& a : ablations) {
    ExperimentSpec e = spec;
    e.config.ablation = ablation_from_name(a);
    e.config.validate();
    const std::string name = ablation_name(e.config.ablation);
    std::string dirname;
    for (char c : name) dirname += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    e.output_dir = resolve_output_dir(spec.output_dir) / dirname;
    log_line(opts, "ablation " + name);
    rep.names.push_back(name);
    rep.rows.push_back(*run_experiment(e, opts).summary);
  }
  write_text(resolve_output_dir(spec.output_dir) / "ablations.json", to_json(rep).dump(2));
  return rep;
}

json to_json(const AblationReport& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    json row = summary_json(r.rows[i]);
    row["ablation"] = r.names[i];
    row["formatted"] = format_summary(r.rows[i]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace crel
