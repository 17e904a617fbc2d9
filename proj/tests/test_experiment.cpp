#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/experiment.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace crel;
using crel::test::TempDir;
using nlohmann::json;

namespace {

json tiny_spec_json() {
  return json{
      {"profile", "fewrel"},
      {"memory_size", 3},
      {"seed", 11},
      {"optimizer", {{"learning_rate", 0.005}, {"backbone_learning_rate", 0.005}, {"epochs_new", 1}, {"epochs_replay", 1}, {"batch_size", 8}}},
      {"encoder", {{"backbone", "toy"}, {"dim", 8}, {"proj_dim", 8}, {"vocab_buckets", 128}}},
      {"data", {{"synthetic", {{"num_relations", 6}, {"num_tasks", 3}, {"samples_per_relation", 12}, {"analogous_pairs", {{0, 4}}}}}}},
      {"permutations", 2},
  };
}

ExperimentSpec tiny_spec(const std::filesystem::path& out) {
  ExperimentSpec s = experiment_spec_from_json(tiny_spec_json());
  s.output_dir = out;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("experiment spec parsing") {
  const ExperimentSpec s = experiment_spec_from_json(tiny_spec_json());
  CHECK(s.permutations == 2);
  CHECK(s.config.memory_size == 3);
  CHECK(s.config.lambda2 == 1.1);
  CHECK(s.data.synthetic->num_relations == 6);
  CHECK(experiment_spec_from_json(to_json(s)).config == s.config);
  CHECK(config_hash(experiment_spec_from_json(to_json(s))) == config_hash(s));

  ExperimentSpec moved = s;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(s));
  ExperimentSpec changed = s;
  changed.config.alpha = 0.25;
  CHECK(config_hash(changed) != config_hash(s));

  json j = tiny_spec_json();
  j["ablation"] = json{{"linear", false}, {"contrastive", false}};
  CHECK_THROWS_AS(experiment_spec_from_json(j), ConfigError);
  j = tiny_spec_json();
  j.erase("data");
  CHECK_THROWS_AS(experiment_spec_from_json(j), ConfigError);
  j = tiny_spec_json();
  j["alpha"] = 1.5;
  CHECK_THROWS_AS(experiment_spec_from_json(j), ConfigError);
  j = tiny_spec_json();
  j["permutations"] = 0;
  CHECK_THROWS_AS(experiment_spec_from_json(j), ConfigError);
  CHECK_THROWS_AS(load_experiment_spec("/nonexistent/spec.json"), ConfigError);
}

TEST_CASE("ablation names map to switches") {
  CHECK(ablation_from_name("full") == Ablation{});
  CHECK(!ablation_from_name("w/o FKD").fkd);
  CHECK(!ablation_from_name("LM").linear);
  CHECK(!ablation_from_name("no-cm").contrastive);
  CHECK(!ablation_from_name("MA").augmentation);
  CHECK(!ablation_from_name("DP").dynamic_prototypes);
  CHECK(!ablation_from_name("SP").static_prototypes);
  CHECK(!ablation_from_name("replay").replay);
  CHECK(ablation_name(ablation_from_name("MA")) == "w/o MA");
  CHECK_THROWS_AS(ablation_from_name("XYZ"), ConfigError);
}

TEST_CASE("output root resolution") {
  ::setenv("CREL_OUTPUT_ROOT", "/tmp/somewhere", 1);
  CHECK(resolve_output_dir("run") == std::filesystem::path("/tmp/somewhere/run"));
  CHECK(resolve_output_dir("/abs/run") == std::filesystem::path("/abs/run"));
  ::unsetenv("CREL_OUTPUT_ROOT");
  CHECK(resolve_output_dir("run") == std::filesystem::path("run"));
}

TEST_CASE("permutations reorder tasks reproducibly") {
  const ExperimentSpec s = tiny_spec("unused");
  std::vector<std::pair<RelationId, RelationId>> pairs;
  const TaskSequence a = build_permutation(s, 0, &pairs), b = build_permutation(s, 0);
  const TaskSequence c = build_permutation(s, 1);
  CHECK(task_sequence_to_json(a) == task_sequence_to_json(b));
  CHECK(task_sequence_to_json(a) != task_sequence_to_json(c));
  CHECK(pairs.size() == 1);
  CHECK(permutation_seed(s, 1) == s.config.seed + 1);
}

TEST_CASE("runs are deterministic and write every artifact") {
  TempDir d1("run1"), d2("run2");
  const auto r1 = run_experiment(tiny_spec(d1.path / "out"));
  const auto r2 = run_experiment(tiny_spec(d2.path / "out"));
  REQUIRE(r1.summary);
  CHECK(r1.summary->mean.size() == 3);
  CHECK(r1.summary->mean == r2.summary->mean);
  for (int p = 0; p < 2; ++p) {
    const auto dir = "perm_" + std::to_string(p);
    for (const char* f : {"accuracy.json", "accuracy.csv", "prototypes.json", "steps.jsonl", "forgetting.json",
                          "analogous.json", "meta.json", "sequence.json"}) {
      CHECK(std::filesystem::exists(d1.path / "out" / dir / f));
    }
    CHECK(slurp(d1.path / "out" / dir / "accuracy.json") == slurp(d2.path / "out" / dir / "accuracy.json"));
    CHECK(slurp(d1.path / "out" / dir / "accuracy.csv") == slurp(d2.path / "out" / dir / "accuracy.csv"));
    CHECK(r1.permutations[static_cast<std::size_t>(p)].accuracy == r2.permutations[static_cast<std::size_t>(p)].accuracy);
  }
  const json summary = json::parse(slurp(d1.path / "out" / "summary.json"));
  CHECK(summary["formatted"].get<std::string>().find("±") != std::string::npos);

  const auto loaded = load_experiment(d1.path / "out");
  CHECK(loaded.permutations[0].accuracy == r1.permutations[0].accuracy);
  CHECK(loaded.permutations[0].complete);

  CHECK_THROWS_AS(run_experiment(tiny_spec(d1.path / "out")), ConfigError);
}

TEST_CASE("resume reproduces an uninterrupted run") {
  TempDir full("full"), part("part");
  const auto uninterrupted = run_experiment(tiny_spec(full.path / "out"));
  RunOptions stop;
  stop.stop_after_task = 0;
  const auto partial = run_experiment(tiny_spec(part.path / "out"), stop);
  CHECK(!partial.summary);
  CHECK(partial.permutations[0].accuracy.num_rows() == 1);

  const auto resumed = resume_experiment(part.path / "out", tiny_spec(part.path / "out"));
  for (std::size_t p = 0; p < 2; ++p) CHECK(resumed.permutations[p].accuracy == uninterrupted.permutations[p].accuracy);
  const auto dir = std::filesystem::path("perm_1");
  CHECK(slurp(part.path / "out" / dir / "accuracy.json") == slurp(full.path / "out" / dir / "accuracy.json"));
  CHECK(slurp(part.path / "out" / dir / "checkpoints" / "model_task2.bin") ==
        slurp(full.path / "out" / dir / "checkpoints" / "model_task2.bin"));

  SUBCASE("a finished run is left alone") {
    const auto before = slurp(part.path / "out" / dir / "accuracy.json");
    std::ostringstream log;
    RunOptions o;
    o.log = &log;
    const auto again = resume_experiment(part.path / "out", std::nullopt, o);
    CHECK(log.str().find("nothing to resume") != std::string::npos);
    CHECK(slurp(part.path / "out" / dir / "accuracy.json") == before);
    CHECK(again.permutations[1].accuracy == uninterrupted.permutations[1].accuracy);
  }
  SUBCASE("altered configuration is refused") {
    ExperimentSpec other = tiny_spec(part.path / "out");
    other.config.lambda1 = 0.9;
    CHECK_THROWS_AS(resume_experiment(part.path / "out", other), ConfigError);
  }
}

TEST_CASE("corrupt checkpoint names the task") {
  TempDir d("corrupt");
  RunOptions stop;
  stop.stop_after_task = 1;
  run_experiment(tiny_spec(d.path / "out"), stop);
  const auto ckpt = d.path / "out" / "perm_0" / "checkpoints" / "model_task1.bin";
  REQUIRE(std::filesystem::exists(ckpt));
  std::filesystem::resize_file(ckpt, 40);
  try {
    resume_experiment(d.path / "out");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("task 1") != std::string::npos);
  }
  CHECK_THROWS_AS(resume_experiment(d.path / "missing"), ConfigError);
}

TEST_CASE("memory sweep") {
  TempDir d("sweep");
  ExperimentSpec s = tiny_spec(d.path / "sweep");
  s.permutations = 1;
  CHECK_THROWS_AS(memory_size_sweep(s, {0}), ConfigError);
  CHECK_THROWS_AS(memory_size_sweep(s, {}), ConfigError);
  const auto one = memory_size_sweep(s, {2});
  CHECK(one.differences.empty());
  CHECK(one.rows.size() == 1);

  ExperimentSpec s2 = tiny_spec(d.path / "sweep2");
  s2.permutations = 1;
  const auto two = memory_size_sweep(s2, {1, 3});
  REQUIRE(two.differences.size() == 1);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(two.differences[0][k] == doctest::Approx(two.rows[1].mean[k] - two.rows[0].mean[k]));
  CHECK(std::filesystem::exists(d.path / "sweep2" / "memory_sweep.json"));
}

TEST_CASE("ablation runner") {
  TempDir d("ablate");
  ExperimentSpec s = tiny_spec(d.path / "abl");
  s.permutations = 1;
  const auto rep = run_ablations(s, {"full", "MA"});
  CHECK(rep.names == std::vector<std::string>{"full", "w/o MA"});
  CHECK(std::filesystem::exists(d.path / "abl" / "w_o_MA" / "summary.json"));
  CHECK(std::filesystem::exists(d.path / "abl" / "ablations.json"));
  CHECK_THROWS_AS(run_ablations(s, {"unknown"}), ConfigError);
  CHECK_THROWS_AS(run_ablations(s, {}), ConfigError);
}

TEST_CASE("summary statistics over permutations") {
  auto a = crel::test::six_relation_fixture();
  auto b = crel::test::six_relation_fixture();
  b.correct[2] = {10, 10, 10, 10, 10, 10};
  b.evaluate();
  const SummaryRow row = summarize({&a.acc, &b.acc});
  REQUIRE(row.mean.size() == 3);
  const double x = a.acc.whole_history(2), y = b.acc.whole_history(2);
  CHECK(row.mean[2] == doctest::Approx((x + y) / 2.0));
  CHECK(row.stddev[2] == doctest::Approx(std::abs(x - y) / std::sqrt(2.0)));
  CHECK(row.stddev[0] == 0.0);
  const SummaryRow single = summarize({&a.acc});
  CHECK(single.stddev[2] == 0.0);
  const std::string text = format_summary(row);
  CHECK(text.find("±") != std::string::npos);
}
