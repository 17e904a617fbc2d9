#include <doctest.h>

#include <fstream>
#include <set>

#include "crel/errors.hpp"
#include "crel/synthetic.hpp"
#include "support.hpp"

using namespace crel;
using crel::test::TempDir;

namespace {
std::filesystem::path write_file(const TempDir& d, const std::string& name, const std::string& text) {
  auto p = d.path / name;
  std::ofstream(p) << text;
  return p;
}

Corpus many_relations(int relations, int per_relation) {
  Corpus c;
  for (int r = 0; r < relations; ++r) {
    const RelationId id = c.vocab.add("r" + std::to_string(r));
    for (int i = 0; i < per_relation; ++i)
      c.samples.push_back(crel::test::sentence("r" + std::to_string(r) + "_" + std::to_string(i), id.value, "a", "b",
                                               {"cue" + std::to_string(r)}));
  }
  for (auto& s : c.samples) s.split = Split::unspecified;
  return c;
}
}  // namespace

TEST_CASE("single JSON-lines record ingests into one sample") {
  TempDir d("ingest");
  auto p = write_file(d, "c.jsonl",
                      R"({"id":"s1","tokens":["Remixes","of","Persona","5","by","Shoji","Meguro"],"h":[2,4],"t":[5,7],"relation":"composer"})"
                      "\n");
  const Corpus c = ingest_corpus(p, CorpusFormat::json_lines);
  REQUIRE(c.samples.size() == 1);
  CHECK(c.vocab.size() == 1);
  CHECK(c.samples[0].head.start == 2);
  CHECK(c.samples[0].head.end == 4);
  CHECK(c.samples[0].tail.start == 5);
  CHECK(c.samples[0].provenance == Provenance::original);
  CHECK(c.vocab.name(c.samples[0].relation) == "composer");
}

TEST_CASE("malformed records are rejected with record id and field") {
  TempDir d("bad");
  SUBCASE("empty span") {
    auto p = write_file(d, "c.jsonl", R"({"id":"x","tokens":["a","b","c","d"],"h":[3,3],"t":[0,1],"relation":"r"})");
    try {
      ingest_corpus(p, CorpusFormat::json_lines);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("empty span") != std::string::npos);
      CHECK(std::string(e.what()).find("x") != std::string::npos);
    }
  }
  SUBCASE("overlapping spans") {
    auto p = write_file(d, "c.jsonl", R"({"id":"y","tokens":["a","b","c","d"],"h":[0,2],"t":[1,3],"relation":"r"})");
    CHECK_THROWS_AS(ingest_corpus(p, CorpusFormat::json_lines), DataError);
  }
  SUBCASE("span out of bounds") {
    auto p = write_file(d, "c.jsonl", R"({"id":"z","tokens":["a","b"],"h":[0,1],"t":[1,5],"relation":"r"})");
    CHECK_THROWS_AS(ingest_corpus(p, CorpusFormat::json_lines), DataError);
  }
  SUBCASE("missing field names it") {
    auto p = write_file(d, "c.jsonl", R"({"id":"w","tokens":["a","b"],"h":[0,1],"relation":"r"})");
    try {
      ingest_corpus(p, CorpusFormat::json_lines);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
      CHECK(std::string(e.what()).find("'t'") != std::string::npos);
    }
  }
  SUBCASE("duplicate ids") {
    auto line = std::string(R"({"id":"d","tokens":["a","b"],"h":[0,1],"t":[1,2],"relation":"r"})") + "\n";
    auto p = write_file(d, "c.jsonl", line + line);
    CHECK_THROWS_AS(ingest_corpus(p, CorpusFormat::json_lines), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(ingest_corpus(d.path / "nope.jsonl", CorpusFormat::json_lines), DataError); }
}

TEST_CASE("no_relation records are dropped by default") {
  TempDir d("norel");
  auto p = write_file(d, "c.jsonl",
                      std::string(R"({"id":"a","tokens":["a","b"],"h":[0,1],"t":[1,2],"relation":"no_relation"})") + "\n" +
                          R"({"id":"b","tokens":["a","b"],"h":[0,1],"t":[1,2],"relation":"r"})" + "\n");
  CHECK(ingest_corpus(p, CorpusFormat::json_lines).samples.size() == 1);
  IngestOptions keep;
  keep.drop_no_relation = false;
  CHECK(ingest_corpus(p, CorpusFormat::json_lines, keep).samples.size() == 2);
}

TEST_CASE("FewRel-shaped corpus ingests every relation") {
  TempDir d("fewrel");
  std::string text = "{";
  for (int r = 0; r < 4; ++r) {
    text += (r ? "," : "") + std::string("\"P") + std::to_string(r) + "\":[";
    for (int i = 0; i < 7; ++i)
      text += std::string(i ? "," : "") +
              R"({"tokens":["x","Alpha","Beta","y","Gamma"],"h":["alpha beta","Q1",[[1,2]]],"t":["gamma","Q2",[[4]]]})";
    text += "]";
  }
  text += "}";
  const Corpus c = ingest_corpus(write_file(d, "f.json", text), CorpusFormat::fewrel_json);
  CHECK(c.samples.size() == 28);
  CHECK(c.vocab.size() == 4);
  CHECK(c.samples[0].head.start == 1);
  CHECK(c.samples[0].head.end == 3);
  CHECK(c.samples[0].tail.start == 4);
  CHECK(c.samples[0].tail.end == 5);
}

TEST_CASE("task partition follows the FewRel shape") {
  const Corpus c = many_relations(80, 5);
  const TaskSequence seq = build_task_sequence(c, 10, 1);
  REQUIRE(seq.size() == 10);
  std::set<RelationId> all;
  for (const auto& t : seq.tasks) {
    CHECK(t.relations.size() == 8);
    for (auto r : t.relations) CHECK(all.insert(r).second);
  }
  CHECK(all.size() == 80);
}

TEST_CASE("one relation per task and too many tasks") {
  const Corpus c = many_relations(10, 4);
  const TaskSequence seq = build_task_sequence(c, 10, 3);
  for (const auto& t : seq.tasks) CHECK(t.relations.size() == 1);
  CHECK_THROWS_AS(build_task_sequence(c, 11, 3), ConfigError);
}

TEST_CASE("task sequences are deterministic in the seed") {
  const Corpus c = many_relations(12, 10);
  const auto a = task_sequence_to_json(build_task_sequence(c, 4, 9)).dump();
  const auto b = task_sequence_to_json(build_task_sequence(c, 4, 9)).dump();
  const auto other = task_sequence_to_json(build_task_sequence(c, 4, 10)).dump();
  CHECK(a == b);
  CHECK(a != other);
}

TEST_CASE("unlabeled samples are split 80/10/10 per relation") {
  const Corpus c = many_relations(2, 20);
  const TaskSequence seq = build_task_sequence(c, 1, 4);
  CHECK(seq.tasks[0].train.size() == 32);
  CHECK(seq.tasks[0].valid.size() == 4);
  CHECK(seq.tasks[0].test.size() == 4);
}

TEST_CASE("fixed task divisions load from objects and arrays") {
  TempDir d("div");
  const Corpus c = many_relations(4, 5);
  auto obj = load_task_division(write_file(d, "o.json", R"({"1":["r2","r3"],"0":["r0","r1"]})"));
  REQUIRE(obj.size() == 2);
  CHECK(obj[0] == std::vector<std::string>{"r0", "r1"});
  const TaskSequence seq = build_task_sequence(c, obj, 1);
  CHECK(seq.vocab.name(seq.tasks[1].relations[0]) == "r2");
  auto arr = load_task_division(write_file(d, "a.json", R"([["r0"],["r1","r2"]])"));
  CHECK_THROWS_AS(build_task_sequence(c, arr, 1), DataError);  // r3 missing
}

TEST_CASE("samples and sequences round-trip through JSON") {
  const auto sc = crel::test::small_synthetic();
  const auto j = task_sequence_to_json(sc.sequence);
  const TaskSequence back = task_sequence_from_json(j);
  CHECK(back.vocab == sc.sequence.vocab);
  REQUIRE(back.size() == sc.sequence.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back.tasks[k].relations == sc.sequence.tasks[k].relations);
    CHECK(back.tasks[k].train == sc.sequence.tasks[k].train);
    CHECK(back.tasks[k].test == sc.sequence.tasks[k].test);
  }
  for (const auto& s : sc.sequence.tasks[0].train) CHECK(sample_from_json(sample_to_json(s, sc.sequence.vocab), sc.sequence.vocab) == s);
}

TEST_CASE("synthetic generator honors its spec") {
  SyntheticSpec s;
  s.analogous_pairs = {{0, 8}, {1, 9}};
  const auto sc = generate_synthetic_sequence(s);
  CHECK(sc.sequence.size() == 5);
  CHECK(sc.analogous_pairs.size() == 2);
  CHECK(sc.sequence.vocab.size() == 10);
  std::size_t total = 0;
  for (const auto& t : sc.sequence.tasks) total += t.train.size() + t.valid.size() + t.test.size();
  CHECK(total == 500);
  CHECK_NOTHROW(sc.sequence.validate());
  CHECK(task_sequence_to_json(generate_synthetic_sequence(s).sequence) == task_sequence_to_json(sc.sequence));
  CHECK_THROWS_AS(synthetic_spec_from_json(nlohmann::json::object()), ConfigError);
}

TEST_CASE("task sequence validation catches overlapping relation sets") {
  auto sc = crel::test::small_synthetic();
  sc.sequence.tasks[1].relations.push_back(sc.sequence.tasks[0].relations[0]);
  CHECK_THROWS_AS(sc.sequence.validate(), DataError);
}
