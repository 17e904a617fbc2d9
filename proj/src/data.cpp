#include "crel/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

using nlohmann::json;

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::entity_replaced: return "entity_replaced";
    case Provenance::concatenated: return "concatenated";
    case Provenance::replaced_and_concatenated: return "replaced_and_concatenated";
  }
  return "original";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::unspecified: return "";
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "entity_replaced") return Provenance::entity_replaced;
  if (s == "concatenated") return Provenance::concatenated;
  if (s == "replaced_and_concatenated") return Provenance::replaced_and_concatenated;
  throw DataError("unknown provenance '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s.empty()) return Split::unspecified;
  if (s == "train") return Split::train;
  if (s == "valid" || s == "val" || s == "dev") return Split::valid;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

void validate(const Sample& s) {
  const int n = static_cast<int>(s.tokens.size());
  auto check = [&](const Span& sp, const char* field) {
    if (sp.length() <= 0) throw DataError("sample '" + s.id + "': empty span in field '" + field + "'");
    if (sp.start < 0 || sp.end > n)
      throw DataError("sample '" + s.id + "': span out of token bounds in field '" + field + "'");
  };
  check(s.head, "h");
  check(s.tail, "t");
  if (s.head.overlaps(s.tail)) throw DataError("sample '" + s.id + "': head and tail spans overlap");
}

// --- RelationVocab ---------------------------------------------------------

RelationId RelationVocab::add(const std::string& name) {
  if (auto it = index_.find(name); it != index_.end()) return RelationId{it->second};
  const int id = static_cast<int>(names_.size());
  names_.push_back(name);
  index_.emplace(name, id);
  return RelationId{id};
}

std::optional<RelationId> RelationVocab::find(const std::string& name) const {
  if (auto it = index_.find(name); it != index_.end()) return RelationId{it->second};
  return std::nullopt;
}

RelationId RelationVocab::at(const std::string& name) const {
  if (auto r = find(name)) return *r;
  throw DataError("unknown relation '" + name + "'");
}

const std::string& RelationVocab::name(RelationId id) const {
  if (id.value < 0 || id.value >= static_cast<int>(names_.size()))
    throw std::out_of_range("relation id " + std::to_string(id.value) + " out of range");
  return names_[static_cast<std::size_t>(id.value)];
}

// --- JSON ------------------------------------------------------------------

namespace {

Span span_from_json(const json& j, const std::string& id, const char* field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw DataError("record '" + id + "': field '" + field + "' must be [start, end]");
  return Span{j[0].get<int>(), j[1].get<int>()};
}

template <typename T>
T require(const json& rec, const char* field, const std::string& id) {
  if (!rec.contains(field)) throw DataError("record '" + id + "': missing field '" + field + "'");
  try {
    return rec.at(field).get<T>();
  } catch (const json::exception&) {
    throw DataError("record '" + id + "': field '" + field + "' has the wrong type");
  }
}

}  // namespace

json sample_to_json(const Sample& s, const RelationVocab& vocab) {
  json j{{"id", s.id},
         {"tokens", s.tokens},
         {"h", {s.head.start, s.head.end}},
         {"t", {s.tail.start, s.tail.end}},
         {"relation", vocab.name(s.relation)}};
  if (s.provenance != Provenance::original) j["provenance"] = to_string(s.provenance);
  if (s.split != Split::unspecified) j["split"] = to_string(s.split);
  return j;
}

Sample sample_from_json(const json& j, const RelationVocab& vocab) {
  Sample s;
  s.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : std::string("<missing id>");
  if (!j.contains("id")) throw DataError("record '<missing id>': missing field 'id'");
  s.tokens = require<std::vector<std::string>>(j, "tokens", s.id);
  if (!j.contains("h")) throw DataError("record '" + s.id + "': missing field 'h'");
  if (!j.contains("t")) throw DataError("record '" + s.id + "': missing field 't'");
  s.head = span_from_json(j["h"], s.id, "h");
  s.tail = span_from_json(j["t"], s.id, "t");
  s.relation = vocab.at(require<std::string>(j, "relation", s.id));
  if (j.contains("provenance")) s.provenance = provenance_from_string(j["provenance"].get<std::string>());
  if (j.contains("split")) {
    try {
      s.split = split_from_string(j["split"].get<std::string>());
    } catch (const std::exception&) {
      throw DataError("record '" + s.id + "': field 'split' must be train|valid|test");
    }
  }
  validate(s);
  return s;
}

// --- Ingestion -------------------------------------------------------------

CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "jsonl" || s == "json_lines") return CorpusFormat::json_lines;
  if (s == "fewrel" || s == "fewrel_json") return CorpusFormat::fewrel_json;
  throw ConfigError("unknown corpus format '" + s + "' (expected jsonl or fewrel)");
}

namespace {

Corpus ingest_json_lines(std::istream& in, const IngestOptions& opts) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  std::vector<json> records;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError("line " + std::to_string(lineno) + ": record must be an object");
    records.push_back(std::move(j));
  }
  std::set<std::string> ids;
  for (const auto& j : records) {
    std::string id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                              : "line-record";
    if (!j.contains("id")) throw DataError("record '" + id + "': missing field 'id'");
    if (!j.contains("relation") || !j["relation"].is_string())
      throw DataError("record '" + id + "': missing field 'relation'");
    const auto rel = j["relation"].get<std::string>();
    if (opts.drop_no_relation && rel == opts.no_relation_label) continue;
    c.vocab.add(rel);
    Sample s = sample_from_json(j, c.vocab);
    if (!ids.insert(s.id).second) throw DataError("record '" + s.id + "': duplicate id");
    c.samples.push_back(std::move(s));
  }
  return c;
}

Span fewrel_span(const json& ent, const std::string& id, const char* field) {
  // [name, id, [[p0, p1, ...]]] with inclusive token positions.
  if (!ent.is_array() || ent.size() < 3 || !ent[2].is_array() || ent[2].empty() || !ent[2][0].is_array() ||
      ent[2][0].empty())
    throw DataError("record '" + id + "': field '" + field + "' must be [name, id, [[positions]]]");
  const auto& pos = ent[2][0];
  int lo = pos.front().get<int>(), hi = pos.front().get<int>();
  for (const auto& p : pos) {
    lo = std::min(lo, p.get<int>());
    hi = std::max(hi, p.get<int>());
  }
  return Span{lo, hi + 1};
}

Corpus ingest_fewrel(std::istream& in, const IngestOptions& opts) {
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("invalid FewRel JSON: ") + e.what());
  }
  if (!root.is_object()) throw DataError("FewRel corpus must be an object keyed by relation");
  Corpus c;
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string rel = it.key();
    if (opts.drop_no_relation && rel == opts.no_relation_label) continue;
    const RelationId rid = c.vocab.add(rel);
    std::size_t i = 0;
    for (const auto& rec : it.value()) {
      Sample s;
      s.id = rel + "#" + std::to_string(i++);
      s.tokens = require<std::vector<std::string>>(rec, "tokens", s.id);
      if (!rec.contains("h")) throw DataError("record '" + s.id + "': missing field 'h'");
      if (!rec.contains("t")) throw DataError("record '" + s.id + "': missing field 't'");
      s.head = fewrel_span(rec["h"], s.id, "h");
      s.tail = fewrel_span(rec["t"], s.id, "t");
      s.relation = rid;
      validate(s);
      c.samples.push_back(std::move(s));
    }
  }
  return c;
}

}  // namespace

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format, const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
  switch (format) {
    case CorpusFormat::json_lines: return ingest_json_lines(in, opts);
    case CorpusFormat::fewrel_json: return ingest_fewrel(in, opts);
  }
  throw ConfigError("unsupported corpus format");
}

// --- Task sequences --------------------------------------------------------

std::vector<RelationId> TaskSequence::seen_relations(std::size_t k) const {
  std::vector<RelationId> out;
  for (std::size_t i = 0; i <= k && i < tasks.size(); ++i)
    out.insert(out.end(), tasks[i].relations.begin(), tasks[i].relations.end());
  return out;
}

std::size_t TaskSequence::task_of(RelationId r) const {
  for (std::size_t k = 0; k < tasks.size(); ++k)
    if (std::find(tasks[k].relations.begin(), tasks[k].relations.end(), r) != tasks[k].relations.end()) return k;
  throw std::out_of_range("relation " + std::to_string(r.value) + " not in task sequence");
}

void TaskSequence::validate() const {
  std::set<RelationId> seen;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const Task& t = tasks[k];
    if (t.relations.empty()) throw DataError("task " + std::to_string(k) + " has no relations");
    for (auto r : t.relations)
      if (!seen.insert(r).second)
        throw DataError("relation '" + vocab.name(r) + "' appears in more than one task");
    std::set<RelationId> own(t.relations.begin(), t.relations.end());
    for (const auto* split : {&t.train, &t.valid, &t.test})
      for (const auto& s : *split)
        if (!own.count(s.relation))
          throw DataError("sample '" + s.id + "' does not belong to task " + std::to_string(k));
  }
}

namespace {

TaskSequence assemble(const Corpus& corpus, const std::vector<std::vector<RelationId>>& groups, std::uint64_t seed,
                      const SplitRatios& ratios) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (!(ratios.train > 0.0) || ratios.valid < 0.0 || ratios.test < 0.0 || !(total > 0.0))
    throw ConfigError("split ratios must be non-negative with a positive train share");

  std::map<RelationId, std::vector<const Sample*>> by_rel;
  for (const auto& s : corpus.samples) by_rel[s.relation].push_back(&s);

  TaskSequence seq;
  seq.vocab = corpus.vocab;
  for (const auto& g : groups) {
    Task t;
    t.relations = g;
    for (RelationId r : g) {
      std::vector<const Sample*> unlabeled;
      for (const Sample* s : by_rel[r]) {
        switch (s->split) {
          case Split::train: t.train.push_back(*s); break;
          case Split::valid: t.valid.push_back(*s); break;
          case Split::test: t.test.push_back(*s); break;
          case Split::unspecified: unlabeled.push_back(s); break;
        }
      }
      if (unlabeled.empty()) continue;
      Rng rng(derive_seed(seed, {0x5911u, static_cast<std::uint64_t>(r.value)}));
      rng.shuffle(unlabeled);
      const auto n = unlabeled.size();
      auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.train / total));
      auto n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.valid / total));
      n_train = std::max<std::size_t>(n_train, 1);
      if (n_train + n_valid > n) n_valid = n - n_train;
      for (std::size_t i = 0; i < n; ++i) {
        Sample s = *unlabeled[i];
        if (i < n_train) {
          s.split = Split::train;
          t.train.push_back(std::move(s));
        } else if (i < n_train + n_valid) {
          s.split = Split::valid;
          t.valid.push_back(std::move(s));
        } else {
          s.split = Split::test;
          t.test.push_back(std::move(s));
        }
      }
    }
    seq.tasks.push_back(std::move(t));
  }
  seq.validate();
  return seq;
}

}  // namespace

TaskSequence build_task_sequence(const Corpus& corpus, int num_tasks, std::uint64_t seed, const SplitRatios& ratios) {
  const auto n_rel = static_cast<int>(corpus.vocab.size());
  if (num_tasks <= 0) throw ConfigError("num_tasks must be positive");
  if (num_tasks > n_rel)
    throw ConfigError("num_tasks (" + std::to_string(num_tasks) + ") exceeds relation count (" +
                      std::to_string(n_rel) + ")");
  std::vector<RelationId> rels;
  for (int i = 0; i < n_rel; ++i) rels.push_back(RelationId{i});
  Rng rng(derive_seed(seed, {0x7a5cu}));
  rng.shuffle(rels);
  std::vector<std::vector<RelationId>> groups(static_cast<std::size_t>(num_tasks));
  const int base = n_rel / num_tasks, extra = n_rel % num_tasks;
  std::size_t pos = 0;
  for (int k = 0; k < num_tasks; ++k) {
    const int take = base + (k < extra ? 1 : 0);
    for (int i = 0; i < take; ++i) groups[static_cast<std::size_t>(k)].push_back(rels[pos++]);
  }
  return assemble(corpus, groups, seed, ratios);
}

TaskSequence build_task_sequence(const Corpus& corpus, const std::vector<std::vector<std::string>>& division,
                                 std::uint64_t seed, const SplitRatios& ratios) {
  std::vector<std::vector<RelationId>> groups;
  std::set<RelationId> used;
  for (const auto& names : division) {
    std::vector<RelationId> g;
    for (const auto& n : names) {
      const RelationId r = corpus.vocab.at(n);
      if (!used.insert(r).second) throw DataError("task division lists relation '" + n + "' twice");
      g.push_back(r);
    }
    groups.push_back(std::move(g));
  }
  if (used.size() != corpus.vocab.size())
    throw DataError("task division covers " + std::to_string(used.size()) + " of " +
                    std::to_string(corpus.vocab.size()) + " relations");
  return assemble(corpus, groups, seed, ratios);
}

std::vector<std::vector<std::string>> load_task_division(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open task division '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("invalid task division JSON: ") + e.what());
  }
  std::vector<std::vector<std::string>> out;
  if (j.is_array()) {
    for (const auto& g : j) out.push_back(g.get<std::vector<std::string>>());
  } else if (j.is_object()) {
    std::map<int, std::vector<std::string>> ordered;
    for (auto it = j.begin(); it != j.end(); ++it) {
      int k;
      try {
        k = std::stoi(it.key());
      } catch (const std::exception&) {
        throw DataError("task division key '" + it.key() + "' is not a task index");
      }
      ordered[k] = it.value().get<std::vector<std::string>>();
    }
    for (auto& [k, v] : ordered) out.push_back(std::move(v));
  } else {
    throw DataError("task division must be an object or array");
  }
  return out;
}

json task_sequence_to_json(const TaskSequence& seq) {
  json tasks = json::array();
  for (const auto& t : seq.tasks) {
    json jt;
    jt["relations"] = json::array();
    for (auto r : t.relations) jt["relations"].push_back(seq.vocab.name(r));
    for (const auto& [key, split] : {std::pair{"train", &t.train}, {"valid", &t.valid}, {"test", &t.test}}) {
      json arr = json::array();
      for (const auto& s : *split) arr.push_back(sample_to_json(s, seq.vocab));
      jt[key] = std::move(arr);
    }
    tasks.push_back(std::move(jt));
  }
  return json{{"relations", seq.vocab.names()}, {"tasks", std::move(tasks)}};
}

TaskSequence task_sequence_from_json(const json& j) {
  TaskSequence seq;
  for (const auto& n : j.at("relations")) seq.vocab.add(n.get<std::string>());
  for (const auto& jt : j.at("tasks")) {
    Task t;
    for (const auto& n : jt.at("relations")) t.relations.push_back(seq.vocab.at(n.get<std::string>()));
    for (const auto& s : jt.at("train")) t.train.push_back(sample_from_json(s, seq.vocab));
    for (const auto& s : jt.at("valid")) t.valid.push_back(sample_from_json(s, seq.vocab));
    for (const auto& s : jt.at("test")) t.test.push_back(sample_from_json(s, seq.vocab));
    seq.tasks.push_back(std::move(t));
  }
  seq.validate();
  return seq;
}

}  // namespace crel
