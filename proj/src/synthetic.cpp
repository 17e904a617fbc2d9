#include "crel/synthetic.hpp"

#include <set>
#include <string>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

using nlohmann::json;

void validate(const SyntheticSpec& spec) {
  if (spec.num_relations <= 0) throw ConfigError("synthetic spec: no relations");
  if (spec.num_tasks <= 0 || spec.num_tasks > spec.num_relations)
    throw ConfigError("synthetic spec: num_tasks must be in [1, num_relations]");
  if (spec.samples_per_relation < 3) throw ConfigError("synthetic spec: samples_per_relation must be >= 3");
  if (spec.templates_per_relation <= 0 || spec.cue_length <= 0)
    throw ConfigError("synthetic spec: templates_per_relation and cue_length must be positive");
  if (spec.shared_cues < 0 || spec.shared_cues >= spec.cue_length)
    throw ConfigError("synthetic spec: shared_cues must be in [0, cue_length)");
  if (spec.filler_length < 0 || spec.filler_vocab <= 0 || spec.entity_vocab <= 0)
    throw ConfigError("synthetic spec: filler/entity vocabulary sizes must be positive");
  if (spec.cue_noise < 0.0 || spec.cue_noise >= 1.0) throw ConfigError("synthetic spec: cue_noise must be in [0, 1)");
  std::set<int> paired;
  for (auto [a, b] : spec.analogous_pairs) {
    if (a < 0 || b < 0 || a >= spec.num_relations || b >= spec.num_relations || a == b)
      throw ConfigError("synthetic spec: analogous pair indices out of range");
    if (!paired.insert(b).second)
      throw ConfigError("synthetic spec: relation " + std::to_string(b) + " is derived from two relations");
  }
  for (auto [a, b] : spec.analogous_pairs)
    if (paired.count(a)) throw ConfigError("synthetic spec: analogous pairs may not chain");
}

SyntheticCorpus generate_synthetic_sequence(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(derive_seed(spec.seed, {0x51a7u}));
  const auto R = static_cast<std::size_t>(spec.num_relations);
  const auto T = static_cast<std::size_t>(spec.templates_per_relation);
  const auto L = static_cast<std::size_t>(spec.cue_length);

  // templates[r][t][j]
  std::vector<std::vector<std::vector<std::string>>> templates(R);
  for (std::size_t r = 0; r < R; ++r) {
    templates[r].resize(T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < L; ++j)
        templates[r][t].push_back("cue" + std::to_string(r) + "_" + std::to_string(t) + "_" + std::to_string(j));
  }
  for (auto [a, b] : spec.analogous_pairs) {
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::size_t> pos(L);
      for (std::size_t j = 0; j < L; ++j) pos[j] = j;
      rng.shuffle(pos);
      auto& tb = templates[static_cast<std::size_t>(b)][t];
      const auto& ta = templates[static_cast<std::size_t>(a)][t];
      for (std::size_t j = 0; j < static_cast<std::size_t>(spec.shared_cues); ++j) tb[pos[j]] = ta[pos[j]];
    }
  }

  auto filler = [&] { return "w" + std::to_string(rng.uniform_index(static_cast<std::uint64_t>(spec.filler_vocab))); };
  auto entity = [&] {
    std::vector<std::string> e;
    const auto len = 1 + rng.uniform_index(2);
    for (std::uint64_t i = 0; i < len; ++i)
      e.push_back("ent" + std::to_string(rng.uniform_index(static_cast<std::uint64_t>(spec.entity_vocab))));
    return e;
  };

  Corpus corpus;
  for (std::size_t r = 0; r < R; ++r) corpus.vocab.add("rel_" + std::to_string(r));
  for (std::size_t r = 0; r < R; ++r) {
    for (int i = 0; i < spec.samples_per_relation; ++i) {
      Sample s;
      s.id = "syn-r" + std::to_string(r) + "-" + std::to_string(i);
      s.relation = RelationId{static_cast<int>(r)};
      const auto& tpl = templates[r][rng.uniform_index(T)];
      const bool head_first = rng.uniform() < 0.5;
      auto e1 = entity(), e2 = entity();
      const auto pre = rng.uniform_index(static_cast<std::uint64_t>(spec.filler_length) + 1);
      for (std::uint64_t k = 0; k < pre; ++k) s.tokens.push_back(filler());
      Span first{static_cast<int>(s.tokens.size()), 0};
      s.tokens.insert(s.tokens.end(), e1.begin(), e1.end());
      first.end = static_cast<int>(s.tokens.size());
      for (const auto& cue : tpl) s.tokens.push_back(rng.uniform() < spec.cue_noise ? filler() : cue);
      Span second{static_cast<int>(s.tokens.size()), 0};
      s.tokens.insert(s.tokens.end(), e2.begin(), e2.end());
      second.end = static_cast<int>(s.tokens.size());
      const auto post = static_cast<std::uint64_t>(spec.filler_length) - pre;
      for (std::uint64_t k = 0; k < post; ++k) s.tokens.push_back(filler());
      s.head = head_first ? first : second;
      s.tail = head_first ? second : first;
      corpus.samples.push_back(std::move(s));
    }
  }

  std::vector<std::vector<RelationId>> groups(static_cast<std::size_t>(spec.num_tasks));
  for (std::size_t r = 0; r < R; ++r)
    groups[r * static_cast<std::size_t>(spec.num_tasks) / R].push_back(RelationId{static_cast<int>(r)});
  std::vector<std::vector<std::string>> division;
  for (const auto& g : groups) {
    std::vector<std::string> names;
    for (auto r : g) names.push_back(corpus.vocab.name(r));
    division.push_back(std::move(names));
  }

  SyntheticCorpus out;
  out.sequence = build_task_sequence(corpus, division, derive_seed(spec.seed, {0x5e9u}), spec.ratios);
  for (auto [a, b] : spec.analogous_pairs) {
    RelationId ra{a}, rb{b};
    if (out.sequence.task_of(rb) < out.sequence.task_of(ra)) std::swap(ra, rb);
    out.analogous_pairs.emplace_back(ra, rb);
  }
  return out;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  if (!j.is_object() || j.empty()) throw ConfigError("synthetic spec: empty");
  try {
    s.num_relations = j.value("num_relations", s.num_relations);
    s.num_tasks = j.value("num_tasks", s.num_tasks);
    s.samples_per_relation = j.value("samples_per_relation", s.samples_per_relation);
    s.templates_per_relation = j.value("templates_per_relation", s.templates_per_relation);
    s.cue_length = j.value("cue_length", s.cue_length);
    s.shared_cues = j.value("shared_cues", s.shared_cues);
    s.filler_length = j.value("filler_length", s.filler_length);
    s.filler_vocab = j.value("filler_vocab", s.filler_vocab);
    s.entity_vocab = j.value("entity_vocab", s.entity_vocab);
    s.cue_noise = j.value("cue_noise", s.cue_noise);
    s.seed = j.value("seed", s.seed);
    if (j.contains("analogous_pairs"))
      for (const auto& p : j["analogous_pairs"]) s.analogous_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    if (j.contains("split_ratios")) {
      const auto& r = j["split_ratios"];
      s.ratios = SplitRatios{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  validate(s);
  return s;
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  json pairs = json::array();
  for (auto [a, b] : s.analogous_pairs) pairs.push_back({a, b});
  return json{{"num_relations", s.num_relations},
              {"num_tasks", s.num_tasks},
              {"samples_per_relation", s.samples_per_relation},
              {"analogous_pairs", pairs},
              {"templates_per_relation", s.templates_per_relation},
              {"cue_length", s.cue_length},
              {"shared_cues", s.shared_cues},
              {"filler_length", s.filler_length},
              {"filler_vocab", s.filler_vocab},
              {"entity_vocab", s.entity_vocab},
              {"cue_noise", s.cue_noise},
              {"seed", s.seed},
              {"split_ratios", {s.ratios.train, s.ratios.valid, s.ratios.test}}};
}

}  // namespace crel
