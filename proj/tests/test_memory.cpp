#include <doctest.h>

#include <set>

#include "crel/memory.hpp"
#include "support.hpp"

using namespace crel;

namespace {
BackboneConfig tiny() {
  BackboneConfig c;
  c.dim = 8;
  c.vocab_buckets = 64;
  return c;
}

std::vector<Sample> relation_samples(int relation, int n, const std::string& cue) {
  std::vector<Sample> v;
  for (int i = 0; i < n; ++i)
    v.push_back(crel::test::sentence("r" + std::to_string(relation) + "_" + std::to_string(i), relation,
                                     "h" + std::to_string(i), "t" + std::to_string(i % 3), {cue, "w" + std::to_string(i % 4)}));
  return v;
}

MemoryStore store_of(const std::vector<std::vector<Sample>>& per_relation) {
  MemoryStore m;
  for (const auto& v : per_relation) m.set(v.front().relation, v);
  return m;
}

int marker_tokens_in_first_sentence(const Sample& s) {
  const MarkedSequence m = mark_entities(s);
  int n = 0;
  bool after_sep = false;
  for (const auto& t : m.tokens) {
    if (t == kSentenceSep) after_sep = true;
    if (t == kHeadStart || t == kHeadEnd || t == kTailStart || t == kTailEnd) n += after_sep ? 100 : 1;
  }
  return n;
}
}  // namespace

TEST_CASE("k-means picks the centroid-nearest point of each cloud") {
  Rng rng(3);
  Matrix pts(10, 2);
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    const double cx = i < 5 ? -10.0 : 10.0;
    pts(i, 0) = cx + rng.normal();
    pts(i, 1) = rng.normal();
    ids.push_back("p" + std::to_string(i));
  }
  const auto reps = kmeans_representatives(pts, ids, 2, 1);
  REQUIRE(reps.size() == 2);
  // Brute-force oracle: nearest point to each cloud's arithmetic mean.
  for (int cloud = 0; cloud < 2; ++cloud) {
    Vector mean = Vector::Zero(2);
    for (int i = cloud * 5; i < cloud * 5 + 5; ++i) mean += pts.row(i).transpose();
    mean /= 5.0;
    std::size_t best = 0;
    double bd = 1e300;
    for (int i = cloud * 5; i < cloud * 5 + 5; ++i) {
      const double d = (pts.row(i).transpose() - mean).squaredNorm();
      if (d < bd) bd = d, best = static_cast<std::size_t>(i);
    }
    CHECK(reps[static_cast<std::size_t>(cloud)] == best);
  }
}

TEST_CASE("k-means is deterministic, caps k and breaks ties by id") {
  Matrix pts = Matrix::Zero(4, 2);
  const std::vector<std::string> ids{"d", "b", "c", "a"};
  const auto one = kmeans_representatives(pts, ids, 1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 3);  // all equidistant: lowest id "a"
  Rng rng(1);
  const Matrix r = crel::test::random_matrix(rng, 6, 3);
  const std::vector<std::string> rid{"0", "1", "2", "3", "4", "5"};
  CHECK(kmeans_representatives(r, rid, 3, 9) == kmeans_representatives(r, rid, 3, 9));
  CHECK(kmeans_representatives(r, rid, 10, 9).size() == 6);
}

TEST_CASE("typical sample selection") {
  Encoder e(tiny(), 1);
  const auto samples = relation_samples(0, 12, "cue");
  SUBCASE("a single sample is selected") {
    const auto out = select_typical(e, std::span<const Sample>(samples.data(), 1), 10, 1);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == samples[0]);
  }
  SUBCASE("output is a subset of size min(m, n)") {
    const auto out = select_typical(e, samples, 5, 2);
    CHECK(out.size() == 5);
    std::set<std::string> in_ids;
    for (const auto& s : samples) in_ids.insert(s.id);
    for (const auto& s : out) CHECK(in_ids.count(s.id) == 1);
  }
  SUBCASE("augmented or mixed input is rejected") {
    auto bad = samples;
    bad[2].provenance = Provenance::entity_replaced;
    CHECK_THROWS_AS(select_typical(e, bad, 3, 1), std::invalid_argument);
    auto mixed = samples;
    mixed[1].relation = RelationId{4};
    CHECK_THROWS_AS(select_typical(e, mixed, 3, 1), std::invalid_argument);
  }
}

TEST_CASE("static prototypes") {
  Encoder e(tiny(), 2);
  const auto samples = relation_samples(0, 100, "cue");
  PrototypeStore store(0.5);
  SUBCASE("mean of one sample is its representation") {
    capture_static_prototype(store, e, RelationId{0}, std::span<const Sample>(samples.data(), 1));
    CHECK(store.static_prototype(RelationId{0}) == e.encode(samples[0]));
  }
  SUBCASE("matches a two-pass mean and is write-once") {
    const Vector& p = capture_static_prototype(store, e, RelationId{0}, samples);
    Vector sum = Vector::Zero(e.dim());
    for (const auto& s : samples) sum += e.encode(s);
    const Vector mean = sum / 100.0;
    CHECK((p - mean).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(capture_static_prototype(store, e, RelationId{0}, samples), std::logic_error);
    CHECK_THROWS_AS(store.set_static(RelationId{0}, mean), std::logic_error);
  }
  SUBCASE("opposite representations average to zero") {
    PrototypeStore s2;
    Vector v(2);
    v << 1.0, -2.0;
    const Vector mean = blend_prototype(v, -v, 0.5);
    CHECK(mean.norm() == 0.0);
  }
}

TEST_CASE("prototype blending endpoints") {
  Vector s(2), d(2);
  s << 1.0, 0.0;
  d << 0.0, 1.0;
  CHECK(blend_prototype(s, d, 0.0) == s);
  CHECK(blend_prototype(s, d, 1.0) == d);
  const Vector half = blend_prototype(s, d, 0.5);
  CHECK(half(0) == 0.5);
  CHECK(half(1) == 0.5);
}

TEST_CASE("combined prototype uses current exemplar encodings") {
  Encoder e(tiny(), 3);
  const auto samples = relation_samples(0, 8, "cue");
  MemoryStore mem;
  mem.set(RelationId{0}, select_typical(e, samples, 3, 1));
  for (double beta : {0.0, 1.0}) {
    PrototypeStore store(beta);
    capture_static_prototype(store, e, RelationId{0}, samples);
    const Vector p = combined_prototype(store, e, mem, RelationId{0});
    if (beta == 0.0) {
      CHECK(p == store.static_prototype(RelationId{0}));
    } else {
      Vector dyn = Vector::Zero(e.dim());
      for (const auto& s : mem.exemplars(RelationId{0})) dyn += e.encode(s);
      dyn /= 3.0;
      CHECK((p - dyn).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  PrototypeStore empty(0.5);
  CHECK_THROWS(combined_prototype(empty, e, mem, RelationId{0}));
}

TEST_CASE("memory store guards") {
  MemoryStore m;
  auto samples = relation_samples(1, 3, "c");
  CHECK_THROWS_AS(m.set(RelationId{2}, samples), std::invalid_argument);
  samples[0].provenance = Provenance::concatenated;
  CHECK_THROWS_AS(m.set(RelationId{1}, samples), std::invalid_argument);
}

TEST_CASE("augmentation quadruples memory with correct provenance") {
  const auto m = store_of({relation_samples(0, 10, "a"), relation_samples(1, 10, "b"), relation_samples(2, 10, "c")});
  REQUIRE(m.total_size() == 30);
  const AugmentedMemory aug = augment(m, 7);
  CHECK(aug.samples.size() == 120);
  std::map<Provenance, int> counts;
  for (const auto& s : aug.samples) {
    ++counts[s.provenance];
    CHECK_NOTHROW(validate(s));
    CHECK(marker_tokens_in_first_sentence(s) == 4);
  }
  CHECK(counts[Provenance::original] == 30);
  CHECK(counts[Provenance::entity_replaced] == 30);
  CHECK(counts[Provenance::concatenated] == 30);
  CHECK(counts[Provenance::replaced_and_concatenated] == 30);
}

TEST_CASE("entity replacement splices donor entities and keeps the label") {
  const Sample x = crel::test::make_sample("x", {"the", "big", "cat", "sat", "on", "mat"}, {1, 3}, {5, 6}, 2);
  const Sample donor = crel::test::make_sample("y", {"D", "x", "y", "Z"}, {0, 1}, {1, 4}, 2);
  const Sample r = replace_entities(x, donor);
  CHECK(r.relation == x.relation);
  CHECK(r.provenance == Provenance::entity_replaced);
  CHECK(r.tokens == std::vector<std::string>{"the", "D", "sat", "on", "x", "y", "Z"});
  CHECK(r.head.start == 1);
  CHECK(r.head.end == 2);
  CHECK(r.tail.start == 4);
  CHECK(r.tail.end == 7);
}

TEST_CASE("concatenation keeps only the first sentence's entities marked") {
  const Sample x = crel::test::make_sample("x", {"a", "b", "c"}, {0, 1}, {2, 3}, 0);
  const Sample y = crel::test::make_sample("y", {"d", "e"}, {0, 1}, {1, 2}, 1);
  const Sample c = concatenate(x, y);
  CHECK(c.tokens == std::vector<std::string>{"a", "b", "c", "[SEP]", "d", "e"});
  CHECK(c.relation == x.relation);
  CHECK(c.head == x.head);
  CHECK(c.tail == x.tail);
  CHECK(c.provenance == Provenance::concatenated);
}

TEST_CASE("concatenation never borrows from the sample's own relation") {
  const auto m = store_of({relation_samples(0, 4, "a"), relation_samples(1, 4, "b")});
  const AugmentedMemory aug = augment(m, 3);
  for (const auto& s : aug.samples) {
    if (s.provenance != Provenance::concatenated && s.provenance != Provenance::replaced_and_concatenated) continue;
    const auto sep = std::find(s.tokens.begin(), s.tokens.end(), std::string(kSentenceSep));
    REQUIRE(sep != s.tokens.end());
    const std::string own_cue = s.relation.value == 0 ? "a" : "b";
    CHECK(std::find(sep, s.tokens.end(), own_cue) == s.tokens.end());
  }
}

TEST_CASE("singleton relations fall back to self-replacement") {
  const auto m = store_of({relation_samples(0, 1, "a"), relation_samples(1, 3, "b")});
  const AugmentedMemory aug = augment(m, 1);
  CHECK(aug.samples.size() == 16);
  for (const auto& s : aug.samples)
    if (s.relation.value == 0 && s.provenance == Provenance::entity_replaced)
      CHECK(s.tokens == m.exemplars(RelationId{0})[0].tokens);
}

TEST_CASE("augmentation needs two relations") {
  const auto m = store_of({relation_samples(0, 3, "a")});
  CHECK_THROWS(augment(m, 1));
}

TEST_CASE("augmentation never touches memory or prototypes") {
  Encoder e(tiny(), 4);
  const auto a = relation_samples(0, 6, "a"), b = relation_samples(1, 6, "b");
  MemoryStore m;
  m.set(RelationId{0}, select_typical(e, a, 3, 1));
  m.set(RelationId{1}, select_typical(e, b, 3, 1));
  PrototypeStore store(0.5);
  capture_static_prototype(store, e, RelationId{0}, a);
  const Vector before = combined_prototype(store, e, m, RelationId{0});
  RelationVocab vocab;
  vocab.add("r0");
  vocab.add("r1");
  const auto json_before = m.to_json(vocab).dump();
  const AugmentedMemory aug = augment(m, 9);
  CHECK(combined_prototype(store, e, m, RelationId{0}) == before);
  CHECK(m.to_json(vocab).dump() == json_before);
  for (const auto* s : m.accumulated()) CHECK(s->provenance == Provenance::original);
  CHECK(originals_only(m).samples.size() == m.total_size());
}

TEST_CASE("memory and prototype stores round-trip through JSON") {
  Encoder e(tiny(), 5);
  RelationVocab vocab;
  vocab.add("r0");
  vocab.add("r1");
  const auto a = relation_samples(0, 6, "a"), b = relation_samples(1, 6, "b");
  MemoryStore m;
  m.set(RelationId{0}, select_typical(e, a, 3, 1));
  m.set(RelationId{1}, select_typical(e, b, 2, 1));
  std::unordered_map<std::string, const Sample*> by_id;
  for (const auto* v : {&a, &b})
    for (const auto& s : *v) by_id.emplace(s.id, &s);
  const MemoryStore back = MemoryStore::from_json(m.to_json(vocab), vocab, by_id);
  CHECK(back.relations() == m.relations());
  CHECK(back.exemplars(RelationId{1}) == m.exemplars(RelationId{1}));

  PrototypeStore p(0.3);
  capture_static_prototype(p, e, RelationId{0}, a);
  p.set_combined(RelationId{0}, combined_prototype(p, e, m, RelationId{0}));
  const PrototypeStore pb = PrototypeStore::from_json(p.to_json(vocab), vocab);
  CHECK(pb.static_prototype(RelationId{0}) == p.static_prototype(RelationId{0}));
  CHECK(pb.prototype(RelationId{0}) == p.prototype(RelationId{0}));
  CHECK(pb.beta() == p.beta());
}
