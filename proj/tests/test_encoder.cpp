#include <doctest.h>

#include "crel/archive.hpp"
#include "crel/encoder.hpp"
#include "crel/errors.hpp"
#include "support.hpp"

using namespace crel;
using crel::test::gradient_error;

namespace {
int count_markers(const MarkedSequence& m) {
  int n = 0;
  for (const auto& t : m.tokens) n += t == kHeadStart || t == kHeadEnd || t == kTailStart || t == kTailEnd;
  return n;
}

BackboneConfig small_backbone(const std::string& kind = "toy") {
  BackboneConfig c;
  c.kind = kind;
  c.dim = 8;
  c.vocab_buckets = 64;
  return c;
}

Sample demo() { return crel::test::sentence("d", 0, "Alice", "Paris", {"lives", "in"}); }
}  // namespace

TEST_CASE("markers wrap the entity spans") {
  const Sample s = crel::test::make_sample("m", {"a", "b", "c"}, {0, 1}, {2, 3}, 0);
  const MarkedSequence m = mark_entities(s);
  CHECK(m.tokens == std::vector<std::string>{"[E11]", "a", "[E12]", "b", "[E21]", "c", "[E22]"});
  CHECK(m.head_marker == 0);
  CHECK(m.tail_marker == 4);
}

TEST_CASE("markers follow spans when the tail comes first") {
  const Sample s = crel::test::make_sample("m", {"a", "b", "c"}, {2, 3}, {0, 1}, 0);
  const MarkedSequence m = mark_entities(s);
  CHECK(m.tokens == std::vector<std::string>{"[E21]", "a", "[E22]", "b", "[E11]", "c", "[E12]"});
  CHECK(m.head_marker == 4);
  CHECK(m.tail_marker == 0);
  CHECK(count_markers(m) == 4);
}

TEST_CASE("over-long samples are skipped, never silently cut") {
  BackboneConfig cfg = small_backbone();
  cfg.max_length = 8;
  Encoder e(cfg, 1);
  std::vector<std::string> toks(20, "w");
  const Sample tail_far = crel::test::make_sample("far", toks, {0, 1}, {15, 16}, 0);
  CHECK_FALSE(e.fits(tail_far));
  CHECK_FALSE(e.prepare(tail_far).has_value());
  const Sample near = crel::test::make_sample("near", toks, {0, 1}, {2, 3}, 0);
  REQUIRE(e.prepare(near).has_value());
  CHECK(e.prepare(near)->tokens.size() == 8);
  CHECK(count_markers(*e.prepare(near)) == 4);
  Tape t;
  CHECK_THROWS_AS(e.encode(t, {&tail_far}), DataError);
}

TEST_CASE("encoding is deterministic and has width d") {
  for (const char* kind : {"toy", "transformer"}) {
    CAPTURE(kind);
    Encoder e(small_backbone(kind), 4);
    const Sample s = demo();
    const Vector a = e.encode(s);
    CHECK(a.size() == 8);
    CHECK(a.allFinite());
    CHECK(a == e.encode(s));
  }
}

TEST_CASE("selector weights reduce the encoder to a normalized head marker state") {
  Encoder e(small_backbone(), 2);
  const int d = e.dim();
  Matrix w1 = Matrix::Zero(d, 2 * d);
  w1.leftCols(d) = Matrix::Identity(d, d);
  e.fusion_weight().value = w1;
  e.fusion_bias().value.setZero();
  e.norm_gain().value.setOnes();
  e.norm_shift().value.setZero();
  const Sample s = demo();
  const auto m = e.prepare(s);
  Tape t;
  const Matrix hidden = e.backbone().forward(t, {*m}, {{m->head_marker}}).value();
  const double mean = hidden.mean();
  const double var = (hidden.array() - mean).square().mean();
  const Matrix expected = (hidden.array() - mean) / std::sqrt(var + 1e-5);
  const Vector got = e.encode(s);
  for (int i = 0; i < d; ++i) CHECK(got(i) == doctest::Approx(expected(0, i)).epsilon(1e-9));
}

TEST_CASE("encoder gradients match central differences") {
  for (const char* kind : {"toy", "transformer"}) {
    CAPTURE(kind);
    Encoder e(small_backbone(kind), 3);
    const Sample a = demo();
    const Sample b = crel::test::sentence("e", 0, "Bob", "Rome", {"works", "at", "the"});
    Rng rng(5);
    const Matrix probe = crel::test::random_matrix(rng, 2, e.dim());
    auto loss = [&](Tape& t) { return ad::sum_weighted(ad::tanh(e.encode(t, {&a, &b})), probe); };
    CHECK(gradient_error(e.parameters(), loss) < 1e-4);
  }
}

TEST_CASE("non-entity word order matters") {
  for (const char* kind : {"toy", "transformer"}) {
    CAPTURE(kind);
    Encoder e(small_backbone(kind), 7);
    const Sample a = crel::test::make_sample("a", {"x", "A", "p", "q", "r", "s", "B"}, {1, 2}, {6, 7}, 0);
    const Sample b = crel::test::make_sample("b", {"x", "A", "s", "r", "q", "p", "B"}, {1, 2}, {6, 7}, 0);
    CHECK((e.encode(a) - e.encode(b)).norm() > 1e-8);
  }
}

TEST_CASE("snapshots are isolated from later training") {
  Encoder e(small_backbone(), 9);
  const Sample s = demo();
  const Encoder snap = snapshot(e);
  const Vector before = snap.encode(s);
  for (auto* p : e.parameters()) p->value.array() += 0.1;
  CHECK(snap.encode(s) == before);
  CHECK(e.encode(s) != before);
  CHECK(snapshot(snap).encode(s) == before);
}

TEST_CASE("encoder state round-trips through the archive format") {
  for (const char* kind : {"toy", "transformer"}) {
    CAPTURE(kind);
    Encoder e(small_backbone(kind), 13);
    Archive ar;
    e.save(ar, "enc");
    const Archive back = deserialize(serialize(ar));
    const Encoder loaded = Encoder::load(back, "enc");
    CHECK(loaded.backbone_config() == e.backbone_config());
    CHECK(loaded.encode(demo()) == e.encode(demo()));
  }
}

TEST_CASE("corrupt archives are data errors") {
  Encoder e(small_backbone(), 1);
  Archive ar;
  e.save(ar, "enc");
  std::string bytes = serialize(ar);
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x5a;
  CHECK_THROWS_AS(deserialize(flipped), DataError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() / 2)), DataError);
  CHECK_THROWS_AS(deserialize("not an archive"), DataError);
}
