#include "crel/encoder.hpp"

#include <cmath>
#include <iostream>

#include "crel/errors.hpp"
#include "crel/random.hpp"

namespace crel {

MarkedSequence mark_entities(const Sample& s) {
  MarkedSequence m;
  m.tokens.reserve(s.tokens.size() + 4);
  const int n = static_cast<int>(s.tokens.size());
  auto mark = [&](const char* tok) {
    m.last_marker = static_cast<int>(m.tokens.size());
    m.tokens.emplace_back(tok);
  };
  for (int i = 0; i < n; ++i) {
    if (i == s.head.start) {
      m.head_marker = static_cast<int>(m.tokens.size());
      mark(kHeadStart);
    }
    if (i == s.tail.start) {
      m.tail_marker = static_cast<int>(m.tokens.size());
      mark(kTailStart);
    }
    m.tokens.push_back(s.tokens[static_cast<std::size_t>(i)]);
    if (i == s.head.end - 1) mark(kHeadEnd);
    if (i == s.tail.end - 1) mark(kTailEnd);
  }
  return m;
}

int Backbone::token_id(const std::string& token) const {
  if (token == kHeadStart) return 0;
  if (token == kHeadEnd) return 1;
  if (token == kTailStart) return 2;
  if (token == kTailEnd) return 3;
  if (token == kSentenceSep) return 4;
  constexpr int kReserved = 5;
  const auto buckets = static_cast<std::uint64_t>(config().vocab_buckets - kReserved);
  return kReserved + static_cast<int>(fnv1a(token) % buckets);
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

struct FlatBatch {
  std::vector<int> ids;
  std::vector<int> pos;
  std::vector<int> offset;  // start row of each sequence
};

FlatBatch flatten(const Backbone& bb, const std::vector<MarkedSequence>& batch) {
  FlatBatch f;
  for (const auto& seq : batch) {
    f.offset.push_back(static_cast<int>(f.ids.size()));
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      f.ids.push_back(bb.token_id(seq.tokens[i]));
      f.pos.push_back(static_cast<int>(i));
    }
  }
  return f;
}

SparseMatrix selector(const FlatBatch& f, const std::vector<std::vector<int>>& positions) {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::Index q = 0;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (int p : positions[i]) trip.emplace_back(q++, f.offset[i] + p, 1.0);
  SparseMatrix s(q, static_cast<Eigen::Index>(f.ids.size()));
  s.setFromTriplets(trip.begin(), trip.end());
  return s;
}

/// Seeded embedding table plus a two-layer feed-forward over
/// [local window ; sequence-mean context], with a residual from the window.
class ToyBackbone final : public Backbone {
 public:
  ToyBackbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const Eigen::Index d = cfg.dim;
    emb_ = Parameter("backbone.embedding", gaussian(cfg.vocab_buckets, d, cfg.init_scale, rng));
    pos_ = Parameter("backbone.position", gaussian(cfg.max_length, d, 0.1 * cfg.init_scale, rng));
    a1_ = Parameter("backbone.ff1.weight", gaussian(d, 2 * d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng));
    c1_ = Parameter("backbone.ff1.bias", Matrix::Zero(1, d));
    a2_ = Parameter("backbone.ff2.weight", gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    c2_ = Parameter("backbone.ff2.bias", Matrix::Zero(1, d));
  }

  std::string tag() const override { return "toy"; }
  const BackboneConfig& config() const override { return cfg_; }

  Var forward(Tape& tape, const std::vector<MarkedSequence>& batch,
              const std::vector<std::vector<int>>& positions) override {
    const FlatBatch f = flatten(*this, batch);
    std::vector<Eigen::Triplet<double>> win, ctx;
    Eigen::Index q = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const int len = static_cast<int>(batch[i].tokens.size());
      const int off = f.offset[i];
      for (int p : positions[i]) {
        win.emplace_back(q, off + p, 1.0);
        if (p > 0) win.emplace_back(q, off + p - 1, 0.5);
        if (p + 1 < len) win.emplace_back(q, off + p + 1, 0.5);
        for (int j = 0; j < len; ++j) ctx.emplace_back(q, off + j, 1.0 / len);
        ++q;
      }
    }
    const auto n = static_cast<Eigen::Index>(f.ids.size());
    SparseMatrix sw(q, n), sc(q, n);
    sw.setFromTriplets(win.begin(), win.end());
    sc.setFromTriplets(ctx.begin(), ctx.end());

    Var x = ad::add(ad::gather_rows(tape.param(emb_), f.ids), ad::gather_rows(tape.param(pos_), f.pos));
    Var local = ad::spmm(sw, x);
    Var context = ad::spmm(sc, x);
    Var h1 = ad::tanh(ad::add_row(ad::matmul_bt(ad::concat_cols(local, context), tape.param(a1_)), tape.param(c1_)));
    Var h2 = ad::add_row(ad::matmul_bt(h1, tape.param(a2_)), tape.param(c2_));
    return ad::add(local, h2);
  }

  std::vector<Parameter*> parameters() override { return {&emb_, &pos_, &a1_, &c1_, &a2_, &c2_}; }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<ToyBackbone>(*this); }

 private:
  BackboneConfig cfg_;
  Parameter emb_, pos_, a1_, c1_, a2_, c2_;
};

/// One-layer single-head self-attention encoder with a feed-forward block.
/// Sequences in a batch attend only within themselves via a block mask.
class TransformerBackbone final : public Backbone {
 public:
  TransformerBackbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const Eigen::Index d = cfg.dim;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    emb_ = Parameter("backbone.embedding", gaussian(cfg.vocab_buckets, d, cfg.init_scale, rng));
    pos_ = Parameter("backbone.position", gaussian(cfg.max_length, d, 0.1 * cfg.init_scale, rng));
    wq_ = Parameter("backbone.attn.query", gaussian(d, d, s, rng));
    wk_ = Parameter("backbone.attn.key", gaussian(d, d, s, rng));
    wv_ = Parameter("backbone.attn.value", gaussian(d, d, s, rng));
    wo_ = Parameter("backbone.attn.out", gaussian(d, d, s, rng));
    f1_ = Parameter("backbone.ff1.weight", gaussian(d, d, s, rng));
    g1_ = Parameter("backbone.ff1.bias", Matrix::Zero(1, d));
    f2_ = Parameter("backbone.ff2.weight", gaussian(d, d, s, rng));
    g2_ = Parameter("backbone.ff2.bias", Matrix::Zero(1, d));
  }

  std::string tag() const override { return "transformer"; }
  const BackboneConfig& config() const override { return cfg_; }

  Var forward(Tape& tape, const std::vector<MarkedSequence>& batch,
              const std::vector<std::vector<int>>& positions) override {
    const FlatBatch f = flatten(*this, batch);
    const auto n = static_cast<Eigen::Index>(f.ids.size());
    Matrix mask = Matrix::Constant(n, n, -1e9);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto off = f.offset[i];
      const auto len = static_cast<Eigen::Index>(batch[i].tokens.size());
      mask.block(off, off, len, len).setZero();
    }
    Var x = ad::add(ad::gather_rows(tape.param(emb_), f.ids), ad::gather_rows(tape.param(pos_), f.pos));
    Var qv = ad::matmul_bt(x, tape.param(wq_));
    Var kv = ad::matmul_bt(x, tape.param(wk_));
    Var vv = ad::matmul_bt(x, tape.param(wv_));
    Var scores = ad::add_const(ad::scale(ad::matmul_bt(qv, kv), 1.0 / std::sqrt(static_cast<double>(cfg_.dim))), mask);
    Var attn = ad::softmax_rows(scores);
    Var y = ad::add(x, ad::matmul_bt(ad::matmul(attn, vv), tape.param(wo_)));
    Var ff = ad::tanh(ad::add_row(ad::matmul_bt(y, tape.param(f1_)), tape.param(g1_)));
    Var z = ad::add(y, ad::add_row(ad::matmul_bt(ff, tape.param(f2_)), tape.param(g2_)));
    return ad::spmm(selector(f, positions), z);
  }

  std::vector<Parameter*> parameters() override {
    return {&emb_, &pos_, &wq_, &wk_, &wv_, &wo_, &f1_, &g1_, &f2_, &g2_};
  }
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<TransformerBackbone>(*this); }

 private:
  BackboneConfig cfg_;
  Parameter emb_, pos_, wq_, wk_, wv_, wo_, f1_, g1_, f2_, g2_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  if (cfg.dim <= 0 || cfg.vocab_buckets <= 5 || cfg.max_length <= 4)
    throw ConfigError("backbone: dim, vocab_buckets and max_length must be positive and large enough");
  if (cfg.kind == "toy") return std::make_unique<ToyBackbone>(cfg, seed);
  if (cfg.kind == "transformer") return std::make_unique<TransformerBackbone>(cfg, seed);
  throw ConfigError("unknown backbone '" + cfg.kind + "'");
}

// --- Encoder ---------------------------------------------------------------

Encoder::Encoder(const BackboneConfig& cfg, std::uint64_t seed)
    : backbone_(make_backbone(cfg, derive_seed(seed, {0xbb}))) {
  Rng rng(derive_seed(seed, {0xe1}));
  const Eigen::Index d = cfg.dim;
  w1_ = Parameter("encoder.fusion.weight", gaussian(d, 2 * d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng));
  b_ = Parameter("encoder.fusion.bias", Matrix::Zero(1, d));
  gain_ = Parameter("encoder.norm.gain", Matrix::Ones(1, d));
  shift_ = Parameter("encoder.norm.shift", Matrix::Zero(1, d));
}

Encoder::Encoder(const Encoder& o)
    : backbone_(o.backbone_->clone()), w1_(o.w1_), b_(o.b_), gain_(o.gain_), shift_(o.shift_) {}

Encoder& Encoder::operator=(const Encoder& o) {
  if (this != &o) {
    Encoder tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

bool Encoder::fits(const Sample& s) const {
  return mark_entities(s).last_marker < backbone_->config().max_length;
}

std::optional<MarkedSequence> Encoder::prepare(const Sample& s) const {
  MarkedSequence m = mark_entities(s);
  const auto limit = static_cast<std::size_t>(backbone_->config().max_length);
  if (m.last_marker >= backbone_->config().max_length) {
    std::cerr << "warning: sample '" << s.id << "' skipped: entity marker beyond max length " << limit << "\n";
    return std::nullopt;
  }
  if (m.tokens.size() > limit) m.tokens.resize(limit);
  return m;
}

Var Encoder::encode(Tape& tape, const std::vector<const Sample*>& batch) {
  std::vector<MarkedSequence> seqs;
  std::vector<std::vector<int>> positions;
  seqs.reserve(batch.size());
  for (const Sample* s : batch) {
    auto m = prepare(*s);
    if (!m) throw DataError("sample '" + s->id + "' does not fit the backbone length limit");
    positions.push_back({m->head_marker, m->tail_marker});
    seqs.push_back(std::move(*m));
  }
  Var hidden = backbone_->forward(tape, seqs, positions);  // rows: h11_0, h21_0, h11_1, ...
  const auto b = static_cast<Eigen::Index>(batch.size());
  SparseMatrix pick_head(b, 2 * b), pick_tail(b, 2 * b);
  std::vector<Eigen::Triplet<double>> th, tt;
  for (Eigen::Index i = 0; i < b; ++i) {
    th.emplace_back(i, 2 * i, 1.0);
    tt.emplace_back(i, 2 * i + 1, 1.0);
  }
  pick_head.setFromTriplets(th.begin(), th.end());
  pick_tail.setFromTriplets(tt.begin(), tt.end());
  Var pair = ad::concat_cols(ad::spmm(pick_head, hidden), ad::spmm(pick_tail, hidden));
  Var fused = ad::add_row(ad::matmul_bt(pair, tape.param(w1_)), tape.param(b_));
  Var normed = ad::layer_norm_rows(fused);
  return ad::add_row(ad::mul_row(normed, tape.param(gain_)), tape.param(shift_));
}

Matrix Encoder::encode(const std::vector<const Sample*>& batch) const {
  if (batch.empty()) return Matrix(0, dim());
  // backward() is never run on this tape, so the bound parameters are not modified.
  Tape tape;
  return const_cast<Encoder*>(this)->encode(tape, batch).value();
}

Vector Encoder::encode(const Sample& s) const { return encode(std::vector<const Sample*>{&s}).row(0).transpose(); }

std::vector<Parameter*> Encoder::parameters() {
  auto ps = backbone_->parameters();
  ps.insert(ps.end(), {&w1_, &b_, &gain_, &shift_});
  return ps;
}

void Encoder::save(Archive& ar, const std::string& prefix) const {
  const auto& c = backbone_->config();
  ar.meta[prefix] = {{"backbone", backbone_->tag()},
                     {"dim", c.dim},
                     {"vocab_buckets", c.vocab_buckets},
                     {"max_length", c.max_length},
                     {"init_scale", c.init_scale}};
  for (Parameter* p : const_cast<Encoder*>(this)->parameters()) ar.put(prefix + "/" + p->name, p->value);
}

Encoder Encoder::load(const Archive& ar, const std::string& prefix) {
  if (!ar.meta.contains(prefix)) throw DataError("archive: missing encoder '" + prefix + "'");
  const auto& m = ar.meta.at(prefix);
  BackboneConfig cfg;
  cfg.kind = m.at("backbone").get<std::string>();
  cfg.dim = m.at("dim").get<int>();
  cfg.vocab_buckets = m.at("vocab_buckets").get<int>();
  cfg.max_length = m.at("max_length").get<int>();
  cfg.init_scale = m.at("init_scale").get<double>();
  Encoder e(cfg, 0);
  for (Parameter* p : e.parameters()) {
    const Matrix& v = ar.get(prefix + "/" + p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw DataError("archive: shape mismatch for '" + p->name + "'");
    p->value = v;
    p->zero_grad();
  }
  return e;
}

Encoder snapshot(const Encoder& e) { return Encoder(e); }

}  // namespace crel
