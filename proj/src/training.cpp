#include "crel/training.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "crel/errors.hpp"
#include "crel/losses.hpp"
#include "crel/random.hpp"

namespace crel {

using nlohmann::json;

namespace {
// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagEncoder = 1,
  kTagProjector,
  kTagExpand,
  kTagNewTask,
  kTagSelect,
  kTagAugment,
  kTagReplay,
};

constexpr std::size_t kEvalChunk = 256;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}
}  // namespace

json to_json(const LossBreakdown& l) {
  return json{{"L_new", l.new_task}, {"L_c_cls", l.c_cls}, {"L_l_cls", l.l_cls},   {"L_cls", l.cls},
              {"L_c_fkd", l.c_fkd},  {"L_l_fkd", l.l_fkd}, {"L_replay", l.replay}};
}

// --- FrozenModel / ModelState ------------------------------------------------

Matrix FrozenModel::linear_probs(const std::vector<const Sample*>& batch) const {
  return classifier.probs(encoder.encode(batch));
}

Matrix FrozenModel::contrastive_probs(const std::vector<const Sample*>& batch) const {
  return crel::contrastive_probs(projector.project(encoder.encode(batch)), prototypes_z, relations.size());
}

ModelState::ModelState(const RunConfig& cfg)
    : encoder(cfg.backbone, derive_seed(cfg.seed, {kTagEncoder})),
      classifier(cfg.backbone.dim),
      projector(cfg.backbone.dim, cfg.proj_dim, derive_seed(cfg.seed, {kTagProjector})) {}

std::vector<Parameter*> ModelState::parameters() {
  auto ps = encoder.parameters();
  ps.push_back(&classifier.weight());
  for (auto* p : projector.parameters()) ps.push_back(p);
  return ps;
}

void ModelState::save(Archive& ar) const {
  encoder.save(ar, "encoder");
  classifier.save(ar, "classifier");
  projector.save(ar, "projector");
  ar.meta["completed_tasks"] = completed_tasks;
  ar.meta["has_previous"] = previous != nullptr;
  if (previous) {
    previous->encoder.save(ar, "previous.encoder");
    previous->classifier.save(ar, "previous.classifier");
    previous->projector.save(ar, "previous.projector");
    json rel = json::array();
    for (auto r : previous->relations) rel.push_back(r.value);
    ar.meta["previous.relations"] = rel;
    ar.put("previous.prototypes", previous->prototypes);
    ar.put("previous.prototypes_z", previous->prototypes_z);
  }
}

ModelState ModelState::load(const Archive& ar) {
  ModelState m(Encoder::load(ar, "encoder"), LinearClassifier::load(ar, "classifier"),
               Projector::load(ar, "projector"));
  m.completed_tasks = ar.meta.at("completed_tasks").get<int>();
  if (ar.meta.at("has_previous").get<bool>()) {
    std::vector<RelationId> rel;
    for (const auto& r : ar.meta.at("previous.relations")) rel.push_back(RelationId{r.get<int>()});
    m.previous = std::make_shared<const FrozenModel>(FrozenModel{
        Encoder::load(ar, "previous.encoder"), LinearClassifier::load(ar, "previous.classifier"),
        Projector::load(ar, "previous.projector"), std::move(rel), ar.get("previous.prototypes"),
        ar.get("previous.prototypes_z")});
  }
  return m;
}

// --- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    m_.emplace_back();
    v_.emplace_back();
    for (const Parameter* p : g.params) {
      m_.back().push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.back().push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (Parameter* p : g.params) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = groups_[gi].lr;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Parameter& p = *groups_[gi].params[pi];
      Matrix& m = m_[gi][pi];
      Matrix& v = v_[gi][pi];
      m = beta1_ * m + (1.0 - beta1_) * p.grad;
      v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }
}

// --- Losses ------------------------------------------------------------------

namespace {
std::vector<int> label_indices(const LinearClassifier& c, const std::vector<const Sample*>& batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const Sample* s : batch) {
    auto i = c.index_of(s->relation);
    if (!i) throw DataError("sample '" + s->id + "' has unseen relation " + std::to_string(s->relation.value));
    labels.push_back(*i);
  }
  return labels;
}
}  // namespace

Var new_task_loss(Tape& tape, ModelState& model, const std::vector<const Sample*>& batch) {
  const auto labels = label_indices(model.classifier, batch);
  Var h = model.encoder.encode(tape, batch);
  return cross_entropy(model.classifier.logits(tape, h), labels);
}

void compute_distillation_targets(ReplayTargets& targets, const ModelState& model,
                                  const std::vector<const Sample*>& batch, const Matrix& h,
                                  const std::vector<int>& labels, const RunConfig& cfg) {
  if (!model.previous) throw std::invalid_argument("distillation needs a previous-task model");
  const FrozenModel& prev = *model.previous;
  const auto np = static_cast<Eigen::Index>(targets.num_previous);
  if (prev.classifier.size() < targets.num_previous || static_cast<Eigen::Index>(prev.relations.size()) < np)
    throw DataError("previous-task classifier lacks rows for some previous relations");

  bool use_linear = cfg.focal_probability == FocalProbability::linear;
  if (!cfg.ablation.linear) use_linear = false;
  if (!cfg.ablation.contrastive) use_linear = true;
  Matrix current = use_linear ? model.classifier.probs(h)
                              : crel::contrastive_probs(model.projector.project(h), targets.prototypes_z);
  Vector p_true(h.rows());
  for (Eigen::Index i = 0; i < h.rows(); ++i) p_true(i) = current(i, labels[static_cast<std::size_t>(i)]);

  const FocalWeights fw = focal_weights(h, targets.prototypes.topRows(np), p_true, cfg.tau2, cfg.gamma);
  if (cfg.ablation.linear) targets.linear_targets = distillation_targets(fw.weights, prev.linear_probs(batch).leftCols(np));
  if (cfg.ablation.contrastive)
    targets.contrastive_targets = distillation_targets(fw.weights, prev.contrastive_probs(batch).leftCols(np));
}

ReplayLoss replay_loss(Tape& tape, ModelState& model, const std::vector<const Sample*>& batch,
                       ReplayTargets& targets, const RunConfig& cfg) {
  if (model.classifier.relations() != targets.seen)
    throw std::invalid_argument("replay_loss: classifier rows do not match the seen relations");
  const auto labels = label_indices(model.classifier, batch);
  Var h = model.encoder.encode(tape, batch);
  const bool fkd = cfg.ablation.fkd && targets.num_previous > 0;
  if (fkd && !targets.linear_targets && !targets.contrastive_targets)
    compute_distillation_targets(targets, model, batch, h.value(), labels, cfg);

  ReplayLoss out;
  Var total = tape.constant(Matrix::Zero(1, 1));
  if (cfg.ablation.linear) {
    Var logits = model.classifier.logits(tape, h);
    Var l_cls = cross_entropy(logits, labels);
    out.parts.l_cls = l_cls.scalar();
    total = ad::add(total, l_cls);
    if (fkd) {
      Var l_fkd = focal_distillation(ad::log_softmax_rows(logits), *targets.linear_targets);
      out.parts.l_fkd = l_fkd.scalar();
      total = ad::add(total, ad::scale(l_fkd, cfg.lambda2));
    }
  }
  if (cfg.ablation.contrastive) {
    Var z = model.projector.project(tape, h);
    Var c_cls = contrastive_loss(z, targets.prototypes_z, labels, cfg.tau1, cfg.mu, cfg.omega);
    out.parts.c_cls = c_cls.scalar();
    total = ad::add(total, c_cls);
    if (fkd) {
      Var logp = ad::log_softmax_rows(ad::matmul_bt(z, tape.constant(targets.prototypes_z)));
      Var c_fkd = focal_distillation(logp, *targets.contrastive_targets);
      out.parts.c_fkd = c_fkd.scalar();
      total = ad::add(total, ad::scale(c_fkd, cfg.lambda1));
    }
  }
  out.parts.cls = out.parts.c_cls + out.parts.l_cls;
  out.parts.replay = out.parts.cls + cfg.lambda1 * out.parts.c_fkd + cfg.lambda2 * out.parts.l_fkd;
  out.total = total;
  return out;
}

// --- ContinualLearner ----------------------------------------------------------

ContinualLearner::ContinualLearner(RunConfig cfg, const RelationVocab& vocab)
    : cfg_((cfg.validate(), std::move(cfg))), vocab_(vocab), model_(cfg_), prototypes_(cfg_.effective_beta()) {}

namespace {
std::vector<Adam::Group> param_groups(ModelState& m, const RunConfig& cfg, bool with_projector) {
  Adam::Group backbone{cfg.freeze_backbone ? std::vector<Parameter*>{} : m.encoder.backbone().parameters(),
                       cfg.backbone_learning_rate};
  Adam::Group heads{{&m.encoder.fusion_weight(), &m.encoder.fusion_bias(), &m.encoder.norm_gain(),
                     &m.encoder.norm_shift(), &m.classifier.weight()},
                    cfg.learning_rate};
  if (with_projector)
    for (auto* p : m.projector.parameters()) heads.params.push_back(p);
  return {backbone, heads};
}

template <typename T>
std::vector<std::vector<T>> batches(std::vector<T> items, std::size_t batch_size, Rng& rng) {
  rng.shuffle(items);
  std::vector<std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); i += batch_size)
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + batch_size)));
  return out;
}
}  // namespace

void ContinualLearner::train_new_task(const std::vector<const Sample*>& train, int k) {
  if (train.empty() || cfg_.epochs_new == 0) return;
  Adam opt(param_groups(model_, cfg_, false));
  int step = 0;
  for (int epoch = 0; epoch < cfg_.epochs_new; ++epoch) {
    Rng rng(derive_seed(cfg_.seed, {kTagNewTask, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(epoch)}));
    for (const auto& batch : batches(train, static_cast<std::size_t>(cfg_.batch_size), rng)) {
      Tape tape;
      opt.zero_grad();
      Var loss = new_task_loss(tape, model_, batch);
      require_finite(loss.scalar(), "new-task loss");
      tape.backward(loss);
      opt.step();
      if (logger_) {
        StepLog log{k, "new", epoch, step, {}};
        log.losses.new_task = loss.scalar();
        logger_(log);
      }
      ++step;
    }
  }
}

ReplayTargets ContinualLearner::replay_constants() const {
  ReplayTargets t;
  t.seen = seen_;
  t.prototypes = prototypes_.matrix(seen_);
  t.prototypes_z = model_.projector.project(t.prototypes);
  t.num_previous = model_.previous ? num_previous_ : 0;
  return t;
}

void ContinualLearner::replay(const MemoryStore& memory, int k) {
  if (cfg_.epochs_replay == 0) return;
  const bool can_augment = cfg_.ablation.augmentation && memory.relations().size() >= 2;
  auto make_replay_set = [&](int epoch) {
    return can_augment ? augment(memory, derive_seed(cfg_.seed, {kTagAugment, static_cast<std::uint64_t>(k),
                                                                 static_cast<std::uint64_t>(epoch)}))
                       : originals_only(memory);
  };
  AugmentedMemory replay_set = make_replay_set(0);
  Adam opt(param_groups(model_, cfg_, true));
  int step = 0;
  for (int epoch = 0; epoch < cfg_.epochs_replay; ++epoch) {
    if (epoch > 0) {
      refresh_prototypes();
      if (cfg_.regenerate_augmentation) replay_set = make_replay_set(epoch);
    }
    const ReplayTargets base = replay_constants();
    std::vector<const Sample*> items;
    for (const auto& s : replay_set.samples)
      if (model_.encoder.fits(s)) items.push_back(&s);
    Rng rng(derive_seed(cfg_.seed, {kTagReplay, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(epoch)}));
    for (const auto& batch : batches(items, static_cast<std::size_t>(cfg_.batch_size), rng)) {
      Tape tape;
      opt.zero_grad();
      ReplayTargets targets = base;
      ReplayLoss loss = replay_loss(tape, model_, batch, targets, cfg_);
      require_finite(loss.parts.replay, "replay loss");
      tape.backward(loss.total);
      opt.step();
      if (logger_) logger_(StepLog{k, "replay", epoch, step, loss.parts, items.size()});
      ++step;
    }
  }
}

void ContinualLearner::refresh_prototypes() {
  for (RelationId r : seen_) prototypes_.set_combined(r, combined_prototype(prototypes_, model_.encoder, memory_, r));
}

void ContinualLearner::run_task(const TaskSequence& seq, std::size_t k) {
  if (static_cast<int>(k) != model_.completed_tasks)
    throw ConfigError("task " + std::to_string(k) + " is out of order; expected task " +
                      std::to_string(model_.completed_tasks));
  if (k >= seq.size()) throw ConfigError("task index beyond the sequence");
  const Task& task = seq.tasks[k];
  const auto kk = static_cast<std::uint64_t>(k);

  std::vector<const Sample*> train;
  for (const auto& s : task.train)
    if (model_.encoder.fits(s)) train.push_back(&s);
    else (void)model_.encoder.prepare(s);  // warns

  num_previous_ = seen_.size();
  model_.classifier.expand(task.relations, derive_seed(cfg_.seed, {kTagExpand, kk}));
  seen_.insert(seen_.end(), task.relations.begin(), task.relations.end());

  train_new_task(train, static_cast<int>(k));

  for (RelationId r : task.relations) {
    std::vector<Sample> of_r;
    for (const Sample* s : train)
      if (s->relation == r) of_r.push_back(*s);
    if (of_r.empty()) throw DataError("relation '" + seq.vocab.name(r) + "' has no usable training samples");
    memory_.set(r, select_typical(model_.encoder, of_r, cfg_.memory_size,
                                  derive_seed(cfg_.seed, {kTagSelect, kk, static_cast<std::uint64_t>(r.value)})));
    capture_static_prototype(prototypes_, model_.encoder, r, of_r);
  }
  refresh_prototypes();

  if (cfg_.ablation.replay) replay(memory_, static_cast<int>(k));
  refresh_prototypes();

  model_.previous = std::make_shared<const FrozenModel>(FrozenModel{
      model_.encoder, model_.classifier, model_.projector, seen_, prototypes_.matrix(seen_), prototype_z()});
  ++model_.completed_tasks;
}

Matrix ContinualLearner::prototype_z() const { return model_.projector.project(prototypes_.matrix(seen_)); }

Matrix ContinualLearner::combined_probs(const std::vector<const Sample*>& batch) const {
  const double alpha = cfg_.effective_alpha();
  const auto n_rel = static_cast<Eigen::Index>(seen_.size());
  Matrix out(static_cast<Eigen::Index>(batch.size()), n_rel);
  const Matrix z_protos = alpha < 1.0 ? prototype_z() : Matrix();
  for (std::size_t i = 0; i < batch.size(); i += kEvalChunk) {
    const std::size_t end = std::min(batch.size(), i + kEvalChunk);
    std::vector<const Sample*> chunk(batch.begin() + static_cast<std::ptrdiff_t>(i),
                                     batch.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix h = model_.encoder.encode(chunk);
    Matrix p = Matrix::Zero(h.rows(), n_rel);
    if (alpha > 0.0) p += alpha * model_.classifier.probs(h);
    if (alpha < 1.0) p += (1.0 - alpha) * crel::contrastive_probs(model_.projector.project(h), z_protos);
    out.middleRows(static_cast<Eigen::Index>(i), p.rows()) = p;
  }
  return out;
}

std::vector<RelationId> ContinualLearner::predict(const std::vector<const Sample*>& batch) const {
  const Matrix p = combined_probs(batch);
  std::vector<RelationId> out;
  out.reserve(batch.size());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best;
    p.row(i).maxCoeff(&best);
    out.push_back(seen_[static_cast<std::size_t>(best)]);
  }
  return out;
}

// --- Persistence -------------------------------------------------------------

void ContinualLearner::save(const std::filesystem::path& dir, int task) const {
  std::filesystem::create_directories(dir);
  Archive ar;
  model_.save(ar);
  write_archive(dir / ("model_task" + std::to_string(task) + ".bin"), ar);

  json names = json::array();
  for (auto r : seen_) names.push_back(vocab_.name(r));
  json mem{{"task", task},
           {"seen", names},
           {"num_previous", num_previous_},
           {"memory", memory_.to_json(vocab_)},
           {"prototypes", prototypes_.to_json(vocab_)}};
  const auto path = dir / ("memory_task" + std::to_string(task) + ".json");
  std::ofstream out(path.string() + ".tmp");
  out << mem.dump(1);
  out.close();
  std::filesystem::rename(path.string() + ".tmp", path);
}

ContinualLearner ContinualLearner::load(const std::filesystem::path& dir, int task, const RunConfig& cfg,
                                        const TaskSequence& seq) {
  const std::string tag = "task " + std::to_string(task);
  try {
    ContinualLearner l(cfg, seq.vocab);
    l.model_ = ModelState::load(read_archive(dir / ("model_task" + std::to_string(task) + ".bin")));
    std::ifstream in(dir / ("memory_task" + std::to_string(task) + ".json"));
    if (!in) throw DataError("missing memory snapshot");
    const json mem = json::parse(in);
    std::unordered_map<std::string, const Sample*> by_id;
    for (const auto& t : seq.tasks)
      for (const auto& s : t.train) by_id.emplace(s.id, &s);
    l.memory_ = MemoryStore::from_json(mem.at("memory"), seq.vocab, by_id);
    l.prototypes_ = PrototypeStore::from_json(mem.at("prototypes"), seq.vocab);
    for (const auto& n : mem.at("seen")) l.seen_.push_back(seq.vocab.at(n.get<std::string>()));
    l.num_previous_ = mem.at("num_previous").get<std::size_t>();
    if (l.model_.completed_tasks != task + 1) throw DataError("checkpoint task counter mismatch");
    return l;
  } catch (const DataError& e) {
    throw DataError("corrupt snapshot for " + tag + ": " + e.what());
  } catch (const json::exception& e) {
    throw DataError("corrupt snapshot for " + tag + ": " + e.what());
  }
}

}  // namespace crel
