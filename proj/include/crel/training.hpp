#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "crel/config.hpp"
#include "crel/data.hpp"
#include "crel/encoder.hpp"
#include "crel/heads.hpp"
#include "crel/memory.hpp"

namespace crel {

struct LossBreakdown {
  double new_task = 0.0;
  double c_cls = 0.0;
  double l_cls = 0.0;
  double cls = 0.0;
  double c_fkd = 0.0;
  double l_fkd = 0.0;
  double replay = 0.0;
};

nlohmann::json to_json(const LossBreakdown& l);

/// Frozen end-of-task model used as the distillation teacher.
struct FrozenModel {
  Encoder encoder;
  LinearClassifier classifier;
  Projector projector;
  std::vector<RelationId> relations;  ///< classifier row order
  Matrix prototypes;                  ///< combined prototypes, one row per relation
  Matrix prototypes_z;                ///< projected + normalized prototypes

  Matrix linear_probs(const std::vector<const Sample*>& batch) const;
  Matrix contrastive_probs(const std::vector<const Sample*>& batch) const;
};

struct ModelState {
  Encoder encoder;
  LinearClassifier classifier;
  Projector projector;
  int completed_tasks = 0;
  std::shared_ptr<const FrozenModel> previous;  ///< absent before the first task finishes

  ModelState(const RunConfig& cfg);
  ModelState(Encoder e, LinearClassifier c, Projector p) : encoder(std::move(e)), classifier(std::move(c)), projector(std::move(p)) {}

  std::vector<Parameter*> parameters();
  void save(Archive& ar) const;
  static ModelState load(const Archive& ar);
};

/// Adam with one learning rate per parameter group.
class Adam {
 public:
  struct Group {
    std::vector<Parameter*> params;
    double lr;
  };
  explicit Adam(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<Matrix>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Replay-time constants for one batch: prototypes and distillation targets.
struct ReplayTargets {
  std::vector<RelationId> seen;    ///< current relations, classifier row order
  Matrix prototypes;               ///< combined prototypes p_r, rows follow `seen`
  Matrix prototypes_z;             ///< projected prototypes z_r
  std::size_t num_previous = 0;    ///< leading entries of `seen` learned before this task
  std::optional<Matrix> linear_targets;       ///< a for the linear variant
  std::optional<Matrix> contrastive_targets;  ///< a for the contrastive variant
};

struct ReplayLoss {
  LossBreakdown parts;
  Var total;
};

/// Eq.3-style loss on a new-task batch. Throws DataError for labels without a classifier row.
Var new_task_loss(Tape& tape, ModelState& model, const std::vector<const Sample*>& batch);

/// Focal-weighted distillation targets from the current forward values and the frozen teacher.
/// `h` holds the current representations of `batch`; throws DataError if the teacher lacks previous relations.
void compute_distillation_targets(ReplayTargets& targets, const ModelState& model,
                                  const std::vector<const Sample*>& batch, const Matrix& h,
                                  const std::vector<int>& labels, const RunConfig& cfg);

/// L_replay = (L_c_cls + L_l_cls) + lambda1 L_c_fkd + lambda2 L_l_fkd under the ablation switches.
/// Distillation targets are computed on demand when absent from `targets` and held constant.
ReplayLoss replay_loss(Tape& tape, ModelState& model, const std::vector<const Sample*>& batch,
                       ReplayTargets& targets, const RunConfig& cfg);

struct StepLog {
  int task = 0;
  const char* phase = "";
  int epoch = 0;
  int step = 0;
  LossBreakdown losses;
  std::size_t replay_set_size = 0;  ///< |replay samples| in the current epoch, zero for new-task steps
};
using StepLogger = std::function<void(const StepLog&)>;

/// Owns the model, memory and prototypes across a task sequence.
class ContinualLearner {
 public:
  ContinualLearner(RunConfig cfg, const RelationVocab& vocab);

  const RunConfig& config() const { return cfg_; }
  ModelState& model() { return model_; }
  const ModelState& model() const { return model_; }
  const MemoryStore& memory() const { return memory_; }
  const PrototypeStore& prototypes() const { return prototypes_; }
  const std::vector<RelationId>& seen() const { return seen_; }
  int completed_tasks() const { return model_.completed_tasks; }

  void set_logger(StepLogger logger) { logger_ = std::move(logger); }

  /// Runs one task: expand, new-task training, selection, static capture,
  /// prototypes, augmentation, replay, snapshot. Throws ConfigError if k is out of order.
  void run_task(const TaskSequence& seq, std::size_t k);

  /// Recomputes every combined prototype from the current encoder.
  void refresh_prototypes();

  /// (1 - alpha) P_c + alpha P_l, one row per sample, columns follow seen().
  Matrix combined_probs(const std::vector<const Sample*>& batch) const;
  std::vector<RelationId> predict(const std::vector<const Sample*>& batch) const;

  /// The low-dimensional prototypes under the current projector.
  Matrix prototype_z() const;

  void save(const std::filesystem::path& dir, int task) const;
  /// Restores the state written by save() for `task`, resolving exemplars against `seq`.
  static ContinualLearner load(const std::filesystem::path& dir, int task, const RunConfig& cfg,
                               const TaskSequence& seq);

 private:
  void train_new_task(const std::vector<const Sample*>& train, int k);
  void replay(const MemoryStore& memory, int k);
  ReplayTargets replay_constants() const;

  RunConfig cfg_;
  RelationVocab vocab_;
  ModelState model_;
  MemoryStore memory_;
  PrototypeStore prototypes_;
  std::vector<RelationId> seen_;
  std::size_t num_previous_ = 0;
  StepLogger logger_;
};

}  // namespace crel
