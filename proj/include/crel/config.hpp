#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "crel/encoder.hpp"

namespace crel {

/// Component switches. Each `false` removes one component:
/// fkd - focal distillation terms; linear / contrastive - that training and
/// prediction path; augmentation - replay uses original exemplars only;
/// dynamic_prototypes / static_prototypes - prototype becomes the pure
/// static / dynamic mean; replay - no memory replay phase at all.
struct Ablation {
  bool fkd = true;
  bool linear = true;
  bool contrastive = true;
  bool augmentation = true;
  bool dynamic_prototypes = true;
  bool static_prototypes = true;
  bool replay = true;

  bool operator==(const Ablation&) const = default;
};

/// Parses a Table-style ablation name: "full", "w/o FKD", "no-fkd", "fkd", "lm", ... ; "no-replay".
Ablation ablation_from_name(const std::string& name);
std::string ablation_name(const Ablation& a);

enum class FocalProbability { linear, contrastive };

struct RunConfig {
  int memory_size = 10;
  double alpha = 0.5;
  double beta = 0.5;
  double tau1 = 0.1;
  double tau2 = 0.5;
  double mu = 0.5;
  double omega = 0.1;
  double gamma = 1.25;
  double lambda1 = 0.5;
  double lambda2 = 1.1;

  double learning_rate = 1e-3;
  double backbone_learning_rate = 1e-3;
  int epochs_new = 10;
  int epochs_replay = 10;
  int batch_size = 16;
  std::uint64_t seed = 42;

  BackboneConfig backbone;
  int proj_dim = 64;

  FocalProbability focal_probability = FocalProbability::linear;
  bool regenerate_augmentation = false;
  /// Keeps backbone weights fixed; fusion, norm and heads still train.
  bool freeze_backbone = false;
  Ablation ablation;

  /// Throws ConfigError on out-of-range values or an invalid ablation combination.
  void validate() const;
  /// Beta after the prototype ablations: 0 without dynamic, 1 without static prototypes.
  double effective_beta() const;
  /// Alpha after the head ablations: 0 without the linear path, 1 without the contrastive path or replay.
  double effective_alpha() const;

  bool operator==(const RunConfig&) const = default;
};

/// Hyperparameters used for FewRel and TACRED.
RunConfig fewrel_profile();
RunConfig tacred_profile();

nlohmann::json to_json(const RunConfig& c);
/// Values missing from `j` keep the defaults in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

}  // namespace crel
