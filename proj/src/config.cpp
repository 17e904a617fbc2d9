#include "crel/config.hpp"

#include <algorithm>
#include <cctype>

#include "crel/errors.hpp"

namespace crel {

using nlohmann::json;

namespace {
std::string normalize(std::string s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (out.rfind("wo", 0) == 0) out = out.substr(2);
  else if (out.rfind("no", 0) == 0 && out != "none") out = out.substr(2);
  return out;
}
}  // namespace

Ablation ablation_from_name(const std::string& name) {
  const std::string n = normalize(name);
  Ablation a;
  if (n.empty() || n == "full" || n == "intact" || n == "none") return a;
  if (n == "fkd") a.fkd = false;
  else if (n == "lm") a.linear = false;
  else if (n == "cm") a.contrastive = false;
  else if (n == "ma") a.augmentation = false;
  else if (n == "dp") a.dynamic_prototypes = false;
  else if (n == "sp") a.static_prototypes = false;
  else if (n == "replay") a.replay = false;
  else throw ConfigError("unknown ablation '" + name + "' (expected FKD, LM, CM, MA, DP, SP or replay)");
  return a;
}

std::string ablation_name(const Ablation& a) {
  std::string out;
  auto add = [&](bool on, const char* tag) {
    if (!on) out += (out.empty() ? "w/o " : "+") + std::string(tag);
  };
  add(a.fkd, "FKD");
  add(a.linear, "LM");
  add(a.contrastive, "CM");
  add(a.augmentation, "MA");
  add(a.dynamic_prototypes, "DP");
  add(a.static_prototypes, "SP");
  add(a.replay, "replay");
  return out.empty() ? "full" : out;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(memory_size >= 1, "memory_size must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  require(tau1 > 0.0 && tau2 > 0.0, "tau1 and tau2 must be positive");
  require(mu >= 0.0 && omega >= 0.0 && gamma >= 0.0, "mu, omega and gamma must be non-negative");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be non-negative");
  require(learning_rate > 0.0 && backbone_learning_rate > 0.0, "learning rates must be positive");
  require(epochs_new >= 0 && epochs_replay >= 0, "epoch counts must be non-negative");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(proj_dim >= 1, "proj_dim must be >= 1");
  require(backbone.dim >= 1, "backbone dim must be >= 1");
  require(ablation.linear || ablation.contrastive, "disabling both the linear and the contrastive method is not allowed");
  require(ablation.dynamic_prototypes || ablation.static_prototypes,
          "disabling both dynamic and static prototypes is not allowed");
}

double RunConfig::effective_beta() const {
  if (!ablation.dynamic_prototypes) return 0.0;
  if (!ablation.static_prototypes) return 1.0;
  return beta;
}

double RunConfig::effective_alpha() const {
  if (!ablation.linear) return 0.0;
  if (!ablation.contrastive || !ablation.replay) return 1.0;
  return alpha;
}

RunConfig fewrel_profile() {
  RunConfig c;
  c.alpha = 0.5;
  c.beta = 0.5;
  c.tau1 = 0.1;
  c.mu = 0.5;
  c.omega = 0.1;
  c.tau2 = 0.5;
  c.gamma = 1.25;
  c.lambda1 = 0.5;
  c.lambda2 = 1.1;
  return c;
}

RunConfig tacred_profile() {
  RunConfig c;
  c.alpha = 0.6;
  c.beta = 0.2;
  c.tau1 = 0.1;
  c.mu = 0.8;
  c.omega = 0.15;
  c.tau2 = 0.5;
  c.gamma = 2.0;
  c.lambda1 = 0.5;
  c.lambda2 = 0.7;
  return c;
}

json to_json(const RunConfig& c) {
  return json{
      {"memory_size", c.memory_size},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"tau1", c.tau1},
      {"tau2", c.tau2},
      {"mu", c.mu},
      {"omega", c.omega},
      {"gamma", c.gamma},
      {"lambda1", c.lambda1},
      {"lambda2", c.lambda2},
      {"optimizer",
       {{"learning_rate", c.learning_rate},
        {"backbone_learning_rate", c.backbone_learning_rate},
        {"epochs_new", c.epochs_new},
        {"epochs_replay", c.epochs_replay},
        {"batch_size", c.batch_size},
        {"freeze_backbone", c.freeze_backbone}}},
      {"seed", c.seed},
      {"encoder",
       {{"backbone", c.backbone.kind},
        {"dim", c.backbone.dim},
        {"vocab_buckets", c.backbone.vocab_buckets},
        {"max_length", c.backbone.max_length},
        {"init_scale", c.backbone.init_scale},
        {"proj_dim", c.proj_dim}}},
      {"focal_probability", c.focal_probability == FocalProbability::linear ? "linear" : "contrastive"},
      {"regenerate_augmentation", c.regenerate_augmentation},
      {"ablation",
       {{"fkd", c.ablation.fkd},
        {"linear", c.ablation.linear},
        {"contrastive", c.ablation.contrastive},
        {"augmentation", c.ablation.augmentation},
        {"dynamic_prototypes", c.ablation.dynamic_prototypes},
        {"static_prototypes", c.ablation.static_prototypes},
        {"replay", c.ablation.replay}}},
  };
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("run config must be an object");
  try {
    if (j.contains("profile")) {
      const auto p = j["profile"].get<std::string>();
      if (p == "fewrel") c = fewrel_profile();
      else if (p == "tacred") c = tacred_profile();
      else throw ConfigError("unknown profile '" + p + "'");
    }
    c.memory_size = j.value("memory_size", c.memory_size);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.tau1 = j.value("tau1", c.tau1);
    c.tau2 = j.value("tau2", c.tau2);
    c.mu = j.value("mu", c.mu);
    c.omega = j.value("omega", c.omega);
    c.gamma = j.value("gamma", c.gamma);
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      c.learning_rate = o.value("learning_rate", c.learning_rate);
      c.backbone_learning_rate = o.value("backbone_learning_rate", c.backbone_learning_rate);
      c.epochs_new = o.value("epochs_new", c.epochs_new);
      c.epochs_replay = o.value("epochs_replay", c.epochs_replay);
      c.batch_size = o.value("batch_size", c.batch_size);
      c.freeze_backbone = o.value("freeze_backbone", c.freeze_backbone);
    }
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      c.backbone.kind = e.value("backbone", c.backbone.kind);
      c.backbone.dim = e.value("dim", c.backbone.dim);
      c.backbone.vocab_buckets = e.value("vocab_buckets", c.backbone.vocab_buckets);
      c.backbone.max_length = e.value("max_length", c.backbone.max_length);
      c.backbone.init_scale = e.value("init_scale", c.backbone.init_scale);
      c.proj_dim = e.value("proj_dim", c.proj_dim);
    }
    // Pretrained backbones get a smaller default step than the heads.
    const bool explicit_backbone_lr = j.contains("optimizer") && j["optimizer"].contains("backbone_learning_rate");
    if (c.backbone.kind == "transformer" && !explicit_backbone_lr) c.backbone_learning_rate = 1e-5;
    if (j.contains("focal_probability")) {
      const auto f = j["focal_probability"].get<std::string>();
      if (f == "linear") c.focal_probability = FocalProbability::linear;
      else if (f == "contrastive") c.focal_probability = FocalProbability::contrastive;
      else throw ConfigError("focal_probability must be linear or contrastive");
    }
    c.regenerate_augmentation = j.value("regenerate_augmentation", c.regenerate_augmentation);
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      if (a.is_string()) {
        c.ablation = ablation_from_name(a.get<std::string>());
      } else {
        c.ablation.fkd = a.value("fkd", c.ablation.fkd);
        c.ablation.linear = a.value("linear", c.ablation.linear);
        c.ablation.contrastive = a.value("contrastive", c.ablation.contrastive);
        c.ablation.augmentation = a.value("augmentation", c.ablation.augmentation);
        c.ablation.dynamic_prototypes = a.value("dynamic_prototypes", c.ablation.dynamic_prototypes);
        c.ablation.static_prototypes = a.value("static_prototypes", c.ablation.static_prototypes);
        c.ablation.replay = a.value("replay", c.ablation.replay);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace crel
