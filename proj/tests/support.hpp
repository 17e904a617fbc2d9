#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "crel/autodiff.hpp"
#include "crel/data.hpp"
#include "crel/random.hpp"
#include "crel/synthetic.hpp"
#include "crel/training.hpp"

namespace crel::test {

/// Builds a loss on a fresh tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

/// Norm-wise relative error between backprop and central differences over every parameter entry.
inline double gradient_error(const std::vector<Parameter*>& params, const LossFn& loss, double h = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    Var l = loss(t);
    t.backward(l);
  }
  double diff = 0.0, an = 0.0, nn = 0.0;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      double up;
      {
        Tape t;
        up = loss(t).scalar();
      }
      x = saved - h;
      double down;
      {
        Tape t;
        down = loss(t).scalar();
      }
      x = saved;
      const double num = (up - down) / (2.0 * h);
      const double ana = p->grad.data()[i];
      diff += (num - ana) * (num - ana);
      an += ana * ana;
      nn += num * num;
    }
  }
  const double denom = std::sqrt(an) + std::sqrt(nn);
  return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
  return m;
}

inline Sample make_sample(const std::string& id, std::vector<std::string> tokens, Span head, Span tail, int relation) {
  Sample s;
  s.id = id;
  s.tokens = std::move(tokens);
  s.head = head;
  s.tail = tail;
  s.relation = RelationId{relation};
  s.split = Split::train;
  return s;
}

/// Sentence "w0 H t1 w2 T w4 ..." with a one-token head at 1 and tail at 4.
inline Sample sentence(const std::string& id, int relation, const std::string& head, const std::string& tail,
                       const std::vector<std::string>& cue) {
  std::vector<std::string> toks{"the", head};
  toks.insert(toks.end(), cue.begin(), cue.end());
  toks.push_back(tail);
  toks.push_back(".");
  return make_sample(id, toks, {1, 2}, {static_cast<int>(toks.size()) - 2, static_cast<int>(toks.size()) - 1},
                     relation);
}

/// Small run configuration used across tests: narrow toy encoder, few epochs.
inline RunConfig small_config(int dim = 16, int epochs = 3) {
  RunConfig c = fewrel_profile();
  c.backbone.dim = dim;
  c.backbone.vocab_buckets = 256;
  c.proj_dim = dim;
  c.epochs_new = epochs;
  c.epochs_replay = epochs;
  c.learning_rate = 5e-3;
  c.backbone_learning_rate = 5e-3;
  c.memory_size = 5;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

inline SyntheticCorpus small_synthetic(int relations = 6, int tasks = 3, int per_relation = 20, std::uint64_t seed = 5) {
  SyntheticSpec s;
  s.num_relations = relations;
  s.num_tasks = tasks;
  s.samples_per_relation = per_relation;
  s.seed = seed;
  return generate_synthetic_sequence(s);
}

inline std::vector<const Sample*> pointers(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("crel_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace crel::test
