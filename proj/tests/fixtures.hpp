#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "crel/evaluation.hpp"
#include "support.hpp"

namespace crel::test {

/// Task sequence plus scripted per-task correct counts and prototype snapshots.
/// correct[k][r] is the number of relation r's test samples classified correctly after task k
/// (meaningful only once r has been seen).
struct ScriptedRun {
  TaskSequence seq;
  int per_relation = 10;
  std::vector<std::vector<int>> correct;
  PrototypeHistory history;
  AccuracyMatrix acc;

  Predictor predictor(std::size_t k) const {
    return [this, k](const std::vector<const Sample*>& batch) {
      std::vector<RelationId> out;
      for (const Sample* s : batch) {
        const int idx = std::stoi(s->id.substr(s->id.find('_') + 1));
        const int r = s->relation.value;
        if (idx < correct[k][static_cast<std::size_t>(r)]) {
          out.push_back(s->relation);
        } else {
          out.push_back(RelationId{1 << 20});  // never a real relation
        }
      }
      return out;
    };
  }

  void evaluate() {
    acc = AccuracyMatrix{};
    for (std::size_t k = 0; k < seq.size(); ++k) acc.record(k, seq, predictor(k));
  }
};

/// `tasks` tasks of `per_task` relations named r0, r1, ...; test sets of `per_relation` samples.
inline TaskSequence scripted_sequence(int tasks, int per_task, int per_relation) {
  TaskSequence seq;
  for (int t = 0; t < tasks; ++t) {
    Task task;
    for (int j = 0; j < per_task; ++j) {
      const int r = t * per_task + j;
      task.relations.push_back(seq.vocab.add("r" + std::to_string(r)));
      for (int i = 0; i < per_relation; ++i) {
        Sample s = sentence("r" + std::to_string(r) + "_" + std::to_string(i), r, "a", "b", {"c"});
        s.split = Split::test;
        task.test.push_back(s);
      }
      Sample tr = sentence("train" + std::to_string(r) + "_0", r, "a", "b", {"c"});
      task.train.push_back(tr);
    }
    seq.tasks.push_back(std::move(task));
  }
  return seq;
}

inline PrototypeSnapshot snapshot(std::vector<int> relations, std::vector<std::vector<double>> rows) {
  PrototypeSnapshot s;
  for (int r : relations) s.relations.push_back(RelationId{r});
  s.prototypes.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      s.prototypes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return s;
}

/// Six relations over three tasks with hand-chosen accuracies and prototypes.
///
/// Final maximum similarities: r0 0.9, r1 0.8, r2 0.6, r3 0.8, r4 0.9, r5 0.0.
/// Drops (first - final): r0 0.8, r1 0.1, r2 0.1, r3 0.3, r4 0.0, r5 0.0.
/// Adjacent-task drops in points: T0->T1 r0 30; T1->T2 r0 50, r1 10, r2 10, r3 30.
inline ScriptedRun six_relation_fixture() {
  ScriptedRun f;
  f.seq = scripted_sequence(3, 2, 10);
  f.correct = {{10, 9, 0, 0, 0, 0}, {7, 9, 10, 8, 0, 0}, {2, 8, 9, 5, 10, 10}};
  const double s19 = std::sqrt(0.19);
  f.history = {
      snapshot({0, 1}, {{1, 0, 0}, {0.6, 0.8, 0}}),
      snapshot({0, 1, 2, 3}, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0.8, 0.6}}),
      snapshot({0, 1, 2, 3, 4, 5},
               {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0.8, 0.6}, {0.9, s19, 0}, {-1, 0, 0}}),
  };
  f.evaluate();
  return f;
}

struct BruteDropRow {
  int count = 0;
  double before = 0.0;
  double after = 0.0;
};

/// Recomputes the sudden-drop table from raw counts and prototype rows with explicit loops.
inline std::array<BruteDropRow, 3> brute_force_sudden_drops(const ScriptedRun& f) {
  auto max_sim = [](const PrototypeSnapshot& s, RelationId r) -> std::optional<double> {
    if (s.relations.size() < 2) return std::nullopt;
    std::size_t i = 0;
    while (s.relations[i] != r) ++i;
    double best = -2.0;
    for (std::size_t j = 0; j < s.relations.size(); ++j) {
      if (j == i) continue;
      double dot = 0, na = 0, nb = 0;
      for (Eigen::Index c = 0; c < s.prototypes.cols(); ++c) {
        const double a = s.prototypes(static_cast<Eigen::Index>(i), c), b = s.prototypes(static_cast<Eigen::Index>(j), c);
        dot += a * b;
        na += a * a;
        nb += b * b;
      }
      best = std::max(best, dot / (std::sqrt(na) * std::sqrt(nb)));
    }
    return best;
  };
  std::array<BruteDropRow, 3> rows{};
  for (std::size_t k = 1; k < f.seq.size(); ++k) {
    for (RelationId r : f.history[k - 1].relations) {
      const double a0 = static_cast<double>(f.correct[k - 1][static_cast<std::size_t>(r.value)]) / f.per_relation;
      const double a1 = static_cast<double>(f.correct[k][static_cast<std::size_t>(r.value)]) / f.per_relation;
      const double points = 100.0 * (a0 - a1);
      if (!(points > 0.0)) continue;
      const auto before = max_sim(f.history[k - 1], r);
      if (!before) continue;
      const int bin = points < 20.0 ? 0 : points < 40.0 ? 1 : 2;
      rows[bin].count += 1;
      rows[bin].before += *before;
      rows[bin].after += *max_sim(f.history[k], r);
    }
  }
  for (auto& row : rows)
    if (row.count) {
      row.before /= row.count;
      row.after /= row.count;
    }
  return rows;
}

}  // namespace crel::test
