#include "crel/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "crel/errors.hpp"

namespace crel {

using nlohmann::json;

Matrix combine_probs(const Matrix& contrastive, const Matrix& linear, double alpha) {
  if (contrastive.rows() != linear.rows() || contrastive.cols() != linear.cols())
    throw std::invalid_argument("combine_probs: shape mismatch");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("combine_probs: alpha outside [0, 1]");
  return (1.0 - alpha) * contrastive + alpha * linear;
}

std::vector<int> predict_combined(const Matrix& contrastive, const Matrix& linear, double alpha) {
  const Matrix p = combine_probs(contrastive, linear, alpha);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best;
    p.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// --- AccuracyMatrix ------------------------------------------------------------

const Tally& AccuracyMatrix::tally(std::size_t k, std::size_t j) const {
  if (k >= rows_.size() || j > k) throw std::out_of_range("accuracy entry defined only for j <= k");
  return rows_[k].tasks[j];
}

double AccuracyMatrix::entry(std::size_t k, std::size_t j) const { return tally(k, j).accuracy(); }

double AccuracyMatrix::whole_history(std::size_t k) const {
  Tally sum;
  for (const Tally& t : rows_.at(k).tasks) {
    sum.correct += t.correct;
    sum.total += t.total;
  }
  return sum.accuracy();
}

std::optional<double> AccuracyMatrix::relation_accuracy(std::size_t k, RelationId r) const {
  const auto& rel = rows_.at(k).relations;
  auto it = rel.find(r);
  if (it == rel.end() || it->second.total == 0) return std::nullopt;
  return it->second.accuracy();
}

void AccuracyMatrix::record(std::size_t k, const TaskSequence& seq, const Predictor& predict) {
  if (k != rows_.size())
    throw ConfigError("accuracy row " + std::to_string(k) + " recorded out of order; expected " +
                      std::to_string(rows_.size()));
  if (k >= seq.size()) throw ConfigError("accuracy row beyond the task sequence");
  Row row;
  for (std::size_t j = 0; j <= k; ++j) {
    const Task& t = seq.tasks[j];
    if (t.test.empty()) throw DataError("task " + std::to_string(j) + " has no test split");
    std::vector<const Sample*> batch;
    for (const auto& s : t.test) batch.push_back(&s);
    const auto pred = predict(batch);
    if (pred.size() != batch.size()) throw std::logic_error("predictor returned the wrong number of labels");
    Tally tj;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool ok = pred[i] == batch[i]->relation;
      tj.correct += ok;
      ++tj.total;
      Tally& tr = row.relations[batch[i]->relation];
      tr.correct += ok;
      ++tr.total;
    }
    row.tasks.push_back(tj);
  }
  rows_.push_back(std::move(row));
}

json AccuracyMatrix::to_json() const {
  json rows = json::array();
  for (std::size_t k = 0; k < rows_.size(); ++k) {
    json tasks = json::array();
    for (const Tally& t : rows_[k].tasks) tasks.push_back({{"correct", t.correct}, {"total", t.total}});
    json rel = json::array();
    for (const auto& [r, t] : rows_[k].relations)
      rel.push_back({{"relation", r.value}, {"correct", t.correct}, {"total", t.total}});
    json acc = json::array();
    for (std::size_t j = 0; j <= k; ++j) acc.push_back(entry(k, j));
    rows.push_back({{"after_task", k}, {"accuracy", acc}, {"whole_history", whole_history(k)}, {"tasks", tasks},
                    {"relations", rel}});
  }
  return {{"meta", meta}, {"rows", rows}};
}

AccuracyMatrix AccuracyMatrix::from_json(const json& j) {
  AccuracyMatrix m;
  m.meta = j.value("meta", json::object());
  for (const auto& row : j.at("rows")) {
    Row r;
    for (const auto& t : row.at("tasks")) r.tasks.push_back({t.at("correct").get<long>(), t.at("total").get<long>()});
    for (const auto& t : row.at("relations"))
      r.relations[RelationId{t.at("relation").get<int>()}] = {t.at("correct").get<long>(), t.at("total").get<long>()};
    m.rows_.push_back(std::move(r));
  }
  return m;
}

std::string AccuracyMatrix::to_csv() const {
  std::ostringstream out;
  out << "# seed=" << meta.value("seed", json()).dump() << " config_hash=" << meta.value("config_hash", json()).dump()
      << " permutation=" << meta.value("permutation", json()).dump() << "\n";
  out << "after_task";
  for (std::size_t j = 0; j < rows_.size(); ++j) out << ",task_" << j;
  out << ",whole_history\n";
  char buf[32];
  for (std::size_t k = 0; k < rows_.size(); ++k) {
    out << k;
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      out << ',';
      if (j <= k) {
        std::snprintf(buf, sizeof buf, "%.6f", entry(k, j));
        out << buf;
      }
    }
    std::snprintf(buf, sizeof buf, "%.6f", whole_history(k));
    out << ',' << buf << "\n";
  }
  return out.str();
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& o) const { return to_json() == o.to_json(); }

AccuracyMatrix evaluate_sequence(const std::vector<Predictor>& after_task, const TaskSequence& seq) {
  AccuracyMatrix m;
  for (std::size_t k = 0; k < after_task.size(); ++k) m.record(k, seq, after_task[k]);
  return m;
}

// --- similarity ------------------------------------------------------------------

json to_json(const PrototypeSnapshot& s) {
  json rel = json::array(), rows = json::array();
  for (auto r : s.relations) rel.push_back(r.value);
  for (Eigen::Index i = 0; i < s.prototypes.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < s.prototypes.cols(); ++j) row.push_back(s.prototypes(i, j));
    rows.push_back(row);
  }
  return {{"relations", rel}, {"prototypes", rows}};
}

PrototypeSnapshot prototype_snapshot_from_json(const json& j) {
  PrototypeSnapshot s;
  for (const auto& r : j.at("relations")) s.relations.push_back(RelationId{r.get<int>()});
  const auto& rows = j.at("prototypes");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = n == 0 ? 0 : static_cast<Eigen::Index>(rows[0].size());
  s.prototypes.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) s.prototypes(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  if (static_cast<std::size_t>(n) != s.relations.size()) throw DataError("prototype snapshot row count mismatch");
  return s;
}

double cosine(const Vector& a, const Vector& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

Matrix cosine_matrix(const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, i) = rows.row(i).norm() > 0.0 ? 1.0 : 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) out(i, j) = out(j, i) = cosine(rows.row(i), rows.row(j));
  }
  return out;
}

std::map<RelationId, double> max_similarity(const PrototypeSnapshot& s) {
  if (s.relations.size() < 2) throw DataError("similarity needs at least two relations");
  const Matrix c = cosine_matrix(s.prototypes);
  std::map<RelationId, double> out;
  for (std::size_t i = 0; i < s.relations.size(); ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < s.relations.size(); ++j)
      if (i != j) best = std::max(best, c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out[s.relations[i]] = best;
  }
  return out;
}

SimilarityBin similarity_bin(double s) {
  if (s >= 0.85) return SimilarityBin::high;
  if (s >= 0.70) return SimilarityBin::medium;
  return SimilarityBin::low;
}

const char* to_string(SimilarityBin b) {
  switch (b) {
    case SimilarityBin::high: return "[0.85,1.00]";
    case SimilarityBin::medium: return "[0.70,0.85)";
    case SimilarityBin::low: return "<0.70";
  }
  return "?";
}

std::optional<std::size_t> sudden_drop_bin(double d) {
  if (!(d > 0.0)) return std::nullopt;
  if (d < 20.0) return 0;
  if (d < 40.0) return 1;
  return 2;
}

namespace {
std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json("none"); }
}  // namespace

ForgettingReport similarity_analysis(const PrototypeHistory& history, const AccuracyMatrix& acc,
                                     const TaskSequence& seq) {
  if (history.empty() || history.size() != acc.num_rows())
    throw DataError("prototype history must hold one snapshot per evaluated task");
  const std::size_t last = acc.num_rows() - 1;
  const auto final_sim = max_similarity(history.back());

  ForgettingReport rep;
  rep.meta = acc.meta;
  std::vector<std::vector<double>> bin_drops(3);
  for (RelationId r : history.back().relations) {
    const std::size_t first = seq.task_of(r);
    const auto a0 = acc.relation_accuracy(first, r);
    const auto a1 = acc.relation_accuracy(last, r);
    if (!a0 || !a1) continue;
    RelationForgetting f{r, seq.vocab.name(r), first, *a0, *a1, *a0 - *a1, final_sim.at(r),
                         similarity_bin(final_sim.at(r))};
    bin_drops[static_cast<std::size_t>(f.bin)].push_back(f.drop);
    rep.relations.push_back(std::move(f));
  }
  for (auto b : {SimilarityBin::high, SimilarityBin::medium, SimilarityBin::low}) {
    const auto& d = bin_drops[static_cast<std::size_t>(b)];
    rep.bins.push_back({to_string(b), d.size(), mean_of(d)});
  }

  static const char* ranges[] = {"(0,20)", "[20,40)", "[40,100]"};
  std::vector<std::vector<double>> before(3), after(3);
  std::vector<std::map<RelationId, double>> sims(history.size());
  for (std::size_t k = 0; k < history.size(); ++k)
    if (history[k].relations.size() >= 2) sims[k] = max_similarity(history[k]);
  for (std::size_t k = 1; k <= last; ++k) {
    for (const auto& [r, s_before] : sims[k - 1]) {
      const auto a0 = acc.relation_accuracy(k - 1, r);
      const auto a1 = acc.relation_accuracy(k, r);
      if (!a0 || !a1) continue;
      const auto bin = sudden_drop_bin(100.0 * (*a0 - *a1));
      if (!bin) continue;
      before[*bin].push_back(s_before);
      after[*bin].push_back(sims[k].at(r));
    }
  }
  for (std::size_t b = 0; b < 3; ++b) {
    SuddenDropRow row{ranges[b], before[b].size(), mean_of(before[b]), mean_of(after[b]), std::nullopt};
    if (row.mean_before) row.mean_change = *row.mean_after - *row.mean_before;
    rep.sudden_drops.push_back(row);
  }
  return rep;
}

json to_json(const ForgettingReport& r) {
  json rel = json::array(), bins = json::array(), drops = json::array();
  for (const auto& f : r.relations)
    rel.push_back({{"relation", f.name},
                   {"first_task", f.first_task},
                   {"first_accuracy", f.first_accuracy},
                   {"final_accuracy", f.final_accuracy},
                   {"drop", f.drop},
                   {"max_similarity", f.max_similarity},
                   {"bin", to_string(f.bin)}});
  for (const auto& b : r.bins) bins.push_back({{"bin", b.bin}, {"count", b.count}, {"mean_drop", opt(b.mean_drop)}});
  for (const auto& d : r.sudden_drops)
    drops.push_back({{"drop_range", d.range},
                     {"count", d.count},
                     {"mean_similarity_before", opt(d.mean_before)},
                     {"mean_similarity_after", opt(d.mean_after)},
                     {"mean_change", opt(d.mean_change)}});
  return {{"meta", r.meta}, {"relations", rel}, {"bins", bins}, {"sudden_drops", drops}};
}

SubsetMetrics subset_metrics(const ForgettingReport& report, const std::vector<RelationId>& subset) {
  SubsetMetrics m;
  std::vector<double> acc, drop;
  for (RelationId r : subset) {
    auto it = std::find_if(report.relations.begin(), report.relations.end(),
                           [&](const RelationForgetting& f) { return f.relation == r; });
    if (it == report.relations.end()) continue;
    m.relations.push_back(r);
    acc.push_back(it->final_accuracy);
    drop.push_back(it->drop);
  }
  m.final_accuracy = mean_of(acc);
  m.drop = mean_of(drop);
  return m;
}

AnalogousMetrics analogous_subset_metrics(const ForgettingReport& report, const PrototypeSnapshot& final_snapshot,
                                          const TaskSequence& seq, double threshold, double dissimilar_threshold,
                                          std::optional<std::size_t> former_tasks) {
  const std::size_t former = former_tasks.value_or(std::max<std::size_t>(1, seq.size() / 2));
  const Matrix c = cosine_matrix(final_snapshot.prototypes);
  const auto& rel = final_snapshot.relations;
  std::vector<RelationId> analogous, dissimilar, all;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    all.push_back(rel[i]);
    if (seq.task_of(rel[i]) >= former) continue;
    double best = -1.0;
    bool has_later = false;
    for (std::size_t j = 0; j < rel.size(); ++j) {
      if (seq.task_of(rel[j]) < former) continue;
      has_later = true;
      best = std::max(best, c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    if (!has_later) continue;
    if (best > threshold) analogous.push_back(rel[i]);
    else if (best < dissimilar_threshold) dissimilar.push_back(rel[i]);
  }
  return {subset_metrics(report, analogous), subset_metrics(report, dissimilar), subset_metrics(report, all)};
}

json to_json(const SubsetMetrics& m) {
  if (m.relations.empty()) return json("none");
  json rel = json::array();
  for (auto r : m.relations) rel.push_back(r.value);
  return {{"relations", rel}, {"final_accuracy", opt(m.final_accuracy)}, {"drop", opt(m.drop)}};
}

json to_json(const AnalogousMetrics& m) {
  return {{"analogous", to_json(m.analogous)}, {"dissimilar", to_json(m.dissimilar)}, {"all", to_json(m.all)}};
}

Heatmap similarity_heatmap(const PrototypeSnapshot& s, const RelationVocab& vocab,
                           const std::vector<RelationId>& subset) {
  const auto& chosen = subset.empty() ? s.relations : subset;
  Matrix rows(static_cast<Eigen::Index>(chosen.size()), s.prototypes.cols());
  Heatmap h;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto it = std::find(s.relations.begin(), s.relations.end(), chosen[i]);
    if (it == s.relations.end()) throw DataError("relation '" + vocab.name(chosen[i]) + "' has no prototype");
    rows.row(static_cast<Eigen::Index>(i)) = s.prototypes.row(it - s.relations.begin());
    h.names.push_back(vocab.name(chosen[i]));
  }
  h.values = cosine_matrix(rows);
  return h;
}

namespace {
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace

std::string to_csv(const Heatmap& h) {
  std::ostringstream out;
  out << "relation";
  for (const auto& n : h.names) out << ',' << csv_field(n);
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < h.names.size(); ++i) {
    out << csv_field(h.names[i]);
    for (std::size_t j = 0; j < h.names.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9f", h.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

json to_json(const Heatmap& h) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < h.values.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < h.values.cols(); ++j) row.push_back(h.values(i, j));
    rows.push_back(row);
  }
  return {{"relations", h.names}, {"cosine", rows}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace crel
