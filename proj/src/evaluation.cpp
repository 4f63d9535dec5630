#include "otopipe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_map>

#include <fmt/core.h>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"

namespace otopipe {

// ---------------------------------------------------------------------------
// Prediction files

std::vector<int> PredictionSet::runs() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.run);
  return {s.begin(), s.end()};
}

namespace {

ClassLabel read_label(std::string_view text, std::string_view where) {
  if (auto l = parse_label(text)) return *l;
  throw DataError(fmt::format("{}: unknown label '{}'", where, text));
}

}  // namespace

PredictionSet read_predictions(std::istream& in, std::string_view source) {
  auto table = csv::Table::parse(in, std::string(source));
  const auto c_frame = table.require_column("frame_id");
  const auto c_run = table.require_column("run");
  const auto c_true = table.require_column("true");
  const auto c_pred = table.require_column("pred");
  std::array<std::size_t, kNumClasses> c_score{};
  for (int k = 0; k < kNumClasses; ++k) c_score[k] = table.require_column(fmt::format("s{}", k));

  PredictionSet p;
  p.rows.reserve(table.rows().size());
  for (const auto& row : table.rows()) {
    const auto where = fmt::format("{}:{}", source, row.line);
    PredictionRow r;
    try {
      r.frame_id = row.fields[c_frame];
      r.run = static_cast<int>(csv::parse_int(row.fields[c_run], "run"));
      r.truth = read_label(row.fields[c_true], where);
      r.predicted = read_label(row.fields[c_pred], where);
      double sum = 0;
      for (int k = 0; k < kNumClasses; ++k) {
        r.scores[k] = csv::parse_double(row.fields[c_score[k]], fmt::format("s{}", k));
        if (!(r.scores[k] >= 0.0)) throw DataError(fmt::format("score s{} is negative", k));
        sum += r.scores[k];
      }
      if (std::abs(sum - 1.0) > 1e-6) throw DataError(fmt::format("scores sum to {}, expected 1", sum));
    } catch (const DataError& e) {
      const std::string msg = e.what();
      if (msg.rfind(where, 0) == 0) throw;
      throw DataError(fmt::format("{}: {}", where, msg));
    }
    p.rows.push_back(std::move(r));
  }
  return p;
}

PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open predictions '{}'", path.string()));
  return read_predictions(in, path.string());
}

void write_predictions(std::ostream& out, const PredictionSet& p) {
  out << "frame_id,run,true,pred,s0,s1,s2,s3\n";
  for (const auto& r : p.rows) {
    out << csv::quote(r.frame_id) << ',' << r.run << ',' << ordinal(r.truth) << ',' << ordinal(r.predicted);
    for (double s : r.scores) out << ',' << fmt::format("{}", s);
    out << '\n';
  }
}

std::vector<std::string> prediction_warnings(const PredictionSet& p) {
  std::vector<std::string> out;
  for (const auto& r : p.rows) {
    const double best = *std::max_element(r.scores.begin(), r.scores.end());
    if (r.scores[ordinal(r.predicted)] < best)
      out.push_back(fmt::format("run {} frame {}: predicted {} is not an argmax of the scores", r.run, r.frame_id,
                                ordinal(r.predicted)));
  }
  return out;
}

void check_predictions_against_splits(const PredictionSet& p, const DatasetManifest& m,
                                      const std::vector<SplitAssignment>& runs) {
  std::unordered_map<int, std::set<std::string>> test_ids;
  for (const auto& a : runs)
    for (auto i : a.test) test_ids[a.run_index].insert(frame_id(m.frames.at(i)));
  for (const auto& r : p.rows) {
    auto it = test_ids.find(r.run);
    if (it == test_ids.end() || !it->second.count(r.frame_id))
      throw DataError(fmt::format("prediction for frame {} (run {}) is not on that run's test side", r.frame_id, r.run));
  }
}

// ---------------------------------------------------------------------------
// Confusion-matrix metrics

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (const auto& row : counts)
    for (auto v : row) s += v;
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int k = 0; k < kNumClasses; ++k) s += counts[k][k];
  return s;
}

std::int64_t ConfusionMatrix::true_count(int c) const {
  return std::accumulate(counts[c].begin(), counts[c].end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::predicted_count(int c) const {
  std::int64_t s = 0;
  for (int k = 0; k < kNumClasses; ++k) s += counts[k][c];
  return s;
}

ConfusionMatrix confusion(const PredictionSet& p, int run) {
  ConfusionMatrix cm;
  bool any = false;
  for (const auto& r : p.rows) {
    if (r.run != run) continue;
    const int t = ordinal(r.truth), q = ordinal(r.predicted);
    if (t < 0 || t >= kNumClasses || q < 0 || q >= kNumClasses)
      throw DataError(fmt::format("frame {}: label ordinal out of range", r.frame_id));
    ++cm.counts[t][q];
    any = true;
  }
  if (!any) throw DataError(fmt::format("no predictions for run {}", run));
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::array<ClassMetrics, kNumClasses> per_class_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw UsageError("per_class_metrics of an empty confusion matrix");
  std::array<ClassMetrics, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    auto& m = out[c];
    m.tp = cm.counts[c][c];
    m.fn = cm.true_count(c) - m.tp;
    m.fp = cm.predicted_count(c) - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    m.support = cm.true_count(c);
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_degenerate);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_degenerate);
    m.specificity = ratio(m.tn, m.tn + m.fp, m.specificity_degenerate);
    m.f1_degenerate = m.precision + m.recall == 0.0;
    m.f1 = f1_score(m.precision, m.recall);
  }
  return out;
}

MccResult mcc(const ConfusionMatrix& cm) {
  // Integer sums are exact; only the final combination is floating point.
  const double s = static_cast<double>(cm.total());
  const double c = static_cast<double>(cm.trace());
  double pt = 0, pp = 0, tt = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    const double p = static_cast<double>(cm.predicted_count(k));
    const double t = static_cast<double>(cm.true_count(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double den_sq = (s * s - pp) * (s * s - tt);
  if (den_sq <= 0.0) return {0.0, true};
  return {std::clamp((c * s - pt) / std::sqrt(den_sq), -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// AUC

std::optional<double> binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw UsageError("binary_auc: scores and labels differ in length");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks, doubled so they stay integral.
  double rank_sum_x2 = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank_x2 = static_cast<double>(i + 1 + j);  // 2 * (i+1 + j) / 2
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum_x2 += midrank_x2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = rank_sum_x2 / 2.0 - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

AucResult ovr_auc(const PredictionSet& p, int run) {
  std::vector<const PredictionRow*> rows;
  for (const auto& r : p.rows)
    if (r.run == run) rows.push_back(&r);
  if (rows.empty()) throw DataError(fmt::format("no predictions for run {}", run));
  AucResult out;
  double sum = 0;
  int used = 0;
  std::vector<double> scores(rows.size());
  std::vector<std::uint8_t> positive(rows.size());
  for (int c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      scores[i] = rows[i]->scores[c];
      positive[i] = ordinal(rows[i]->truth) == c;
    }
    out.per_class[c] = binary_auc(scores, positive);
    if (out.per_class[c]) {
      sum += *out.per_class[c];
      ++used;
    } else {
      out.flags.push_back(fmt::format("class {} has no positives or no negatives; excluded from macro AUC", c));
    }
  }
  if (used > 0) out.macro = sum / used;
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::map<std::string, double> MetricsReport::values() const {
  std::map<std::string, double> v{
      {"accuracy", accuracy},
      {"precision", micro_precision},
      {"recall", micro_recall},
      {"f1", micro_f1},
      {"macro_precision", macro_precision},
      {"macro_recall", macro_recall},
      {"macro_specificity", macro_specificity},
      {"macro_f1", macro_f1},
      {"mcc", mcc.value},
  };
  if (auc.macro) v["auc"] = *auc.macro;
  return v;
}

MetricsReport evaluate(const PredictionSet& p, int run) {
  MetricsReport r;
  r.run = run;
  r.cm = confusion(p, run);
  r.per_class = per_class_metrics(r.cm);
  const double total = static_cast<double>(r.cm.total());
  r.accuracy = static_cast<double>(r.cm.trace()) / total;

  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (r.cm.true_count(c) == 0 && r.cm.predicted_count(c) == 0) continue;
    ++present;
    r.macro_precision += r.per_class[c].precision;
    r.macro_recall += r.per_class[c].recall;
    r.macro_specificity += r.per_class[c].specificity;
    r.macro_f1 += r.per_class[c].f1;
  }
  if (present > 0) {
    r.macro_precision /= present;
    r.macro_recall /= present;
    r.macro_specificity /= present;
    r.macro_f1 /= present;
  }
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const auto& c : r.per_class) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  bool ignored = false;
  r.micro_precision = ratio(tp, tp + fp, ignored);
  r.micro_recall = ratio(tp, tp + fn, ignored);
  r.micro_f1 = f1_score(r.micro_precision, r.micro_recall);
  r.mcc = mcc(r.cm);
  r.auc = ovr_auc(p, run);
  return r;
}

std::vector<MetricsReport> evaluate_runs(const PredictionSet& p) {
  std::vector<MetricsReport> out;
  for (int run : p.runs()) out.push_back(evaluate(p, run));
  return out;
}

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw UsageError("quantile of an empty set");
  const double pos = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MetricSummary summarize_values(std::vector<double> values) {
  if (values.empty()) throw UsageError("summarize_values of an empty set");
  MetricSummary s;
  s.n = values.size();
  std::sort(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / static_cast<double>(s.n - 1);
    s.stddev = std::sqrt(*s.variance);
  }
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  return s;
}

RunSummary summarize_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw UsageError("summarize_runs needs at least one report");
  std::map<std::string, std::vector<double>> columns;
  for (const auto& r : reports)
    for (const auto& [name, value] : r.values()) columns[name].push_back(value);
  RunSummary out;
  for (auto& [name, values] : columns) out.metrics[name] = summarize_values(std::move(values));
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
  out << "run,accuracy,precision,recall,f1,macro_precision,macro_recall,macro_specificity,macro_f1,mcc,auc\n";
  for (const auto& r : reports) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", r.run, r.accuracy, r.micro_precision, r.micro_recall,
                       r.micro_f1, r.macro_precision, r.macro_recall, r.macro_specificity, r.macro_f1, r.mcc.value,
                       r.auc.macro ? fmt::format("{}", *r.auc.macro) : std::string());
  }
}

void write_per_class_text(std::ostream& out, const MetricsReport& r) {
  out << fmt::format("run {}  accuracy {:.4f}  mcc {:.4f}{}  macro auc {}\n", r.run, r.accuracy, r.mcc.value,
                     r.mcc.degenerate ? " (degenerate)" : "",
                     r.auc.macro ? fmt::format("{:.4f}", *r.auc.macro) : std::string("n/a"));
  out << fmt::format("  {:<20} {:>9} {:>9} {:>11} {:>9} {:>8}\n", "class", "precision", "recall", "specificity",
                     "f1", "support");
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[c];
    out << fmt::format("  {:<20} {:>9.4f} {:>9.4f} {:>11.4f} {:>9.4f} {:>8}{}\n",
                       fmt::format("{} ({})", label_name(static_cast<ClassLabel>(c)), c), m.precision, m.recall,
                       m.specificity, m.f1, m.support, m.degenerate() ? "  *" : "");
  }
  out << "  confusion (rows true, columns predicted):\n";
  for (const auto& row : r.cm.counts)
    out << fmt::format("    {:>6} {:>6} {:>6} {:>6}\n", row[0], row[1], row[2], row[3]);
}

void write_summary_csv(std::ostream& out, const std::string& model, const RunSummary& s, bool header) {
  if (header) out << "model,metric,n,mean,variance,stddev,min,q1,median,q3,max\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  for (const auto& [name, m] : s.metrics) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", csv::quote(model), name, m.n, m.mean, opt(m.variance),
                       opt(m.stddev), m.min, m.q1, m.median, m.q3, m.max);
  }
}

std::map<std::string, RunSummary> read_summary_csv(std::istream& in, std::string_view source) {
  auto table = csv::Table::parse(in, std::string(source));
  const char* cols[] = {"model", "metric", "n", "mean", "variance", "stddev", "min", "q1", "median", "q3", "max"};
  std::array<std::size_t, 11> c{};
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = table.require_column(cols[k]);
  std::map<std::string, RunSummary> out;
  for (const auto& row : table.rows()) {
    const auto& f = row.fields;
    MetricSummary m;
    m.n = static_cast<std::size_t>(csv::parse_int(f[c[2]], "n"));
    m.mean = csv::parse_double(f[c[3]], "mean");
    if (!f[c[4]].empty()) m.variance = csv::parse_double(f[c[4]], "variance");
    if (!f[c[5]].empty()) m.stddev = csv::parse_double(f[c[5]], "stddev");
    m.min = csv::parse_double(f[c[6]], "min");
    m.q1 = csv::parse_double(f[c[7]], "q1");
    m.median = csv::parse_double(f[c[8]], "median");
    m.q3 = csv::parse_double(f[c[9]], "q3");
    m.max = csv::parse_double(f[c[10]], "max");
    out[f[c[0]]].metrics[f[c[1]]] = m;
  }
  return out;
}

}  // namespace otopipe
