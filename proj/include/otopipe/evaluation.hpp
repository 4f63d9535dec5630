#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otopipe/manifest.hpp"
#include "otopipe/splitting.hpp"

namespace otopipe {

struct PredictionRow {
  std::string frame_id;
  int run = 0;
  ClassLabel truth = ClassLabel::Normal;
  ClassLabel predicted = ClassLabel::Normal;
  std::array<double, kNumClasses> scores{};

  friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

struct PredictionSet {
  std::vector<PredictionRow> rows;

  std::vector<int> runs() const;  // sorted, distinct
  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

// Header frame_id,run,true,pred,s0,s1,s2,s3. Labels are ordinals 0..3 (class
// names are accepted on input). Unknown labels, negative scores and score
// rows not summing to 1 within 1e-6 throw DataError.
PredictionSet read_predictions(std::istream& in, std::string_view source = "<stream>");
PredictionSet read_predictions(const std::filesystem::path& path);
void write_predictions(std::ostream& out, const PredictionSet& p);

// Soft problems: predicted label that is not an argmax of the scores.
std::vector<std::string> prediction_warnings(const PredictionSet& p);

// Throws DataError when a row's frame is not on the test side of the
// assignment with the same run index.
void check_predictions_against_splits(const PredictionSet& p, const DatasetManifest& m,
                                      const std::vector<SplitAssignment>& runs);

struct ConfusionMatrix {
  // counts[true][predicted]
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t true_count(int c) const;       // row sum (support)
  std::int64_t predicted_count(int c) const;  // column sum

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Throws DataError when the run has no rows.
ConfusionMatrix confusion(const PredictionSet& p, int run);

struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t support = 0;
  double precision = 0, recall = 0, specificity = 0, f1 = 0;
  // Set when the ratio was 0/0 and reported as 0.
  bool precision_degenerate = false, recall_degenerate = false;
  bool specificity_degenerate = false, f1_degenerate = false;

  bool degenerate() const {
    return precision_degenerate || recall_degenerate || specificity_degenerate || f1_degenerate;
  }
};

// Harmonic mean 2PR / (P + R); 0 when P + R = 0.
double f1_score(double precision, double recall);

// One-vs-rest counts and rates per class. Throws UsageError on an empty matrix.
std::array<ClassMetrics, kNumClasses> per_class_metrics(const ConfusionMatrix& cm);

struct MccResult {
  double value = 0;
  bool degenerate = false;  // zero denominator, value reported as 0
};

// Gorodkin's multiclass form (c s - sum p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)).
MccResult mcc(const ConfusionMatrix& cm);

// Mann-Whitney AUC with midranks for ties; nullopt without both a positive
// and a negative.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct AucResult {
  std::array<std::optional<double>, kNumClasses> per_class{};
  std::optional<double> macro;  // mean over classes that have an AUC
  std::vector<std::string> flags;
};

AucResult ovr_auc(const PredictionSet& p, int run);

struct MetricsReport {
  int run = 0;
  ConfusionMatrix cm;
  std::array<ClassMetrics, kNumClasses> per_class{};
  double accuracy = 0;
  // Macro averages are taken over classes present in truth or predictions.
  double macro_precision = 0, macro_recall = 0, macro_specificity = 0, macro_f1 = 0;
  // Micro averages; for single-label data all three equal accuracy.
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
  MccResult mcc;
  AucResult auc;

  // Flat name -> value view used by run summaries: accuracy, precision,
  // recall, f1 (micro), macro_precision, macro_recall, macro_specificity,
  // macro_f1, mcc, auc (macro, when defined).
  std::map<std::string, double> values() const;
};

MetricsReport evaluate(const PredictionSet& p, int run);
// One report per run in the set, in run order.
std::vector<MetricsReport> evaluate_runs(const PredictionSet& p);

struct MetricSummary {
  std::size_t n = 0;
  double mean = 0;
  std::optional<double> variance;  // sample (n - 1); absent for n = 1
  std::optional<double> stddev;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// Quantile by linear interpolation at position (n - 1) p of the sorted data.
double quantile(std::span<const double> sorted, double p);
MetricSummary summarize_values(std::vector<double> values);

struct RunSummary {
  std::map<std::string, MetricSummary> metrics;
};

// Throws UsageError on an empty list.
RunSummary summarize_runs(const std::vector<MetricsReport>& reports);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports);
void write_per_class_text(std::ostream& out, const MetricsReport& r);
void write_summary_csv(std::ostream& out, const std::string& model, const RunSummary& s, bool header = true);
std::map<std::string, RunSummary> read_summary_csv(std::istream& in, std::string_view source = "<stream>");

}  // namespace otopipe
