#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otopipe/evaluation.hpp"

namespace otopipe {

// ---------------------------------------------------------------------------
// F distribution

// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
double regularized_beta(double x, double a, double b);

// P(F <= x) for F(d1, d2).
double f_cdf(double x, double d1, double d2);
// P(F > x), evaluated without cancellation for small tails.
double f_sf(double x, double d1, double d2);
// x with P(F > x) = alpha, by bracketed bisection.
double f_crit(double alpha, double d1, double d2);

// ---------------------------------------------------------------------------
// Two-factor ANOVA with replication

struct CellSummary {
  std::int64_t count = 0;
  double sum = 0;
  double mean = 0;
  std::optional<double> variance;  // sample variance, absent when count == 1

  static CellSummary from_values(std::span<const double> values);
};

// a x b cells stored row-major. Rows are the first factor ("Sample"),
// columns the second.
struct FactorialDesign {
  std::vector<std::string> row_levels;
  std::vector<std::string> col_levels;
  std::vector<CellSummary> cells;

  const CellSummary& cell(std::size_t row, std::size_t col) const { return cells[row * col_levels.size() + col]; }
};

// values[row][col] holds that cell's replicates.
struct RawDesign {
  std::vector<std::string> row_levels;
  std::vector<std::string> col_levels;
  std::vector<std::vector<std::vector<double>>> values;
};

enum class AnovaSource { Sample = 0, Columns, Interaction, Within, Total };

struct AnovaRow {
  std::string name;
  double ss = 0;
  int df = 0;
  std::optional<double> ms;
  std::optional<double> f;
  std::optional<double> p;
  std::optional<double> f_crit;
};

class AnovaTable {
 public:
  // Throws std::logic_error unless SS and df add up to the Total row
  // (SS within 1e-9 relative).
  AnovaTable(std::array<AnovaRow, 5> rows, double alpha, bool degenerate, bool p_clamped);

  const AnovaRow& row(AnovaSource s) const { return rows_[static_cast<std::size_t>(s)]; }
  const std::array<AnovaRow, 5>& rows() const { return rows_; }
  double alpha() const { return alpha_; }
  // Within-cell mean square is zero, so F is not a finite ratio.
  bool degenerate() const { return degenerate_; }
  // Some p-value fell below 1e-300 and was reported as 0.
  bool p_clamped() const { return p_clamped_; }

 private:
  std::array<AnovaRow, 5> rows_;
  double alpha_;
  bool degenerate_;
  bool p_clamped_;
};

// Throws DataError for unbalanced designs, a < 2, b < 2 or n < 2.
AnovaTable anova_from_summaries(const FactorialDesign& design, double alpha = 0.05);
AnovaTable anova_from_raw(const RawDesign& design, double alpha = 0.05);
FactorialDesign summarize_design(const RawDesign& design);

// Columns row_level,col_level,count,mean,variance. Levels keep first-seen order.
FactorialDesign read_summary_design(std::istream& in, std::string_view source = "<stream>");
// Columns row_level,col_level,value.
RawDesign read_raw_design(std::istream& in, std::string_view source = "<stream>");
void write_raw_design(std::ostream& out, const RawDesign& design);

// Source of Variation, SS, df, MS, F, P-value, F crit.
void write_anova_text(std::ostream& out, const AnovaTable& t);
void write_anova_csv(std::ostream& out, const AnovaTable& t);

// ---------------------------------------------------------------------------
// Before/after comparison

struct MetricDelta {
  std::string model;
  std::string metric;
  double before = 0;
  double after = 0;
  double drop = 0;                     // before - after
  std::optional<double> relative_drop;  // drop / before, when before != 0
};

struct DeltaReport {
  std::vector<MetricDelta> rows;
  // Smallest and largest drop across metrics, per model.
  std::map<std::string, std::pair<double, double>> drop_range;
};

// Keys are model names; each summary must carry the same metric names on
// both sides (DataError otherwise).
DeltaReport delta_report(const std::map<std::string, RunSummary>& before,
                         const std::map<std::string, RunSummary>& after);

void write_delta_text(std::ostream& out, const DeltaReport& d);
void write_delta_csv(std::ostream& out, const DeltaReport& d);

}  // namespace otopipe
