#include "otopipe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/core.h>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"

namespace otopipe {

// ---------------------------------------------------------------------------
// F distribution

namespace {

// Continued fraction for I_x(a, b); converges fast for x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

// x^a (1-x)^b / (a B(a, b)) in log space.
double beta_front(double x, double a, double b) {
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  return std::exp(log_front) / a;
}

}  // namespace

double regularized_beta(double x, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw UsageError("regularized_beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw UsageError("regularized_beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  if (x < (a + 1.0) / (a + b + 2.0)) return beta_front(x, a, b) * beta_continued_fraction(x, a, b);
  return 1.0 - beta_front(1.0 - x, b, a) * beta_continued_fraction(1.0 - x, b, a);
}

double f_cdf(double x, double d1, double d2) {
  if (!(d1 > 0 && d2 > 0)) throw UsageError("F degrees of freedom must be positive");
  if (!(x >= 0.0)) throw UsageError("f_cdf needs x >= 0");
  if (std::isinf(x)) return 1.0;
  return regularized_beta(d1 * x / (d1 * x + d2), d1 / 2.0, d2 / 2.0);
}

double f_sf(double x, double d1, double d2) {
  if (!(d1 > 0 && d2 > 0)) throw UsageError("F degrees of freedom must be positive");
  if (!(x >= 0.0)) throw UsageError("f_sf needs x >= 0");
  if (std::isinf(x)) return 0.0;
  return regularized_beta(d2 / (d2 + d1 * x), d2 / 2.0, d1 / 2.0);
}

double f_crit(double alpha, double d1, double d2) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  double lo = 0.0, hi = 1.0;
  while (f_sf(hi, d1, d2) > alpha) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw std::runtime_error("f_crit: failed to bracket");
  }
  for (int i = 0; i < 400 && hi - lo > 1e-12 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f_sf(mid, d1, d2) > alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// ANOVA

CellSummary CellSummary::from_values(std::span<const double> values) {
  if (values.empty()) throw DataError("empty ANOVA cell");
  CellSummary c;
  c.count = static_cast<std::int64_t>(values.size());
  c.sum = std::accumulate(values.begin(), values.end(), 0.0);
  c.mean = c.sum / static_cast<double>(c.count);
  if (c.count > 1) {
    double ss = 0;
    for (double v : values) ss += (v - c.mean) * (v - c.mean);
    c.variance = ss / static_cast<double>(c.count - 1);
  }
  return c;
}

AnovaTable::AnovaTable(std::array<AnovaRow, 5> rows, double alpha, bool degenerate, bool p_clamped)
    : rows_(std::move(rows)), alpha_(alpha), degenerate_(degenerate), p_clamped_(p_clamped) {
  const auto& total = rows_[4];
  const double ss_sum = rows_[0].ss + rows_[1].ss + rows_[2].ss + rows_[3].ss;
  const int df_sum = rows_[0].df + rows_[1].df + rows_[2].df + rows_[3].df;
  if (std::abs(ss_sum - total.ss) > 1e-9 * std::max(std::abs(total.ss), 1e-300) + 1e-300)
    throw std::logic_error(fmt::format("ANOVA SS do not add up: {} vs {}", ss_sum, total.ss));
  if (df_sum != total.df) throw std::logic_error("ANOVA degrees of freedom do not add up");
}

AnovaTable anova_from_summaries(const FactorialDesign& design, double alpha) {
  const std::size_t a = design.row_levels.size(), b = design.col_levels.size();
  if (a < 2 || b < 2) throw DataError(fmt::format("two-factor ANOVA needs at least 2x2 levels, got {}x{}", a, b));
  if (design.cells.size() != a * b) throw DataError("design has the wrong number of cells");
  const std::int64_t n = design.cells.front().count;
  for (const auto& c : design.cells) {
    if (c.count != n) throw DataError("unbalanced design: every cell needs the same count");
    if (!c.variance) throw DataError("every cell needs a variance (count >= 2)");
  }
  if (n < 2) throw DataError("ANOVA with replication needs n >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");

  const double nd = static_cast<double>(n);
  double grand = 0;
  for (const auto& c : design.cells) grand += c.mean;
  grand /= static_cast<double>(a * b);

  double ss_rows = 0, ss_cols = 0, ss_cells = 0, ss_within = 0;
  for (std::size_t i = 0; i < a; ++i) {
    double m = 0;
    for (std::size_t j = 0; j < b; ++j) m += design.cell(i, j).mean;
    m /= static_cast<double>(b);
    ss_rows += (m - grand) * (m - grand);
  }
  ss_rows *= static_cast<double>(b) * nd;
  for (std::size_t j = 0; j < b; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < a; ++i) m += design.cell(i, j).mean;
    m /= static_cast<double>(a);
    ss_cols += (m - grand) * (m - grand);
  }
  ss_cols *= static_cast<double>(a) * nd;
  for (const auto& c : design.cells) {
    ss_cells += (c.mean - grand) * (c.mean - grand);
    ss_within += (nd - 1.0) * *c.variance;
  }
  ss_cells *= nd;
  const double ss_inter = ss_cells - ss_rows - ss_cols;

  const int df_rows = static_cast<int>(a) - 1;
  const int df_cols = static_cast<int>(b) - 1;
  const int df_inter = df_rows * df_cols;
  const int df_within = static_cast<int>(a * b) * (static_cast<int>(n) - 1);
  const double ms_within = ss_within / df_within;

  bool degenerate = ms_within == 0.0;
  bool clamped = false;
  auto effect = [&](const char* name, double ss, int df) {
    AnovaRow r{name, ss, df};
    r.ms = ss / df;
    r.f_crit = f_crit(alpha, df, df_within);
    if (ms_within > 0.0) {
      r.f = *r.ms / ms_within;
      double p = f_sf(*r.f, df, df_within);
      if (p < 1e-300) {
        p = 0.0;
        clamped = true;
      }
      r.p = p;
    } else if (*r.ms > 0.0) {
      r.f = std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  };

  std::array<AnovaRow, 5> rows{
      effect("Sample", ss_rows, df_rows),
      effect("Columns", ss_cols, df_cols),
      effect("Interaction", ss_inter, df_inter),
      AnovaRow{"Within", ss_within, df_within, ms_within},
      AnovaRow{"Total", ss_cells + ss_within, static_cast<int>(a * b * static_cast<std::size_t>(n)) - 1},
  };
  return AnovaTable(std::move(rows), alpha, degenerate, clamped);
}

FactorialDesign summarize_design(const RawDesign& design) {
  const std::size_t a = design.row_levels.size(), b = design.col_levels.size();
  if (design.values.size() != a) throw DataError("raw design rows do not match row levels");
  FactorialDesign out{design.row_levels, design.col_levels, {}};
  for (std::size_t i = 0; i < a; ++i) {
    if (design.values[i].size() != b) throw DataError("raw design columns do not match column levels");
    for (std::size_t j = 0; j < b; ++j) out.cells.push_back(CellSummary::from_values(design.values[i][j]));
  }
  return out;
}

AnovaTable anova_from_raw(const RawDesign& design, double alpha) {
  return anova_from_summaries(summarize_design(design), alpha);
}

namespace {

std::size_t level_index(std::vector<std::string>& levels, const std::string& name) {
  auto it = std::find(levels.begin(), levels.end(), name);
  if (it != levels.end()) return static_cast<std::size_t>(it - levels.begin());
  levels.push_back(name);
  return levels.size() - 1;
}

}  // namespace

FactorialDesign read_summary_design(std::istream& in, std::string_view source) {
  auto table = csv::Table::parse(in, std::string(source));
  const auto c_row = table.require_column("row_level");
  const auto c_col = table.require_column("col_level");
  const auto c_count = table.require_column("count");
  const auto c_mean = table.require_column("mean");
  const auto c_var = table.require_column("variance");
  FactorialDesign d;
  std::vector<std::tuple<std::size_t, std::size_t, CellSummary, std::size_t>> cells;
  for (const auto& row : table.rows()) {
    const auto where = fmt::format("{}:{}", source, row.line);
    try {
      const auto i = level_index(d.row_levels, row.fields[c_row]);
      const auto j = level_index(d.col_levels, row.fields[c_col]);
      CellSummary c;
      c.count = csv::parse_int(row.fields[c_count], "count");
      if (c.count < 1) throw DataError("count must be >= 1");
      c.mean = csv::parse_double(row.fields[c_mean], "mean");
      c.sum = c.mean * static_cast<double>(c.count);
      if (!row.fields[c_var].empty()) {
        c.variance = csv::parse_double(row.fields[c_var], "variance");
        if (*c.variance < 0) throw DataError("variance must be >= 0");
      }
      cells.emplace_back(i, j, c, row.line);
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: {}", where, e.what()));
    }
  }
  const std::size_t a = d.row_levels.size(), b = d.col_levels.size();
  d.cells.assign(a * b, CellSummary{});
  std::vector<bool> filled(a * b, false);
  for (const auto& [i, j, c, line] : cells) {
    if (filled[i * b + j])
      throw DataError(fmt::format("{}:{}: duplicate cell ({}, {})", source, line, d.row_levels[i], d.col_levels[j]));
    filled[i * b + j] = true;
    d.cells[i * b + j] = c;
  }
  for (std::size_t k = 0; k < filled.size(); ++k)
    if (!filled[k])
      throw DataError(fmt::format("{}: missing cell ({}, {})", source, d.row_levels[k / b], d.col_levels[k % b]));
  return d;
}

RawDesign read_raw_design(std::istream& in, std::string_view source) {
  auto table = csv::Table::parse(in, std::string(source));
  const auto c_row = table.require_column("row_level");
  const auto c_col = table.require_column("col_level");
  const auto c_val = table.require_column("value");
  RawDesign d;
  std::vector<std::tuple<std::size_t, std::size_t, double>> values;
  for (const auto& row : table.rows()) {
    const auto i = level_index(d.row_levels, row.fields[c_row]);
    const auto j = level_index(d.col_levels, row.fields[c_col]);
    try {
      values.emplace_back(i, j, csv::parse_double(row.fields[c_val], "value"));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", source, row.line, e.what()));
    }
  }
  d.values.assign(d.row_levels.size(), std::vector<std::vector<double>>(d.col_levels.size()));
  for (const auto& [i, j, v] : values) d.values[i][j].push_back(v);
  return d;
}

void write_raw_design(std::ostream& out, const RawDesign& design) {
  out << "row_level,col_level,value\n";
  for (std::size_t i = 0; i < design.values.size(); ++i)
    for (std::size_t j = 0; j < design.values[i].size(); ++j)
      for (double v : design.values[i][j])
        out << csv::quote(design.row_levels[i]) << ',' << csv::quote(design.col_levels[j]) << ','
            << fmt::format("{}", v) << '\n';
}

namespace {

std::string cell(const std::optional<double>& v, const char* spec = "{:.6g}") {
  if (!v) return "*";
  if (std::isinf(*v)) return "inf";
  return fmt::format(fmt::runtime(spec), *v);
}

}  // namespace

void write_anova_text(std::ostream& out, const AnovaTable& t) {
  out << fmt::format("{:<20} {:>12} {:>4} {:>12} {:>12} {:>12} {:>10}\n", "Source of Variation", "SS", "df", "MS",
                     "F", "P-value", "F crit");
  for (const auto& r : t.rows()) {
    out << fmt::format("{:<20} {:>12} {:>4} {:>12} {:>12} {:>12} {:>10}\n", r.name, cell(r.ss), r.df, cell(r.ms),
                       cell(r.f, "{:.7g}"), cell(r.p, "{:.3g}"), cell(r.f_crit, "{:.7g}"));
  }
  out << fmt::format("alpha = {}\n", t.alpha());
  if (t.degenerate()) out << "note: within-cell variance is zero; F ratios are not finite\n";
  if (t.p_clamped()) out << "note: p-values below 1e-300 reported as 0\n";
}

void write_anova_csv(std::ostream& out, const AnovaTable& t) {
  out << "source,ss,df,ms,f,p,f_crit\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  for (const auto& r : t.rows())
    out << fmt::format("{},{},{},{},{},{},{}\n", r.name, r.ss, r.df, opt(r.ms), opt(r.f), opt(r.p), opt(r.f_crit));
}

// ---------------------------------------------------------------------------
// Delta report

DeltaReport delta_report(const std::map<std::string, RunSummary>& before,
                         const std::map<std::string, RunSummary>& after) {
  DeltaReport d;
  for (const auto& [model, b] : before) {
    auto it = after.find(model);
    if (it == after.end()) throw DataError(fmt::format("model '{}' missing from the after set", model));
    const auto& a = it->second;
    if (b.metrics.size() != a.metrics.size())
      throw DataError(fmt::format("model '{}': before and after carry different metrics", model));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [metric, mb] : b.metrics) {
      auto jt = a.metrics.find(metric);
      if (jt == a.metrics.end())
        throw DataError(fmt::format("model '{}': metric '{}' missing from the after set", model, metric));
      MetricDelta row{model, metric, mb.mean, jt->second.mean, mb.mean - jt->second.mean, std::nullopt};
      if (mb.mean != 0.0) row.relative_drop = row.drop / mb.mean;
      lo = std::min(lo, row.drop);
      hi = std::max(hi, row.drop);
      d.rows.push_back(row);
    }
    if (!b.metrics.empty()) d.drop_range[model] = {lo, hi};
  }
  for (const auto& [model, a] : after)
    if (!before.count(model)) throw DataError(fmt::format("model '{}' missing from the before set", model));
  return d;
}

void write_delta_text(std::ostream& out, const DeltaReport& d) {
  out << fmt::format("{:<12} {:<18} {:>9} {:>9} {:>9} {:>9}\n", "model", "metric", "before", "after", "drop",
                     "rel.drop");
  for (const auto& r : d.rows) {
    out << fmt::format("{:<12} {:<18} {:>9.4f} {:>9.4f} {:>9.4f} {:>9}\n", r.model, r.metric, r.before, r.after,
                       r.drop, r.relative_drop ? fmt::format("{:.1f}%", 100.0 * *r.relative_drop) : "n/a");
  }
  for (const auto& [model, range] : d.drop_range)
    out << fmt::format("{}: drop range {:.4f} .. {:.4f}\n", model, range.first, range.second);
}

void write_delta_csv(std::ostream& out, const DeltaReport& d) {
  out << "model,metric,before,after,drop,relative_drop\n";
  for (const auto& r : d.rows)
    out << fmt::format("{},{},{},{},{},{}\n", csv::quote(r.model), r.metric, r.before, r.after, r.drop,
                       r.relative_drop ? fmt::format("{}", *r.relative_drop) : std::string());
}

}  // namespace otopipe
