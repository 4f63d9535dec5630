#include <doctest.h>

#include <cmath>
#include <sstream>

#include "otopipe/error.hpp"
#include "otopipe/rng.hpp"
#include "otopipe/stats.hpp"
#include "oracles.hpp"

using namespace otopipe;

namespace {

// Per-cell summaries of the leakage comparison (six runs per cell).
FactorialDesign published_design() {
  FactorialDesign d;
  d.row_levels = {"With leakage", "Without leakage"};
  d.col_levels = {"Swin v1", "Swin v2", "ResNet 50"};
  const double mean[2][3] = {{0.990736, 1.0, 0.99561}, {0.837967, 0.842163, 0.815268}};
  const double var[2][3] = {{3.1e-5, 0.0, 1.45e-6}, {0.003306, 0.003373, 0.000776}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) d.cells.push_back(CellSummary{6, 6 * mean[i][j], mean[i][j], var[i][j]});
  return d;
}

RawDesign random_raw(SplitMix64& rng, std::size_t a, std::size_t b, std::size_t n) {
  RawDesign d;
  for (std::size_t i = 0; i < a; ++i) d.row_levels.push_back("r" + std::to_string(i));
  for (std::size_t j = 0; j < b; ++j) d.col_levels.push_back("c" + std::to_string(j));
  d.values.assign(a, std::vector<std::vector<double>>(b));
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < n; ++k)
        d.values[i][j].push_back(0.8 + 0.05 * static_cast<double>(i) + 0.1 * rng.uniform());
  return d;
}

void check_close(double got, const oracle::Rational& expect) {
  const double e = expect.convert_to<double>();
  CHECK(std::abs(got - e) <= 1e-10 * std::max(1e-6, std::abs(e)));
}

}  // namespace

TEST_CASE("published two-factor table") {
  const auto t = anova_from_summaries(published_design());
  const auto& s = t.row(AnovaSource::Sample);
  const auto& c = t.row(AnovaSource::Columns);
  const auto& i = t.row(AnovaSource::Interaction);
  const auto& w = t.row(AnovaSource::Within);
  const auto& total = t.row(AnovaSource::Total);
  // Inputs are rounded to six places, so agreement is to about 1e-5 relative.
  CHECK(s.ss == doctest::Approx(0.241029).epsilon(1e-5));
  CHECK(c.ss == doctest::Approx(0.001478).epsilon(1e-3));
  CHECK(i.ss == doctest::Approx(0.001292).epsilon(1e-3));
  CHECK(w.ss == doctest::Approx(0.037438).epsilon(1e-4));
  CHECK(total.ss == doctest::Approx(0.281238).epsilon(1e-4));
  CHECK(s.df == 1);
  CHECK(c.df == 2);
  CHECK(i.df == 2);
  CHECK(w.df == 30);
  CHECK(total.df == 35);
  CHECK(*w.ms == doctest::Approx(0.001248).epsilon(1e-3));
  CHECK(*s.f == doctest::Approx(193.1412).epsilon(1e-4));
  CHECK(*c.f == doctest::Approx(0.592026).epsilon(1e-4));
  CHECK(*i.f == doctest::Approx(0.517820).epsilon(1e-4));
  CHECK(*s.p == doctest::Approx(1.31e-14).epsilon(1e-2));
  CHECK(*c.p == doctest::Approx(0.559539).epsilon(1e-4));
  CHECK(*i.p == doctest::Approx(0.601047).epsilon(1e-4));
  CHECK(*s.f_crit == doctest::Approx(4.170877).epsilon(1e-6));
  CHECK(*c.f_crit == doctest::Approx(3.31583).epsilon(1e-5));
  CHECK(*i.f_crit == doctest::Approx(3.31583).epsilon(1e-5));
  CHECK_FALSE(w.f.has_value());
  CHECK_FALSE(t.degenerate());
  CHECK(*s.p < 0.05);
  CHECK(*c.p > 0.05);
  CHECK(*i.p > 0.05);
}

TEST_CASE("F distribution") {
  CHECK(f_crit(0.05, 1, 30) == doctest::Approx(4.1708768).epsilon(1e-7));
  CHECK(f_crit(0.05, 2, 30) == doctest::Approx(3.3158295).epsilon(1e-7));
  for (double d : {1.0, 2.0, 5.0, 30.0, 200.0}) CHECK(f_cdf(1.0, d, d) == doctest::Approx(0.5).epsilon(1e-12));
  SplitMix64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const double d1 = 1 + static_cast<double>(rng.below(20));
    const double d2 = 1 + static_cast<double>(rng.below(60));
    const double alpha = 0.001 + 0.5 * rng.uniform();
    const double x = f_crit(alpha, d1, d2);
    CHECK(f_sf(x, d1, d2) == doctest::Approx(alpha).epsilon(1e-8));
    CHECK(f_cdf(x, d1, d2) + f_sf(x, d1, d2) == doctest::Approx(1.0).epsilon(1e-12));
  }
  // F(1, d) is the square of Student t with d degrees of freedom; for d = 1
  // that is Cauchy, so P(F > 1) = 1/2 and P(F > 3) = 1/3.
  CHECK(f_sf(3.0, 1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // F(2, 2): P(F <= x) = x / (1 + x).
  CHECK(f_cdf(4.0, 2, 2) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(f_cdf(0.0, 3, 4) == 0.0);
  CHECK(regularized_beta(0.3, 1, 1) == doctest::Approx(0.3));
  CHECK_THROWS_AS((void)f_crit(0.0, 1, 1), UsageError);
  CHECK_THROWS_AS((void)f_cdf(1.0, 0, 1), UsageError);
}

TEST_CASE("ANOVA matches exact sums of squares") {
  SplitMix64 rng(101);
  for (int k = 0; k < 100; ++k) {
    const std::size_t a = 2 + rng.below(2), b = 2 + rng.below(3), n = 2 + rng.below(7);
    const auto d = random_raw(rng, a, b, n);
    const auto t = anova_from_raw(d);
    const auto e = oracle::anova(d);
    check_close(t.row(AnovaSource::Sample).ss, e.rows);
    check_close(t.row(AnovaSource::Columns).ss, e.cols);
    check_close(t.row(AnovaSource::Interaction).ss, e.inter);
    check_close(t.row(AnovaSource::Within).ss, e.within);
    check_close(t.row(AnovaSource::Total).ss, e.total);
    CHECK(e.rows + e.cols + e.inter + e.within == e.total);
    CHECK(t.row(AnovaSource::Within).df == static_cast<int>(a * b * (n - 1)));
    const auto& s = t.row(AnovaSource::Sample);
    CHECK(*s.f == doctest::Approx(*s.ms / *t.row(AnovaSource::Within).ms));
    CHECK(*s.p == doctest::Approx(f_sf(*s.f, s.df, t.row(AnovaSource::Within).df)));
  }
}

TEST_CASE("raw data and cell summaries agree") {
  SplitMix64 rng(12);
  for (int k = 0; k < 30; ++k) {
    const auto d = random_raw(rng, 2, 3, 2 + rng.below(7));
    const auto from_raw = anova_from_raw(d);
    const auto from_cells = anova_from_summaries(summarize_design(d));
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(from_raw.rows()[r].ss == doctest::Approx(from_cells.rows()[r].ss).epsilon(1e-10));
      CHECK(from_raw.rows()[r].df == from_cells.rows()[r].df);
    }
  }
}

TEST_CASE("F and p are invariant under affine rescaling") {
  SplitMix64 rng(13);
  for (int k = 0; k < 30; ++k) {
    auto d = random_raw(rng, 2, 3, 6);
    const auto base = anova_from_raw(d);
    const double shift = rng.uniform() * 10 - 5, scale = 0.1 + rng.uniform() * 10;
    for (auto& row : d.values)
      for (auto& cell : row)
        for (auto& x : cell) x = scale * x + shift;
    const auto moved = anova_from_raw(d);
    for (auto src : {AnovaSource::Sample, AnovaSource::Columns, AnovaSource::Interaction}) {
      CHECK(*moved.row(src).f == doctest::Approx(*base.row(src).f).epsilon(1e-7));
      CHECK(*moved.row(src).p == doctest::Approx(*base.row(src).p).epsilon(1e-6));
      CHECK(moved.row(src).ss == doctest::Approx(scale * scale * base.row(src).ss).epsilon(1e-7));
    }
  }
}

TEST_CASE("degenerate and invalid designs") {
  RawDesign d;
  d.row_levels = {"a", "b"};
  d.col_levels = {"x", "y"};
  d.values = {{{1, 1}, {1, 1}}, {{1, 1}, {1, 1}}};
  const auto flat = anova_from_raw(d);
  CHECK(flat.degenerate());
  CHECK_FALSE(flat.row(AnovaSource::Sample).f.has_value());
  CHECK_FALSE(flat.row(AnovaSource::Sample).p.has_value());
  d.values = {{{1, 1}, {1, 1}}, {{2, 2}, {2, 2}}};
  const auto separated = anova_from_raw(d);
  CHECK(separated.degenerate());
  CHECK(std::isinf(*separated.row(AnovaSource::Sample).f));
  CHECK(*separated.row(AnovaSource::Sample).p == 0.0);
  std::ostringstream text;
  write_anova_text(text, separated);
  CHECK(text.str().find("not finite") != std::string::npos);

  d.values = {{{1, 2}, {1, 2, 3}}, {{1, 2}, {1, 2}}};
  CHECK_THROWS_AS((void)anova_from_raw(d), DataError);
  d.values = {{{1}, {1}}, {{2}, {2}}};
  CHECK_THROWS_AS((void)anova_from_raw(d), DataError);
  d.row_levels = {"a"};
  d.values = {{{1, 2}, {1, 2}}};
  CHECK_THROWS_AS((void)anova_from_raw(d), DataError);
}

TEST_CASE("design files") {
  std::istringstream cells(
      "row_level,col_level,count,mean,variance\n"
      "With leakage,Swin v1,6,0.990736,3.1E-05\n"
      "With leakage,Swin v2,6,1,0\n"
      "With leakage,ResNet 50,6,0.99561,1.45E-06\n"
      "Without leakage,Swin v1,6,0.837967,0.003306\n"
      "Without leakage,Swin v2,6,0.842163,0.003373\n"
      "Without leakage,ResNet 50,6,0.815268,0.000776\n");
  const auto d = read_summary_design(cells);
  CHECK(d.row_levels == published_design().row_levels);
  CHECK(d.col_levels == published_design().col_levels);
  CHECK(*anova_from_summaries(d).row(AnovaSource::Sample).f == doctest::Approx(193.1412).epsilon(1e-4));

  std::istringstream missing("row_level,col_level,count,mean,variance\na,x,2,1,0\na,y,2,1,0\nb,x,2,1,0\n");
  CHECK_THROWS_AS((void)read_summary_design(missing), DataError);

  SplitMix64 rng(1);
  const auto raw = random_raw(rng, 2, 3, 4);
  std::stringstream s;
  write_raw_design(s, raw);
  const auto back = read_raw_design(s);
  CHECK(back.row_levels == raw.row_levels);
  CHECK(back.col_levels == raw.col_levels);
  CHECK(anova_from_raw(back).row(AnovaSource::Total).ss ==
        doctest::Approx(anova_from_raw(raw).row(AnovaSource::Total).ss).epsilon(1e-12));

  std::ostringstream table;
  write_anova_csv(table, anova_from_raw(raw));
  CHECK(table.str().rfind("source,ss,df,ms,f,p,f_crit\n", 0) == 0);
}

TEST_CASE("before and after deltas") {
  auto one = [](double accuracy, double mcc) {
    RunSummary s;
    s.metrics["accuracy"] = summarize_values({accuracy});
    s.metrics["mcc"] = summarize_values({mcc});
    return s;
  };
  const std::map<std::string, RunSummary> before{{"Swin v2", one(1.0, 1.0)}};
  const std::map<std::string, RunSummary> after{{"Swin v2", one(0.83, 0.70)}};
  const auto d = delta_report(before, after);
  REQUIRE(d.rows.size() == 2);
  CHECK(d.rows[0].metric == "accuracy");
  CHECK(d.rows[0].drop == doctest::Approx(0.17));
  CHECK(*d.rows[0].relative_drop == doctest::Approx(0.17));
  CHECK(d.drop_range.at("Swin v2").first == doctest::Approx(0.17));
  CHECK(d.drop_range.at("Swin v2").second == doctest::Approx(0.30));

  const auto zero = delta_report({{"m", one(0.0, 0.0)}}, {{"m", one(0.0, 0.0)}});
  CHECK_FALSE(zero.rows[0].relative_drop.has_value());
  CHECK_THROWS_AS((void)delta_report(before, {{"other", one(0.8, 0.6)}}), DataError);
  RunSummary partial;
  partial.metrics["accuracy"] = summarize_values({0.8});
  partial.metrics["f1"] = summarize_values({0.8});
  CHECK_THROWS_AS((void)delta_report(before, {{"Swin v2", partial}}), DataError);

  std::ostringstream text, table;
  write_delta_text(text, d);
  write_delta_csv(table, d);
  CHECK(text.str().find("drop range") != std::string::npos);
  CHECK(table.str().find("Swin v2") != std::string::npos);
}
