// Brute-force reference implementations shared by the unit tests and the
// acceptance binary.
#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "otopipe/imaging.hpp"
#include "otopipe/manifest.hpp"
#include "otopipe/stats.hpp"

namespace oracle {

using otopipe::GrayImage;
using otopipe::kNumClasses;
using otopipe::kThumbSide;
using Rational = boost::multiprecision::cpp_rational;

// Direct 3x3 convolution with clamped reads, then two-pass variance.
inline double laplacian_variance(const GrayImage& img) {
  static constexpr int kernel[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
  const int w = img.width(), h = img.height();
  std::vector<long double> response;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      long double r = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          r += kernel[dy + 1][dx + 1] * img.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1));
      response.push_back(r);
    }
  }
  long double mean = 0;
  for (auto r : response) mean += r;
  mean /= response.size();
  long double var = 0;
  for (auto r : response) var += (r - mean) * (r - mean);
  return static_cast<double>(var / response.size());
}

inline double entropy(const GrayImage& img) {
  std::map<int, long> counts;
  for (auto v : img.pixels()) ++counts[v];
  double h = 0;
  for (const auto& [v, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(img.size());
    h -= p * std::log2(p);
  }
  return h;
}

inline bool outside_circle(int w, int h, int x, int y) {
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  return std::hypot(x - cx, y - cy) > std::min(w, h) / 2.0;
}

// Block means of the documented cell rule, rounded half up.
inline std::vector<int> block_means(const GrayImage& img, int out_w, int out_h) {
  std::vector<int> out;
  for (int j = 0; j < out_h; ++j) {
    const int y0 = j * img.height() / out_h;
    const int y1 = std::max((j + 1) * img.height() / out_h, y0 + 1);
    for (int i = 0; i < out_w; ++i) {
      const int x0 = i * img.width() / out_w;
      const int x1 = std::max((i + 1) * img.width() / out_w, x0 + 1);
      long sum = 0, n = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += img.at(x, y), ++n;
      out.push_back(static_cast<int>(std::floor(static_cast<double>(sum) / n + 0.5)));
    }
  }
  return out;
}

inline std::uint64_t average_hash(const GrayImage& img) {
  const auto thumb_vals = block_means(img, kThumbSide, kThumbSide);
  GrayImage thumb(kThumbSide, kThumbSide);
  for (std::size_t i = 0; i < thumb_vals.size(); ++i) thumb.pixels()[i] = static_cast<std::uint8_t>(thumb_vals[i]);
  // 8x8 cell sums of 4x4 thumbnail blocks; compare means exactly as fractions.
  std::vector<long> sums(64, 0);
  for (int y = 0; y < kThumbSide; ++y)
    for (int x = 0; x < kThumbSide; ++x) sums[static_cast<std::size_t>((y / 4) * 8 + x / 4)] += thumb.at(x, y);
  long total = 0;
  for (auto s : sums) total += s;
  std::uint64_t bits = 0;
  for (int b = 0; b < 64; ++b)
    if (sums[static_cast<std::size_t>(b)] * 64 > total) bits |= std::uint64_t{1} << b;
  return bits;
}

inline int hamming(std::uint64_t a, std::uint64_t b) {
  int d = 0;
  for (int i = 0; i < 64; ++i) d += ((a >> i) & 1) != ((b >> i) & 1);
  return d;
}

// Correlation of one-hot truth and prediction matrices, from the covariance
// definition, in exact rationals. Returns (sign, squared value) or nullopt
// when a variance is zero.
inline std::optional<std::pair<int, Rational>> mcc(const std::vector<int>& truth, const std::vector<int>& pred) {
  const auto n = static_cast<std::int64_t>(truth.size());
  std::array<Rational, kNumClasses> mx, my;
  for (std::int64_t i = 0; i < n; ++i) {
    mx[truth[i]] += 1;
    my[pred[i]] += 1;
  }
  for (int k = 0; k < kNumClasses; ++k) {
    mx[k] /= n;
    my[k] /= n;
  }
  Rational cxy = 0, cxx = 0, cyy = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (int k = 0; k < kNumClasses; ++k) {
      const Rational x = Rational(truth[i] == k ? 1 : 0) - mx[k];
      const Rational y = Rational(pred[i] == k ? 1 : 0) - my[k];
      cxy += x * y;
      cxx += x * x;
      cyy += y * y;
    }
  if (cxx == 0 || cyy == 0) return std::nullopt;
  const int sign = cxy > 0 ? 1 : (cxy < 0 ? -1 : 0);
  return std::make_pair(sign, Rational(cxy * cxy / (cxx * cyy)));
}

// Mann-Whitney over all (positive, negative) pairs, ties count one half.
inline double auc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

struct ExactSS {
  Rational rows, cols, inter, within, total;
};

// Sums of squares from their definitions, exactly.
inline ExactSS anova(const otopipe::RawDesign& d) {
  const std::size_t a = d.values.size(), b = d.values[0].size(), n = d.values[0][0].size();
  std::vector<std::vector<Rational>> cell(a, std::vector<Rational>(b));
  std::vector<Rational> row(a), col(b);
  Rational grand = 0;
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      for (double x : d.values[i][j]) cell[i][j] += Rational(x);
      row[i] += cell[i][j];
      col[j] += cell[i][j];
      grand += cell[i][j];
      cell[i][j] /= n;
    }
  for (auto& r : row) r /= b * n;
  for (auto& c : col) c /= a * n;
  grand /= a * b * n;
  ExactSS s;
  for (std::size_t i = 0; i < a; ++i) s.rows += (row[i] - grand) * (row[i] - grand) * (b * n);
  for (std::size_t j = 0; j < b; ++j) s.cols += (col[j] - grand) * (col[j] - grand) * (a * n);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const Rational e = cell[i][j] - row[i] - col[j] + grand;
      s.inter += e * e * n;
      for (double x : d.values[i][j]) {
        s.within += (Rational(x) - cell[i][j]) * (Rational(x) - cell[i][j]);
        s.total += (Rational(x) - grand) * (Rational(x) - grand);
      }
    }
  return s;
}

}  // namespace oracle
