// Single-threaded reference kernels. They must stay free of OpenMP so the
// parallel versions in imaging.cpp can be checked against them.
#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/core.h>

#include "otopipe/error.hpp"
#include "otopipe/audit.hpp"
#include "otopipe/imaging.hpp"
#include "otopipe/synth.hpp"

namespace otopipe::serial {

double laplacian_variance(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  if (w < 3 || h < 3)
    throw UsageError(fmt::format("laplacian_variance needs at least 3x3, got {}x{}", w, h));
  std::int64_t sum = 0, sum_sq = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int up = std::max(y - 1, 0), down = std::min(y + 1, h - 1);
      const int left = std::max(x - 1, 0), right = std::min(x + 1, w - 1);
      const int r = img.at(x, up) + img.at(x, down) + img.at(left, y) + img.at(right, y) -
                    4 * img.at(x, y);
      sum += r;
      sum_sq += static_cast<std::int64_t>(r) * r;
    }
  }
  const auto n = static_cast<__int128>(img.size());
  const __int128 num = n * sum_sq - static_cast<__int128>(sum) * sum;
  return static_cast<double>(num) / (static_cast<double>(img.size()) * static_cast<double>(img.size()));
}

double shannon_entropy(const GrayImage& img) {
  if (img.empty()) throw UsageError("shannon_entropy of an empty image");
  std::array<std::int64_t, 256> hist{};
  for (auto v : img.pixels()) ++hist[v];
  double h = 0.0;
  const double total = static_cast<double>(img.size());
  for (auto count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / total;
    h -= p * std::log2(p);
  }
  return std::clamp(h, 0.0, 8.0);
}

GrayImage circular_crop(const GrayImage& img, std::uint8_t fill) {
  GrayImage out = img;
  const int w = img.width(), h = img.height();
  const std::int64_t d = std::min(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int64_t dx = 2 * x - (w - 1), dy = 2 * y - (h - 1);
      if (dx * dx + dy * dy > d * d) out.at(x, y) = fill;
    }
  }
  return out;
}

GrayImage box_downsample(const GrayImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw UsageError("box_downsample target must be positive");
  const int w = img.width(), h = img.height();
  GrayImage out(out_w, out_h);
  for (int j = 0; j < out_h; ++j) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(j) * h / out_h);
    const int y1 = std::max(static_cast<int>(static_cast<std::int64_t>(j + 1) * h / out_h), y0 + 1);
    for (int i = 0; i < out_w; ++i) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(i) * w / out_w);
      const int x1 = std::max(static_cast<int>(static_cast<std::int64_t>(i + 1) * w / out_w), x0 + 1);
      std::int64_t sum = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += img.at(x, y);
      const std::int64_t count = static_cast<std::int64_t>(y1 - y0) * (x1 - x0);
      out.at(i, j) = static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
    }
  }
  return out;
}


std::vector<FramePair> duplicate_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                       const FingerprintTable& fingerprints, int threshold) {
  std::vector<FramePair> out;
  for (auto t : test) {
    if (!fingerprints[t]) continue;
    for (auto r : train) {
      if (!fingerprints[r]) continue;
      const int d = hamming(*fingerprints[t], *fingerprints[r]);
      if (d <= threshold) out.push_back(FramePair{t, r, d});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NeighborList> nearest_train(const ThumbTable& thumbs, std::span<const std::size_t> test,
                                        std::span<const std::size_t> train, int k) {
  std::vector<NeighborList> out;
  for (auto t : test) {
    NeighborList all;
    if (thumbs[t]) {
      for (auto r : train) {
        if (!thumbs[r]) continue;
        std::int64_t d2 = 0;
        for (std::size_t i = 0; i < thumbs[t]->size(); ++i) {
          const std::int64_t d = static_cast<std::int64_t>((*thumbs[t])[i]) - (*thumbs[r])[i];
          d2 += d * d;
        }
        all.emplace_back(d2, r);
      }
      std::sort(all.begin(), all.end());
      if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
    }
    out.push_back(std::move(all));
  }
  return out;
}

}  // namespace otopipe::serial
