#include "otopipe/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <fmt/core.h>

#include "otopipe/error.hpp"

namespace otopipe {

namespace {

// Below this many pixels a single image is processed on one thread.
constexpr std::size_t kParallelMinPixels = 1u << 16;

inline int clamp_index(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

GrayImage::GrayImage(int width, int height, std::uint8_t value) : width_(width), height_(height) {
  if (width < 1 || height < 1)
    throw UsageError(fmt::format("image dimensions must be positive, got {}x{}", width, height));
  data_.assign(static_cast<std::size_t>(width) * height, value);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 1 || height < 1)
    throw UsageError(fmt::format("image dimensions must be positive, got {}x{}", width, height));
  if (data_.size() != static_cast<std::size_t>(width) * height)
    throw UsageError(fmt::format("pixel buffer holds {} values, expected {}", data_.size(),
                                 static_cast<std::size_t>(width) * height));
}

GrayImage to_grayscale(const RgbImage& rgb) {
  if (rgb.width < 1 || rgb.height < 1) throw UsageError("cannot convert an empty image");
  const std::size_t n = static_cast<std::size_t>(rgb.width) * rgb.height;
  if (rgb.data.size() != 3 * n) throw UsageError("RGB buffer size does not match dimensions");
  std::vector<std::uint8_t> out(n);
  // Integer form of round(0.299 R + 0.587 G + 0.114 B), halves rounded up.
#pragma omp parallel for schedule(static) if (n >= kParallelMinPixels)
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned r = rgb.data[3 * i], g = rgb.data[3 * i + 1], b = rgb.data[3 * i + 2];
    const unsigned y = (299 * r + 587 * g + 114 * b + 500) / 1000;
    out[i] = static_cast<std::uint8_t>(std::min(y, 255u));
  }
  return GrayImage(rgb.width, rgb.height, std::move(out));
}

double laplacian_variance(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  if (w < 3 || h < 3)
    throw UsageError(fmt::format("laplacian_variance needs at least 3x3, got {}x{}", w, h));
  std::int64_t sum = 0, sum_sq = 0;
#pragma omp parallel for schedule(static) reduction(+ : sum, sum_sq) if (img.size() >= kParallelMinPixels)
  for (int y = 0; y < h; ++y) {
    const int up = clamp_index(y - 1, h - 1), down = clamp_index(y + 1, h - 1);
    std::int64_t row_sum = 0, row_sq = 0;
    for (int x = 0; x < w; ++x) {
      const int left = clamp_index(x - 1, w - 1), right = clamp_index(x + 1, w - 1);
      const int r = img.at(x, up) + img.at(x, down) + img.at(left, y) + img.at(right, y) -
                    4 * img.at(x, y);
      row_sum += r;
      row_sq += static_cast<std::int64_t>(r) * r;
    }
    sum += row_sum;
    sum_sq += row_sq;
  }
  const auto n = static_cast<__int128>(img.size());
  const __int128 num = n * sum_sq - static_cast<__int128>(sum) * sum;
  return static_cast<double>(num) / (static_cast<double>(img.size()) * static_cast<double>(img.size()));
}

double shannon_entropy(const GrayImage& img) {
  if (img.empty()) throw UsageError("shannon_entropy of an empty image");
  std::array<std::int64_t, 256> hist{};
  const auto px = img.pixels();
  const std::size_t n = px.size();
#pragma omp parallel if (n >= kParallelMinPixels)
  {
    std::array<std::int64_t, 256> local{};
#pragma omp for schedule(static) nowait
    for (std::size_t i = 0; i < n; ++i) ++local[px[i]];
#pragma omp critical(otopipe_entropy_hist)
    for (int b = 0; b < 256; ++b) hist[b] += local[b];
  }
  double h = 0.0;
  const double total = static_cast<double>(n);
  for (auto count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / total;
    h -= p * std::log2(p);
  }
  return std::clamp(h, 0.0, 8.0);
}

std::size_t circular_crop_kept(int width, int height) {
  const std::int64_t d = std::min(width, height);
  std::size_t kept = 0;
  for (int y = 0; y < height; ++y) {
    const std::int64_t dy = 2 * y - (height - 1);
    for (int x = 0; x < width; ++x) {
      const std::int64_t dx = 2 * x - (width - 1);
      if (dx * dx + dy * dy <= d * d) ++kept;
    }
  }
  return kept;
}

GrayImage circular_crop(const GrayImage& img, std::uint8_t fill) {
  GrayImage out = img;
  const int w = img.width(), h = img.height();
  // Doubled coordinates keep the half-pixel centre exact.
  const std::int64_t d = std::min(w, h);
#pragma omp parallel for schedule(static) if (img.size() >= kParallelMinPixels)
  for (int y = 0; y < h; ++y) {
    const std::int64_t dy = 2 * y - (h - 1);
    for (int x = 0; x < w; ++x) {
      const std::int64_t dx = 2 * x - (w - 1);
      if (dx * dx + dy * dy > d * d) out.at(x, y) = fill;
    }
  }
  return out;
}

GrayImage box_downsample(const GrayImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw UsageError("box_downsample target must be positive");
  const int w = img.width(), h = img.height();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_w) * out_h);
#pragma omp parallel for schedule(static) if (img.size() >= kParallelMinPixels)
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
      out[static_cast<std::size_t>(j) * out_w + i] = static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
    }
  }
  return GrayImage(out_w, out_h, std::move(out));
}

std::uint64_t hash_from_thumb(std::span<const std::uint8_t, kThumbSide * kThumbSide> thumb) {
  constexpr int block = kThumbSide / kHashSide;
  // Block sums share the denominator, so comparing sums against the grid
  // mean sum is exact: cell_sum * 64 > total.
  std::array<std::int64_t, kHashSide * kHashSide> cell{};
  for (int y = 0; y < kThumbSide; ++y)
    for (int x = 0; x < kThumbSide; ++x)
      cell[(y / block) * kHashSide + x / block] += thumb[static_cast<std::size_t>(y) * kThumbSide + x];
  std::int64_t total = 0;
  for (auto c : cell) total += c;
  std::uint64_t bits = 0;
  for (int b = 0; b < kHashSide * kHashSide; ++b)
    if (cell[b] * (kHashSide * kHashSide) > total) bits |= std::uint64_t{1} << b;
  return bits;
}

FrameFingerprint fingerprint(const GrayImage& img) {
  if (img.width() < kHashSide || img.height() < kHashSide)
    throw UsageError(fmt::format("fingerprint needs at least 8x8, got {}x{}", img.width(), img.height()));
  FrameFingerprint fp;
  const GrayImage thumb = box_downsample(img, kThumbSide, kThumbSide);
  std::copy(thumb.pixels().begin(), thumb.pixels().end(), fp.thumb.begin());
  fp.bits = hash_from_thumb(fp.thumb);
  return fp;
}

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }
int hamming(const FrameFingerprint& a, const FrameFingerprint& b) { return hamming(a.bits, b.bits); }

}  // namespace otopipe
