#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace otopipe {

// Row-major 8-bit intensity image.
class GrayImage {
 public:
  GrayImage() = default;
  // Throws UsageError when either dimension is < 1.
  GrayImage(int width, int height, std::uint8_t value = 0);
  GrayImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const std::uint8_t> pixels() const { return data_; }
  std::span<std::uint8_t> pixels() { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // 3 * width * height

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline constexpr int kThumbSide = 32;
inline constexpr int kHashSide = 8;

struct FrameFingerprint {
  std::uint64_t bits = 0;  // bit (row * 8 + col) of the 8x8 grid
  std::array<std::uint8_t, kThumbSide * kThumbSide> thumb{};

  friend bool operator==(const FrameFingerprint&, const FrameFingerprint&) = default;
};

// BT.601 luma, round(0.299 R + 0.587 G + 0.114 B). Throws UsageError on an
// empty image.
GrayImage to_grayscale(const RgbImage& rgb);

// Population variance of the 4-neighbour Laplacian response
// [[0,1,0],[1,-4,1],[0,1,0]] under replicate padding. Exact integer
// accumulation. Requires width, height >= 3 (UsageError otherwise).
double laplacian_variance(const GrayImage& img);

// Entropy in bits of the 256-bin intensity histogram, in [0, 8].
double shannon_entropy(const GrayImage& img);

// Pixels farther than min(w, h) / 2 from ((w-1)/2, (h-1)/2) are set to fill.
GrayImage circular_crop(const GrayImage& img, std::uint8_t fill = 0);
// Number of pixels the crop keeps.
std::size_t circular_crop_kept(int width, int height);

// Box-filter resample to out_w x out_h; output cell (i, j) averages the
// source block [floor(i*W/out_w), max(floor((i+1)*W/out_w), that+1)) and
// likewise for rows, rounded half-up.
GrayImage box_downsample(const GrayImage& img, int out_w, int out_h);

// 32x32 thumbnail plus the 64-bit average hash of its 8x8 block means.
// Requires width, height >= 8 (UsageError otherwise).
FrameFingerprint fingerprint(const GrayImage& img);

// Average hash of a 32x32 thumbnail (bit set iff block mean > grid mean).
std::uint64_t hash_from_thumb(std::span<const std::uint8_t, kThumbSide * kThumbSide> thumb);

int hamming(std::uint64_t a, std::uint64_t b);
int hamming(const FrameFingerprint& a, const FrameFingerprint& b);

// Reference implementations without OpenMP, kept for equivalence tests and
// the kernel benchmark.
namespace serial {
double laplacian_variance(const GrayImage& img);
double shannon_entropy(const GrayImage& img);
GrayImage circular_crop(const GrayImage& img, std::uint8_t fill = 0);
GrayImage box_downsample(const GrayImage& img, int out_w, int out_h);
}  // namespace serial

}  // namespace otopipe
