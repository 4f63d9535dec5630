#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otopipe/manifest.hpp"

namespace otopipe {

// A frame passes a policy when its score is >= the cutoff. Absolute policies
// use `value` directly; percentile policies use the per-video percentile
// (linear interpolation between order statistics) of the candidate scores.
struct QualityPolicy {
  enum class Kind { Absolute, Percentile };
  Kind kind = Kind::Percentile;
  double value = 25.0;

  static QualityPolicy absolute(double threshold) { return {Kind::Absolute, threshold}; }
  static QualityPolicy percentile(double q) { return {Kind::Percentile, q}; }

  friend bool operator==(const QualityPolicy&, const QualityPolicy&) = default;
};

struct PipelineConfig {
  double trim_fraction = 0.10;  // dropped at each end of every video
  QualityPolicy laplacian = QualityPolicy::percentile(25.0);
  QualityPolicy entropy = QualityPolicy::percentile(25.0);
  bool crop_enabled = true;
  std::uint8_t fill = 0;

  // Throws UsageError on out-of-range fields.
  void validate() const;

  // trim 0, absolute thresholds 0, crop off: every readable frame survives.
  static PipelineConfig neutral();

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

// Percentile q in [0, 100] of `values` by linear interpolation on (n - 1) q / 100.
double percentile(std::vector<double> values, double q);

// Drops floor(n * fraction) entries from each end of sorted indices. A
// result that would be empty keeps the middle entry instead.
std::vector<std::int64_t> trim(std::span<const std::int64_t> sorted_indices, double fraction);

// Resets every frame to included, then excludes trimmed frames (reason "trim").
DatasetManifest apply_trim(const DatasetManifest& m, double fraction);

// Fills laplacian_variance and shannon_entropy for every included frame from
// its grayscale, uncropped image. Frames that cannot be read are excluded with
// reason "unreadable". Frames are scored in parallel.
DatasetManifest score_frames(const DatasetManifest& m);

struct VideoFilterStats {
  std::string video_id;
  std::int64_t raw = 0;
  std::int64_t dropped_trim = 0;
  std::int64_t dropped_unreadable = 0;
  std::int64_t dropped_quality = 0;
  std::int64_t kept = 0;
  std::optional<double> laplacian_cutoff;
  std::optional<double> entropy_cutoff;
};

struct PipelineReport {
  std::int64_t total = 0;
  std::int64_t kept = 0;
  std::int64_t dropped_trim = 0;
  std::int64_t dropped_quality = 0;
  std::int64_t dropped_unreadable = 0;
  std::vector<VideoFilterStats> videos;
  std::vector<std::string> warnings;

  bool conserved() const {
    return kept + dropped_trim + dropped_quality + dropped_unreadable == total;
  }
};

// Tallies a processed manifest by exclusion reason. Per-video cutoffs are
// left empty. Throws DataError on an unknown reason code.
PipelineReport tally(const DatasetManifest& m);

struct FilterResult {
  DatasetManifest manifest;
  PipelineReport report;
};

// Keeps a scored frame iff it passes both the Laplacian and the entropy
// policy. Throws DataError if an included frame has no scores.
FilterResult filter_frames(const DatasetManifest& scored, const PipelineConfig& config);

// Writes circular crops of the included frames to
// <out_dir>/<year-month>/<patient>/<video>/<index>.pgm and returns the
// manifest with paths pointing at them.
DatasetManifest crop_frames(const DatasetManifest& m, std::uint8_t fill,
                            const std::filesystem::path& out_dir);

struct PipelineResult {
  DatasetManifest manifest;
  PipelineReport report;
};

// trim -> score -> filter -> crop (when enabled). Throws DataError when
// out_dir is needed and cannot be written.
PipelineResult run_pipeline(const DatasetManifest& raw, const PipelineConfig& config,
                            const std::filesystem::path& out_dir);

void write_report_text(std::ostream& out, const PipelineReport& r);
void write_report_csv(std::ostream& out, const PipelineReport& r);

}  // namespace otopipe
