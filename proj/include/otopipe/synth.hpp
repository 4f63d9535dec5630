#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otopipe/audit.hpp"
#include "otopipe/evaluation.hpp"
#include "otopipe/imaging.hpp"
#include "otopipe/manifest.hpp"
#include "otopipe/pipeline.hpp"
#include "otopipe/splitting.hpp"
#include "otopipe/stats.hpp"

namespace otopipe {

// Frame model, per pixel before quantization:
//   128 + class_signal * C[class] + patient_signal * P[patient]
//       + temporal_noise * T[video][frame] + pixel_noise * N(0, 1)
// C, P and T are smooth unit-variance fields (Gaussian values on a
// field_grid x field_grid lattice, bilinearly upsampled). T follows
// T[f] = rho T[f-1] + sqrt(1 - rho^2) Z[f] with rho = temporal_correlation,
// so rho = 0 gives independent frames.
struct SynthConfig {
  int patients_per_class = 6;
  int videos_per_patient = 2;
  int frames_per_video = 60;
  int image_side = 64;
  double class_signal = 18.0;
  double patient_signal = 24.0;
  double temporal_noise = 16.0;
  double temporal_correlation = 0.97;
  double pixel_noise = 0.0;
  int field_grid = 6;
  std::uint64_t seed = 1;

  void validate() const;  // throws UsageError
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Renders every frame in memory, in manifest order.
struct SynthFrames {
  DatasetManifest manifest;  // paths are relative: <year-month>/<patient>/<video>/<index>.pgm
  std::vector<GrayImage> images;
};
SynthFrames render(const SynthConfig& config);

// Writes the frames as PGM files under out_dir and returns a manifest with
// absolute paths. Deterministic in the config (including its seed).
DatasetManifest generate(const SynthConfig& config, const std::filesystem::path& out_dir);

// 32x32 thumbnails per manifest frame; empty where unreadable or excluded.
using ThumbTable = std::vector<std::optional<std::array<std::uint8_t, kThumbSide * kThumbSide>>>;
ThumbTable compute_thumbs(const DatasetManifest& m);

// For each test frame, the `k` train frames with the smallest squared
// Euclidean thumbnail distance (ties by lower manifest position), nearest
// first. Entries are (squared distance, train position).
using NeighborList = std::vector<std::pair<std::int64_t, std::size_t>>;
std::vector<NeighborList> nearest_train(const ThumbTable& thumbs, std::span<const std::size_t> test,
                                        std::span<const std::size_t> train, int k);

struct ProbeResult {
  PredictionSet predictions;
  std::vector<std::string> warnings;
};

// Majority vote of the k nearest train frames; scores are vote fractions.
// Vote ties go to the class with more zero-distance neighbours, then the
// larger summed inverse distance, then the lower ordinal. k larger than the
// train side is clamped with a warning.
ProbeResult knn_probe(const DatasetManifest& m, const SplitAssignment& a, int k,
                      const ThumbTable* thumbs = nullptr);

// Predictions for several k from one neighbour search.
std::vector<ProbeResult> knn_probe_multi(const DatasetManifest& m, const SplitAssignment& a, std::span<const int> ks,
                                         const ThumbTable& thumbs);

struct ExperimentOptions {
  std::vector<int> ks = {1, 3, 5};  // one probe "model" per k; ks[0] is the headline
  AuditOptions audit;               // adjacency-only audit of every split
};

struct StrategyOutcome {
  SplitSpec spec;
  std::vector<SplitAssignment> splits;
  std::vector<PredictionSet> predictions;          // per k
  std::vector<std::vector<MetricsReport>> reports;  // per k, per run
  std::vector<RunSummary> summaries;               // per k
  std::vector<double> contamination;               // per run
};

struct InflationResult {
  SynthConfig config;
  ExperimentOptions options;
  DatasetManifest manifest;
  StrategyOutcome naive;
  StrategyOutcome grouped;
  DeltaReport delta;      // before = naive, after = grouped, per probe model
  RawDesign accuracy_design;  // rows: leakage condition, columns: probe, replicates: runs
  double accuracy_gap = 0;    // mean naive - mean grouped accuracy, headline probe
  double pooled_se = 0;       // sqrt(var_naive / n + var_grouped / n)
  bool adjacency_possible = true;  // false when every video has one frame

  std::string model_name(std::size_t k_index) const;
};

// generate -> neutral pipeline -> both split series -> k-NN probes ->
// evaluation -> run summaries -> delta report. Images go under work_dir.
InflationResult inflation_experiment(const SynthConfig& config, const SplitSpec& naive, const SplitSpec& grouped,
                                     const ExperimentOptions& options, const std::filesystem::path& work_dir);

namespace serial {
std::vector<NeighborList> nearest_train(const ThumbTable& thumbs, std::span<const std::size_t> test,
                                        std::span<const std::size_t> train, int k);
}  // namespace serial

}  // namespace otopipe
