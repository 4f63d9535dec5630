#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otopipe/manifest.hpp"
#include "otopipe/splitting.hpp"

namespace otopipe {

// Average-hash bits per manifest frame position; nullopt where the image
// could not be read.
using FingerprintTable = std::vector<std::optional<std::uint64_t>>;

// Reads and fingerprints every included frame in parallel.
FingerprintTable compute_fingerprints(const DatasetManifest& m);

enum class DuplicateSearch {
  Auto,      // all pairs for small instances, blocked otherwise
  AllPairs,  // exhaustive test x train comparison
  Blocked,   // pigeonhole multi-index blocking
};

struct AuditOptions {
  int adjacency_window = 30;  // one second at 30 fps
  int dup_threshold = 5;      // of 64 hash bits
  DuplicateSearch search = DuplicateSearch::Auto;
};

// A (test frame, train frame) pair of manifest positions. `distance` is the
// frame-index gap for adjacency pairs and the Hamming distance for duplicates.
struct FramePair {
  std::size_t test = 0;
  std::size_t train = 0;
  int distance = 0;

  friend bool operator==(const FramePair&, const FramePair&) = default;
  friend auto operator<=>(const FramePair&, const FramePair&) = default;
};

struct LeakageReport {
  std::vector<PatientId> patient_overlap;
  std::vector<std::string> video_overlap;
  std::vector<FramePair> adjacency_pairs;
  std::vector<FramePair> duplicate_pairs;
  bool duplicates_checked = false;  // false when no fingerprints were given
  std::size_t test_frames = 0;
  std::size_t contaminated_test_frames = 0;
  double contamination_rate = 0.0;
  AuditOptions options;
};

// Throws DataError when the assignment does not partition the manifest's
// included frames.
void check_assignment(const DatasetManifest& m, const SplitAssignment& a);

LeakageReport audit_split(const DatasetManifest& m, const SplitAssignment& a, const AuditOptions& options,
                          const FingerprintTable* fingerprints = nullptr);

// Every (test, train) pair with Hamming distance <= threshold, sorted.
// Frames without a fingerprint are ignored.
std::vector<FramePair> duplicate_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                       const FingerprintTable& fingerprints, int threshold,
                                       DuplicateSearch search = DuplicateSearch::Auto);

struct GatePolicy {
  bool forbid_patient_overlap = true;
  std::optional<double> max_contamination;
};

struct GateResult {
  bool pass = true;
  std::vector<std::string> reasons;
};

GateResult gate(const LeakageReport& report, const GatePolicy& policy);

void write_leakage_text(std::ostream& out, const DatasetManifest& m, const LeakageReport& r);
// Columns kind,test,train,value. kind is patient | video | adjacent |
// duplicate | summary.
void write_leakage_csv(std::ostream& out, const DatasetManifest& m, const LeakageReport& r);

namespace serial {
std::vector<FramePair> duplicate_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                       const FingerprintTable& fingerprints, int threshold);
}  // namespace serial

}  // namespace otopipe
