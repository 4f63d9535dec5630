#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "otopipe/manifest.hpp"

namespace otopipe {

enum class SplitStrategy { NaiveFrame, GroupedPatient };

std::string_view strategy_name(SplitStrategy s);  // "naive" | "grouped"
SplitStrategy parse_strategy(std::string_view text);  // throws UsageError

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::GroupedPatient;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  int run_count = 11;

  void validate() const;  // throws UsageError
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

inline constexpr int kClassCoverageRetries = 100;

// Frames are referenced by their position in DatasetManifest::frames. Both
// lists are sorted ascending.
struct SplitAssignment {
  SplitSpec spec;
  int run_index = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  int attempts = 1;  // grouped split draws used to reach class coverage

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

// Shuffles the included frames with the (seed, run_index) stream and sends
// the first ceil(n * test_fraction) to test (at least one frame per side).
// Throws DataError with fewer than 2 included frames.
SplitAssignment split_naive_frame(const DatasetManifest& m, const SplitSpec& spec, int run_index);

// Shuffles patients and moves them to test until the test side first holds
// at least test_fraction of the included frames, keeping one patient for
// train. Redraws (sub-seed 1, 2, ...) until every class with included frames
// appears in train, up to kClassCoverageRetries draws. Throws DataError with
// fewer than 2 patients or when coverage cannot be reached.
SplitAssignment split_grouped_patient(const DatasetManifest& m, const SplitSpec& spec, int run_index);

// Dispatches on spec.strategy.
SplitAssignment split(const DatasetManifest& m, const SplitSpec& spec, int run_index);

// run_count assignments with run_index 0, 1, ...
std::vector<SplitAssignment> run_series(const DatasetManifest& m, const SplitSpec& spec);

// Patients owning at least one frame of the given positions.
std::vector<PatientId> patients_of(const DatasetManifest& m, const std::vector<std::size_t>& frames);

// Delimited text: "# split strategy=... test_fraction=... seed=... run_count=..."
// then header frame_id,run_index,side and one line per assigned frame.
void write_splits(std::ostream& out, const DatasetManifest& m, const std::vector<SplitAssignment>& runs);
std::vector<SplitAssignment> read_splits(std::istream& in, const DatasetManifest& m,
                                         std::string_view source = "<stream>");

}  // namespace otopipe
