#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace otopipe {

// Ordinals are the serialization order and match the per-class tables, with
// Normal as class 3.
enum class ClassLabel : std::uint8_t {
  ChronicOtitisMedia = 0,
  Earwax = 1,
  Myringosclerosis = 2,
  Normal = 3,
};

inline constexpr int kNumClasses = 4;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels = {
    ClassLabel::ChronicOtitisMedia, ClassLabel::Earwax, ClassLabel::Myringosclerosis,
    ClassLabel::Normal};

constexpr int ordinal(ClassLabel l) { return static_cast<int>(l); }
std::string_view label_name(ClassLabel l);
std::optional<ClassLabel> label_from_ordinal(long long ordinal);
// Accepts canonical names, ordinals, and loose spellings such as
// "chronic otitis media", "ear wax" or "ear_wax" (case-insensitive).
std::optional<ClassLabel> parse_label(std::string_view text);

using PatientId = std::string;

struct CapturePeriod {
  int year = 0;
  int month = 0;  // 1..12; 0 when unknown

  friend bool operator==(const CapturePeriod&, const CapturePeriod&) = default;
  friend auto operator<=>(const CapturePeriod&, const CapturePeriod&) = default;
};

std::string format_period(CapturePeriod p);
// "YYYY-MM", "YYYY_MM" or "YYYYMM"; nullopt otherwise.
std::optional<CapturePeriod> parse_period(std::string_view text);

struct VideoRecord {
  std::string video_id;
  PatientId patient;
  ClassLabel label = ClassLabel::Normal;
  CapturePeriod capture_period;
  std::int64_t frame_count = 0;
  int width = 1280;
  int height = 1024;
  double fps = 30.0;

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

// Reason codes carried by excluded frames.
namespace reason {
inline constexpr std::string_view kTrim = "trim";
inline constexpr std::string_view kUnreadable = "unreadable";
inline constexpr std::string_view kQuality = "quality";
}  // namespace reason

struct FrameRecord {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::string path;
  std::optional<double> laplacian_variance;
  std::optional<double> shannon_entropy;
  bool included = true;
  std::string reason;  // empty while included

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

// "<video_id>:<frame_index>", the id used in split and prediction files.
std::string frame_id(const FrameRecord& f);
std::string frame_id(std::string_view video_id, std::int64_t frame_index);

struct DatasetManifest {
  std::vector<VideoRecord> videos;
  std::vector<FrameRecord> frames;

  // Frame totals per class (all frames, included or not).
  std::array<std::int64_t, kNumClasses> label_counts() const;
  // Like label_counts() restricted to included frames.
  std::array<std::int64_t, kNumClasses> included_label_counts() const;

  const VideoRecord* find_video(std::string_view video_id) const;
  std::size_t included_count() const;

  // Sorts videos by (patient, video_id) and frames by (patient, video_id,
  // frame_index); frames of unknown videos go last.
  void canonicalize();

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Index of each frame's video inside `m.videos` (SIZE_MAX for unknown ids).
std::vector<std::size_t> frame_video_index(const DatasetManifest& m);

// ---------------------------------------------------------------------------
// Ingestion

struct IngestReport {
  // Videos on disk with no diagnosis row. They are left out of the manifest.
  std::vector<std::string> orphan_videos;
  // Diagnosis rows with no frames on disk.
  std::vector<std::string> missing_videos;
  // Files skipped because their name or extension is not a frame image.
  std::vector<std::string> skipped_files;
};

struct IngestResult {
  DatasetManifest manifest;
  IngestReport report;
};

// Walks <root>/<year-month>/<patient>/<video>/<index>.<ext> (ext pgm, ppm)
// and joins the diagnosis table (columns patient_id, video_id, label).
// Throws DataError on unreadable root, unknown labels or duplicate frames.
IngestResult ingest_tree(const std::filesystem::path& root,
                         const std::filesystem::path& diagnosis_table);

// Same join, but frame locations come from a mapping table with columns
// (path, patient_id, video_id, frame_index) and optional period. Relative
// paths resolve against the mapping file's directory.
IngestResult ingest_mapping(const std::filesystem::path& mapping_table,
                            const std::filesystem::path& diagnosis_table);

// ---------------------------------------------------------------------------
// Validation

enum class Severity { Error, Warning };

struct Violation {
  Severity severity = Severity::Error;
  std::string entity;  // e.g. "frame V01:7", "video V01", "patient P3"
  std::string rule;    // short rule code, e.g. "unknown-video"
  std::string message;
};

// Never throws. Empty iff every manifest invariant holds; a patient with
// videos of different labels is reported as a Warning.
std::vector<Violation> validate(const DatasetManifest& m);
bool has_errors(const std::vector<Violation>& v);

// ---------------------------------------------------------------------------
// Serialization: "otopipe-manifest v1" header, one tab-separated record per
// line, "end" trailer with record counts.

inline constexpr std::string_view kManifestHeader = "otopipe-manifest v1";

void write_manifest(std::ostream& out, const DatasetManifest& m);
DatasetManifest read_manifest(std::istream& in, std::string_view source = "<stream>");
void save(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load(const std::filesystem::path& path);
std::string to_string(const DatasetManifest& m);

}  // namespace otopipe
