#include "otopipe/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"

namespace fs = std::filesystem;

namespace otopipe {

// ---------------------------------------------------------------------------
// Labels and periods

std::string_view label_name(ClassLabel l) {
  switch (l) {
    case ClassLabel::ChronicOtitisMedia: return "ChronicOtitisMedia";
    case ClassLabel::Earwax: return "Earwax";
    case ClassLabel::Myringosclerosis: return "Myringosclerosis";
    case ClassLabel::Normal: return "Normal";
  }
  return "?";
}

std::optional<ClassLabel> label_from_ordinal(long long ordinal) {
  if (ordinal < 0 || ordinal >= kNumClasses) return std::nullopt;
  return static_cast<ClassLabel>(ordinal);
}

std::optional<ClassLabel> parse_label(std::string_view text) {
  std::string key;
  for (char c : text)
    if (std::isalnum(static_cast<unsigned char>(c)))
      key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key.size() == 1 && key[0] >= '0' && key[0] <= '3') return label_from_ordinal(key[0] - '0');
  static const std::map<std::string, ClassLabel, std::less<>> names = {
      {"chronicotitismedia", ClassLabel::ChronicOtitisMedia},
      {"com", ClassLabel::ChronicOtitisMedia},
      {"earwax", ClassLabel::Earwax},
      {"cerumen", ClassLabel::Earwax},
      {"myringosclerosis", ClassLabel::Myringosclerosis},
      {"normal", ClassLabel::Normal},
  };
  if (auto it = names.find(key); it != names.end()) return it->second;
  return std::nullopt;
}

std::string format_period(CapturePeriod p) { return fmt::format("{:04d}-{:02d}", p.year, p.month); }

std::optional<CapturePeriod> parse_period(std::string_view text) {
  std::string digits;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits.push_back(c);
    } else if ((c == '-' || c == '_') && i == 4) {
      continue;
    } else {
      return std::nullopt;
    }
  }
  if (digits.size() != 6) return std::nullopt;
  CapturePeriod p{std::stoi(digits.substr(0, 4)), std::stoi(digits.substr(4, 2))};
  if (p.month < 0 || p.month > 12) return std::nullopt;
  return p;
}

// ---------------------------------------------------------------------------
// DatasetManifest

std::string frame_id(std::string_view video_id, std::int64_t frame_index) {
  return fmt::format("{}:{}", video_id, frame_index);
}

std::string frame_id(const FrameRecord& f) { return frame_id(f.video_id, f.frame_index); }

const VideoRecord* DatasetManifest::find_video(std::string_view video_id) const {
  for (const auto& v : videos)
    if (v.video_id == video_id) return &v;
  return nullptr;
}

std::vector<std::size_t> frame_video_index(const DatasetManifest& m) {
  std::unordered_map<std::string_view, std::size_t> by_id;
  by_id.reserve(m.videos.size());
  for (std::size_t i = 0; i < m.videos.size(); ++i) by_id.emplace(m.videos[i].video_id, i);
  std::vector<std::size_t> out(m.frames.size(), SIZE_MAX);
  for (std::size_t i = 0; i < m.frames.size(); ++i)
    if (auto it = by_id.find(m.frames[i].video_id); it != by_id.end()) out[i] = it->second;
  return out;
}

std::array<std::int64_t, kNumClasses> DatasetManifest::label_counts() const {
  std::array<std::int64_t, kNumClasses> counts{};
  auto vid = frame_video_index(*this);
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (vid[i] != SIZE_MAX) ++counts[ordinal(videos[vid[i]].label)];
  return counts;
}

std::array<std::int64_t, kNumClasses> DatasetManifest::included_label_counts() const {
  std::array<std::int64_t, kNumClasses> counts{};
  auto vid = frame_video_index(*this);
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].included && vid[i] != SIZE_MAX) ++counts[ordinal(videos[vid[i]].label)];
  return counts;
}

std::size_t DatasetManifest::included_count() const {
  return static_cast<std::size_t>(
      std::count_if(frames.begin(), frames.end(), [](const FrameRecord& f) { return f.included; }));
}

void DatasetManifest::canonicalize() {
  std::stable_sort(videos.begin(), videos.end(), [](const VideoRecord& a, const VideoRecord& b) {
    return std::tie(a.patient, a.video_id) < std::tie(b.patient, b.video_id);
  });
  std::unordered_map<std::string_view, std::size_t> rank;
  for (std::size_t i = 0; i < videos.size(); ++i) rank.emplace(videos[i].video_id, i);
  auto key = [&](const FrameRecord& f) {
    auto it = rank.find(f.video_id);
    return it == rank.end() ? SIZE_MAX : it->second;
  };
  std::stable_sort(frames.begin(), frames.end(), [&](const FrameRecord& a, const FrameRecord& b) {
    auto ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    return a.frame_index < b.frame_index;
  });
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

struct DiagnosisRow {
  PatientId patient;
  ClassLabel label;
  std::size_t line;
};

std::map<std::string, DiagnosisRow> read_diagnosis(const fs::path& table_path) {
  auto table = csv::Table::read(table_path);
  const auto c_patient = table.require_column("patient_id");
  const auto c_video = table.require_column("video_id");
  const auto c_label = table.require_column("label");
  std::map<std::string, DiagnosisRow> out;
  for (const auto& row : table.rows()) {
    const auto& video = row.fields[c_video];
    const auto& patient = row.fields[c_patient];
    auto label = parse_label(row.fields[c_label]);
    if (!label) {
      throw DataError(fmt::format("{}:{}: unknown label '{}' (row: patient_id={}, video_id={})",
                                  table.source(), row.line, row.fields[c_label], patient, video));
    }
    if (video.empty() || patient.empty())
      throw DataError(fmt::format("{}:{}: empty patient_id or video_id", table.source(), row.line));
    auto [it, inserted] = out.emplace(video, DiagnosisRow{patient, *label, row.line});
    if (!inserted && (it->second.patient != patient || it->second.label != *label)) {
      throw DataError(fmt::format("{}:{}: video '{}' conflicts with line {}", table.source(),
                                  row.line, video, it->second.line));
    }
  }
  return out;
}

bool is_frame_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".pgm" || ext == ".ppm";
}

std::optional<std::int64_t> parse_index(const std::string& stem) {
  if (stem.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), v);
  if (ec != std::errc() || ptr != stem.data() + stem.size() || v < 0) return std::nullopt;
  return v;
}

std::vector<fs::directory_entry> sorted_entries(const fs::path& dir) {
  std::vector<fs::directory_entry> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.path().filename() < b.path().filename(); });
  return out;
}

struct ScannedVideo {
  PatientId patient;
  CapturePeriod period;
  std::map<std::int64_t, std::string> frames;  // index -> path
  std::string where;
};

void add_frame(std::map<std::string, ScannedVideo>& scanned, const std::string& video_id,
               const PatientId& patient, CapturePeriod period, std::int64_t index,
               const std::string& path, const std::string& where) {
  auto [it, inserted] = scanned.try_emplace(video_id);
  auto& sv = it->second;
  if (inserted) {
    sv.patient = patient;
    sv.period = period;
    sv.where = where;
  } else if (sv.patient != patient || sv.period != period) {
    throw DataError(fmt::format("duplicate video id '{}' in '{}' and '{}'", video_id, sv.where, where));
  }
  auto [fit, fresh] = sv.frames.emplace(index, path);
  if (!fresh) {
    throw DataError(fmt::format("duplicate frame ({}, {}): '{}' and '{}'", video_id, index,
                                fit->second, path));
  }
}

IngestResult join(std::map<std::string, ScannedVideo> scanned,
                  const std::map<std::string, DiagnosisRow>& diagnosis, IngestReport report) {
  IngestResult result;
  result.report = std::move(report);
  for (auto& [video_id, sv] : scanned) {
    auto it = diagnosis.find(video_id);
    if (it == diagnosis.end()) {
      result.report.orphan_videos.push_back(video_id);
      continue;
    }
    if (it->second.patient != sv.patient) {
      throw DataError(fmt::format("video '{}': diagnosis line {} names patient '{}' but frames are under '{}'",
                                  video_id, it->second.line, it->second.patient, sv.patient));
    }
    VideoRecord v;
    v.video_id = video_id;
    v.patient = sv.patient;
    v.label = it->second.label;
    v.capture_period = sv.period;
    v.frame_count = sv.frames.empty() ? 0 : sv.frames.rbegin()->first + 1;
    result.manifest.videos.push_back(v);
    for (auto& [index, path] : sv.frames) {
      FrameRecord f;
      f.video_id = video_id;
      f.frame_index = index;
      f.path = std::move(path);
      result.manifest.frames.push_back(std::move(f));
    }
  }
  for (const auto& [video_id, row] : diagnosis)
    if (!scanned.count(video_id)) result.report.missing_videos.push_back(video_id);
  result.manifest.canonicalize();
  return result;
}

}  // namespace

IngestResult ingest_tree(const fs::path& root, const fs::path& diagnosis_table) {
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw DataError(fmt::format("cannot read dataset root '{}'", root.string()));
  auto diagnosis = read_diagnosis(diagnosis_table);

  IngestReport report;
  std::map<std::string, ScannedVideo> scanned;
  try {
    for (const auto& period_dir : sorted_entries(root)) {
      if (!period_dir.is_directory()) {
        report.skipped_files.push_back(period_dir.path().string());
        continue;
      }
      auto period = parse_period(period_dir.path().filename().string());
      if (!period) {
        report.skipped_files.push_back(period_dir.path().string());
        continue;
      }
      for (const auto& patient_dir : sorted_entries(period_dir.path())) {
        if (!patient_dir.is_directory()) {
          report.skipped_files.push_back(patient_dir.path().string());
          continue;
        }
        const PatientId patient = patient_dir.path().filename().string();
        for (const auto& video_dir : sorted_entries(patient_dir.path())) {
          if (!video_dir.is_directory()) {
            report.skipped_files.push_back(video_dir.path().string());
            continue;
          }
          const std::string video_id = video_dir.path().filename().string();
          for (const auto& file : sorted_entries(video_dir.path())) {
            auto index = parse_index(file.path().stem().string());
            if (!file.is_regular_file() || !is_frame_extension(file.path()) || !index) {
              report.skipped_files.push_back(file.path().string());
              continue;
            }
            add_frame(scanned, video_id, patient, *period, *index, file.path().string(),
                      video_dir.path().string());
          }
        }
      }
    }
  } catch (const fs::filesystem_error& e) {
    throw DataError(fmt::format("cannot read dataset tree: {}", e.what()));
  }
  return join(std::move(scanned), diagnosis, std::move(report));
}

IngestResult ingest_mapping(const fs::path& mapping_table, const fs::path& diagnosis_table) {
  auto diagnosis = read_diagnosis(diagnosis_table);
  auto table = csv::Table::read(mapping_table);
  const auto c_path = table.require_column("path");
  const auto c_patient = table.require_column("patient_id");
  const auto c_video = table.require_column("video_id");
  const auto c_index = table.require_column("frame_index");
  const auto c_period = table.column("period");
  const fs::path base = mapping_table.parent_path();

  std::map<std::string, ScannedVideo> scanned;
  for (const auto& row : table.rows()) {
    const std::string where = fmt::format("{}:{}", table.source(), row.line);
    fs::path p = row.fields[c_path];
    if (p.is_relative()) p = base / p;
    long long index = 0;
    try {
      index = csv::parse_int(row.fields[c_index], "frame_index");
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: {}", where, e.what()));
    }
    if (index < 0) throw DataError(fmt::format("{}: negative frame_index", where));
    CapturePeriod period;
    if (c_period && !row.fields[*c_period].empty()) {
      auto parsed = parse_period(row.fields[*c_period]);
      if (!parsed) throw DataError(fmt::format("{}: bad period '{}'", where, row.fields[*c_period]));
      period = *parsed;
    }
    add_frame(scanned, row.fields[c_video], row.fields[c_patient], period, index, p.string(), where);
  }
  return join(std::move(scanned), diagnosis, IngestReport{});
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate(const DatasetManifest& m) {
  std::vector<Violation> out;
  auto add = [&](Severity s, std::string entity, std::string rule, std::string msg) {
    out.push_back(Violation{s, std::move(entity), std::move(rule), std::move(msg)});
  };

  std::unordered_map<std::string_view, const VideoRecord*> videos;
  std::map<std::string_view, std::set<ClassLabel>> patient_labels;
  for (const auto& v : m.videos) {
    const std::string entity = "video " + v.video_id;
    if (v.video_id.empty()) add(Severity::Error, entity, "empty-video-id", "video id is empty");
    if (v.patient.empty()) add(Severity::Error, entity, "empty-patient", "patient id is empty");
    if (v.frame_count < 0) add(Severity::Error, entity, "frame-count-range", "frame_count < 0");
    if (!videos.emplace(v.video_id, &v).second)
      add(Severity::Error, entity, "duplicate-video", "video id listed more than once");
    if (!v.patient.empty()) patient_labels[v.patient].insert(v.label);
  }
  for (const auto& [patient, labels] : patient_labels) {
    if (labels.size() > 1) {
      add(Severity::Warning, fmt::format("patient {}", patient), "mixed-labels",
          fmt::format("patient has videos with {} different labels", labels.size()));
    }
  }

  std::set<std::pair<std::string_view, std::int64_t>> seen;
  for (const auto& f : m.frames) {
    const std::string entity = "frame " + frame_id(f);
    auto it = videos.find(f.video_id);
    if (it == videos.end()) {
      add(Severity::Error, entity, "unknown-video", fmt::format("references unknown video '{}'", f.video_id));
    } else if (f.frame_index < 0 || f.frame_index >= it->second->frame_count) {
      add(Severity::Error, entity, "index-range",
          fmt::format("frame index outside [0, {})", it->second->frame_count));
    }
    if (!seen.emplace(f.video_id, f.frame_index).second)
      add(Severity::Error, entity, "duplicate-frame", "(video_id, frame_index) listed more than once");
    if (f.laplacian_variance && !(*f.laplacian_variance >= 0.0))
      add(Severity::Error, entity, "laplacian-range", "laplacian_variance must be >= 0");
    if (f.shannon_entropy && !(*f.shannon_entropy >= 0.0 && *f.shannon_entropy <= 8.0))
      add(Severity::Error, entity, "entropy-range",
          fmt::format("shannon_entropy {} outside [0, 8]", *f.shannon_entropy));
  }
  return out;
}

bool has_errors(const std::vector<Violation>& v) {
  return std::any_of(v.begin(), v.end(), [](const Violation& x) { return x.severity == Severity::Error; });
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

class RecordParser {
 public:
  RecordParser(std::string_view source, std::size_t line, std::size_t offset)
      : source_(source), line_(line), offset_(offset) {}

  [[noreturn]] void fail(std::string_view msg, std::size_t field) const {
    throw DataError(fmt::format("{}: line {} (byte offset {}), field {}: {}", source_, line_,
                                offset_, field + 1, msg));
  }

  std::string unescape(std::string_view s, std::size_t field) const {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != '\\') {
        out.push_back(s[i]);
        continue;
      }
      if (++i == s.size()) fail("dangling escape", field);
      switch (s[i]) {
        case '\\': out.push_back('\\'); break;
        case 't': out.push_back('\t'); break;
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        default: fail("unknown escape", field);
      }
    }
    return out;
  }

  double real(std::string_view s, std::size_t field) const {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
      fail(fmt::format("invalid number '{}'", s), field);
    return v;
  }

  std::optional<double> optional_real(std::string_view s, std::size_t field) const {
    if (s == "-") return std::nullopt;
    return real(s, field);
  }

  std::int64_t integer(std::string_view s, std::size_t field) const {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
      fail(fmt::format("invalid integer '{}'", s), field);
    return v;
  }

 private:
  std::string_view source_;
  std::size_t line_;
  std::size_t offset_;
};

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  out << kManifestHeader << '\n';
  for (const auto& v : m.videos) {
    out << "video\t" << escape(v.video_id) << '\t' << escape(v.patient) << '\t' << label_name(v.label)
        << '\t' << format_period(v.capture_period) << '\t' << v.frame_count << '\t' << v.width << 'x'
        << v.height << '\t' << format_double(v.fps) << '\n';
  }
  for (const auto& f : m.frames) {
    out << "frame\t" << escape(f.video_id) << '\t' << f.frame_index << '\t' << escape(f.path) << '\t'
        << format_optional(f.laplacian_variance) << '\t' << format_optional(f.shannon_entropy) << '\t'
        << (f.included ? 1 : 0) << '\t' << escape(f.reason) << '\n';
  }
  out << "end\t" << m.videos.size() << '\t' << m.frames.size() << '\n';
}

DatasetManifest read_manifest(std::istream& in, std::string_view source) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  DatasetManifest m;
  std::size_t offset = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool end_seen = false;

  while (offset < text.size()) {
    ++line_no;
    const std::size_t nl = text.find('\n', offset);
    if (nl == std::string::npos) {
      throw DataError(fmt::format("{}: truncated record at line {} (byte offset {})", source,
                                  line_no, offset));
    }
    std::string_view line(text.data() + offset, nl - offset);
    RecordParser p(source, line_no, offset);
    const std::size_t line_offset = offset;
    offset = nl + 1;

    if (end_seen) p.fail("data after end record", 0);
    if (!header_seen) {
      if (line != kManifestHeader) p.fail(fmt::format("expected header '{}'", kManifestHeader), 0);
      header_seen = true;
      continue;
    }
    auto fields = split_tabs(line);
    const auto kind = fields[0];
    if (kind == "video") {
      if (fields.size() != 8) p.fail(fmt::format("video record needs 8 fields, found {}", fields.size()), 0);
      VideoRecord v;
      v.video_id = p.unescape(fields[1], 1);
      v.patient = p.unescape(fields[2], 2);
      auto label = parse_label(fields[3]);
      if (!label) p.fail(fmt::format("unknown label '{}'", fields[3]), 3);
      v.label = *label;
      auto period = parse_period(fields[4]);
      if (!period) p.fail(fmt::format("bad capture period '{}'", fields[4]), 4);
      v.capture_period = *period;
      v.frame_count = p.integer(fields[5], 5);
      auto x = fields[6].find('x');
      if (x == std::string_view::npos) p.fail("resolution must be WxH", 6);
      v.width = static_cast<int>(p.integer(fields[6].substr(0, x), 6));
      v.height = static_cast<int>(p.integer(fields[6].substr(x + 1), 6));
      v.fps = p.real(fields[7], 7);
      m.videos.push_back(std::move(v));
    } else if (kind == "frame") {
      if (fields.size() != 8) p.fail(fmt::format("frame record needs 8 fields, found {}", fields.size()), 0);
      FrameRecord f;
      f.video_id = p.unescape(fields[1], 1);
      f.frame_index = p.integer(fields[2], 2);
      f.path = p.unescape(fields[3], 3);
      f.laplacian_variance = p.optional_real(fields[4], 4);
      f.shannon_entropy = p.optional_real(fields[5], 5);
      if (fields[6] != "0" && fields[6] != "1") p.fail("included flag must be 0 or 1", 6);
      f.included = fields[6] == "1";
      f.reason = p.unescape(fields[7], 7);
      m.frames.push_back(std::move(f));
    } else if (kind == "end") {
      if (fields.size() != 3) p.fail("end record needs 3 fields", 0);
      const auto nv = p.integer(fields[1], 1);
      const auto nf = p.integer(fields[2], 2);
      if (nv != static_cast<std::int64_t>(m.videos.size()) ||
          nf != static_cast<std::int64_t>(m.frames.size())) {
        throw DataError(fmt::format(
            "{}: line {} (byte offset {}): end record counts {}/{} but file holds {}/{}", source,
            line_no, line_offset, nv, nf, m.videos.size(), m.frames.size()));
      }
      end_seen = true;
    } else {
      p.fail(fmt::format("unknown record kind '{}'", kind), 0);
    }
  }
  if (!header_seen) throw DataError(fmt::format("{}: empty file (byte offset 0)", source));
  if (!end_seen) {
    throw DataError(fmt::format("{}: truncated: missing end record at byte offset {}", source,
                                text.size()));
  }
  return m;
}

std::string to_string(const DatasetManifest& m) {
  std::ostringstream os;
  write_manifest(os, m);
  return os.str();
}

void save(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write manifest '{}'", path.string()));
  write_manifest(out, m);
  if (!out) throw DataError(fmt::format("write failed for '{}'", path.string()));
}

DatasetManifest load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path.string()));
  return read_manifest(in, path.string());
}

}  // namespace otopipe
