#include "otopipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <unordered_map>

#include <fmt/core.h>

#include "otopipe/error.hpp"
#include "otopipe/imaging.hpp"
#include "otopipe/pnm.hpp"

namespace fs = std::filesystem;

namespace otopipe {

void PipelineConfig::validate() const {
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5))
    throw UsageError(fmt::format("trim_fraction {} outside [0, 0.5)", trim_fraction));
  for (const auto* p : {&laplacian, &entropy}) {
    if (p->kind == QualityPolicy::Kind::Percentile && !(p->value >= 0.0 && p->value <= 100.0))
      throw UsageError(fmt::format("percentile {} outside [0, 100]", p->value));
    if (p->kind == QualityPolicy::Kind::Absolute && !(p->value >= 0.0))
      throw UsageError(fmt::format("absolute threshold {} must be >= 0", p->value));
  }
}

PipelineConfig PipelineConfig::neutral() {
  PipelineConfig c;
  c.trim_fraction = 0.0;
  c.laplacian = QualityPolicy::absolute(0.0);
  c.entropy = QualityPolicy::absolute(0.0);
  c.crop_enabled = false;
  return c;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UsageError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * std::clamp(q, 0.0, 100.0) / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<std::int64_t> trim(std::span<const std::int64_t> sorted_indices, double fraction) {
  const std::size_t n = sorted_indices.size();
  if (n == 0) return {};
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  if (2 * cut >= n) return {sorted_indices[n / 2]};
  return {sorted_indices.begin() + static_cast<std::ptrdiff_t>(cut),
          sorted_indices.end() - static_cast<std::ptrdiff_t>(cut)};
}

namespace {

// Frame positions grouped per video id, each group sorted by frame index.
std::map<std::string, std::vector<std::size_t>> frames_by_video(const DatasetManifest& m) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.frames.size(); ++i) groups[m.frames[i].video_id].push_back(i);
  for (auto& [id, pos] : groups) {
    std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
      return m.frames[a].frame_index < m.frames[b].frame_index;
    });
  }
  return groups;
}

void exclude(FrameRecord& f, std::string_view why) {
  f.included = false;
  f.reason = std::string(why);
}

}  // namespace

DatasetManifest apply_trim(const DatasetManifest& m, double fraction) {
  DatasetManifest out = m;
  for (auto& f : out.frames) {
    f.included = true;
    f.reason.clear();
  }
  for (const auto& [id, pos] : frames_by_video(out)) {
    std::vector<std::int64_t> indices;
    indices.reserve(pos.size());
    for (auto p : pos) indices.push_back(out.frames[p].frame_index);
    const auto kept = trim(indices, fraction);
    for (auto p : pos) {
      if (!std::binary_search(kept.begin(), kept.end(), out.frames[p].frame_index))
        exclude(out.frames[p], reason::kTrim);
    }
  }
  return out;
}

DatasetManifest score_frames(const DatasetManifest& m) {
  DatasetManifest out = m;
  const auto n = static_cast<std::int64_t>(out.frames.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    auto& f = out.frames[static_cast<std::size_t>(i)];
    if (!f.included) continue;
    try {
      const GrayImage img = pnm::read_gray(f.path);
      f.laplacian_variance = laplacian_variance(img);
      f.shannon_entropy = shannon_entropy(img);
    } catch (const std::exception&) {
      f.laplacian_variance.reset();
      f.shannon_entropy.reset();
      exclude(f, reason::kUnreadable);
    }
  }
  return out;
}

PipelineReport tally(const DatasetManifest& m) {
  PipelineReport r;
  for (const auto& [id, pos] : frames_by_video(m)) {
    VideoFilterStats v;
    v.video_id = id;
    for (auto p : pos) {
      const auto& f = m.frames[p];
      ++v.raw;
      if (f.included) {
        ++v.kept;
      } else if (f.reason == reason::kTrim) {
        ++v.dropped_trim;
      } else if (f.reason == reason::kUnreadable) {
        ++v.dropped_unreadable;
      } else if (f.reason == reason::kQuality) {
        ++v.dropped_quality;
      } else {
        throw DataError(fmt::format("frame {}: unknown exclusion reason '{}'", frame_id(f), f.reason));
      }
    }
    r.total += v.raw;
    r.kept += v.kept;
    r.dropped_trim += v.dropped_trim;
    r.dropped_unreadable += v.dropped_unreadable;
    r.dropped_quality += v.dropped_quality;
    r.videos.push_back(std::move(v));
  }
  // Videos with no frame records at all still appear with zero counts.
  for (const auto& v : m.videos) {
    auto it = std::find_if(r.videos.begin(), r.videos.end(),
                           [&](const VideoFilterStats& s) { return s.video_id == v.video_id; });
    if (it == r.videos.end()) r.videos.push_back(VideoFilterStats{v.video_id});
  }
  std::sort(r.videos.begin(), r.videos.end(),
            [](const VideoFilterStats& a, const VideoFilterStats& b) { return a.video_id < b.video_id; });
  return r;
}

FilterResult filter_frames(const DatasetManifest& scored, const PipelineConfig& config) {
  config.validate();
  FilterResult result;
  result.manifest = scored;
  auto& frames = result.manifest.frames;
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> cutoffs;

  for (const auto& [id, pos] : frames_by_video(result.manifest)) {
    std::vector<std::size_t> candidates;
    std::vector<double> lap, ent;
    for (auto p : pos) {
      const auto& f = frames[p];
      if (!f.included) continue;
      if (!f.laplacian_variance || !f.shannon_entropy)
        throw DataError(fmt::format("frame {} is included but not scored", frame_id(f)));
      candidates.push_back(p);
      lap.push_back(*f.laplacian_variance);
      ent.push_back(*f.shannon_entropy);
    }
    if (candidates.empty()) continue;
    auto cutoff = [](const QualityPolicy& policy, const std::vector<double>& scores) {
      return policy.kind == QualityPolicy::Kind::Absolute ? policy.value
                                                          : percentile(scores, policy.value);
    };
    const double lap_cut = cutoff(config.laplacian, lap);
    const double ent_cut = cutoff(config.entropy, ent);
    cutoffs[id] = {lap_cut, ent_cut};
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (!(lap[k] >= lap_cut && ent[k] >= ent_cut)) exclude(frames[candidates[k]], reason::kQuality);
    }
  }

  result.report = tally(result.manifest);
  for (auto& v : result.report.videos) {
    if (auto it = cutoffs.find(v.video_id); it != cutoffs.end()) {
      v.laplacian_cutoff = it->second.first;
      v.entropy_cutoff = it->second.second;
    }
    if (v.kept == 0)
      result.report.warnings.push_back(fmt::format("video {}: all frames filtered", v.video_id));
  }
  return result;
}

namespace {

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError(fmt::format("output directory '{}' is not writable", dir.string()));
  const fs::path probe = dir / ".otopipe-write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw DataError(fmt::format("output directory '{}' is not writable", dir.string()));
  }
  fs::remove(probe, ec);
}

}  // namespace

DatasetManifest crop_frames(const DatasetManifest& m, std::uint8_t fill, const fs::path& out_dir) {
  ensure_writable_dir(out_dir);
  DatasetManifest out = m;
  const auto vid = frame_video_index(out);
  std::vector<fs::path> targets(out.frames.size());
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    const auto& f = out.frames[i];
    if (!f.included) continue;
    fs::path dir = out_dir;
    if (vid[i] != SIZE_MAX) {
      const auto& v = out.videos[vid[i]];
      dir = dir / format_period(v.capture_period) / v.patient;
    }
    dir /= f.video_id;
    fs::create_directories(dir);
    targets[i] = dir / fmt::format("{}.pgm", f.frame_index);
  }

  const auto n = static_cast<std::int64_t>(out.frames.size());
  std::vector<std::string> errors(out.frames.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    auto& f = out.frames[static_cast<std::size_t>(i)];
    if (!f.included) continue;
    try {
      const GrayImage img = pnm::read_gray(f.path);
      pnm::write(targets[static_cast<std::size_t>(i)], circular_crop(img, fill));
      f.path = targets[static_cast<std::size_t>(i)].string();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return out;
}

PipelineResult run_pipeline(const DatasetManifest& raw, const PipelineConfig& config,
                            const fs::path& out_dir) {
  config.validate();
  auto trimmed = apply_trim(raw, config.trim_fraction);
  auto scored = score_frames(trimmed);
  auto filtered = filter_frames(scored, config);
  PipelineResult result{std::move(filtered.manifest), std::move(filtered.report)};
  if (config.crop_enabled) result.manifest = crop_frames(result.manifest, config.fill, out_dir);
  if (!result.report.conserved() || result.report.total != static_cast<std::int64_t>(raw.frames.size()))
    throw std::logic_error("pipeline report does not partition the input frames");
  return result;
}

void write_report_text(std::ostream& out, const PipelineReport& r) {
  out << fmt::format("frames total      {}\n", r.total);
  out << fmt::format("kept              {}\n", r.kept);
  out << fmt::format("dropped (trim)    {}\n", r.dropped_trim);
  out << fmt::format("dropped (quality) {}\n", r.dropped_quality);
  out << fmt::format("dropped (unread)  {}\n", r.dropped_unreadable);
  out << "\nper video:\n";
  for (const auto& v : r.videos) {
    out << fmt::format("  {:<20} raw {:>5}  trim {:>4}  unread {:>4}  quality {:>5}  kept {:>5}", v.video_id,
                       v.raw, v.dropped_trim, v.dropped_unreadable, v.dropped_quality, v.kept);
    if (v.laplacian_cutoff)
      out << fmt::format("  cut_L {:.4g}  cut_H {:.4g}", *v.laplacian_cutoff, *v.entropy_cutoff);
    out << '\n';
  }
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void write_report_csv(std::ostream& out, const PipelineReport& r) {
  out << "video_id,raw,dropped_trim,dropped_unreadable,dropped_quality,kept,laplacian_cutoff,entropy_cutoff\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
  for (const auto& v : r.videos) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", v.video_id, v.raw, v.dropped_trim, v.dropped_unreadable,
                       v.dropped_quality, v.kept, opt(v.laplacian_cutoff), opt(v.entropy_cutoff));
  }
  out << fmt::format("TOTAL,{},{},{},{},{},,\n", r.total, r.dropped_trim, r.dropped_unreadable,
                     r.dropped_quality, r.kept);
}

}  // namespace otopipe
