#include "otopipe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "otopipe/error.hpp"
#include "otopipe/pnm.hpp"
#include "otopipe/rng.hpp"

namespace fs = std::filesystem;

namespace otopipe {

void SynthConfig::validate() const {
  if (patients_per_class < 1 || videos_per_patient < 1 || frames_per_video < 1)
    throw UsageError("synth counts must be >= 1");
  if (image_side < 8) throw UsageError("synth image_side must be >= 8");
  if (field_grid < 2 || field_grid > image_side) throw UsageError("synth field_grid must lie in [2, image_side]");
  if (!(class_signal >= 0 && patient_signal >= 0 && temporal_noise >= 0 && pixel_noise >= 0))
    throw UsageError("synth signal levels must be >= 0");
  if (!(temporal_correlation >= 0.0 && temporal_correlation <= 1.0))
    throw UsageError("synth temporal_correlation must lie in [0, 1]");
}

namespace {

// Stream tags keep the class, patient, video and pixel draws independent.
constexpr std::uint64_t kClassTag = 0xC1A55;
constexpr std::uint64_t kPatientTag = 0x9A7E17;
constexpr std::uint64_t kVideoTag = 0x71DE0;
constexpr std::uint64_t kPixelTag = 0x9123E1;

double gaussian(SplitMix64& rng) {
  // Box-Muller on (0, 1] x [0, 1).
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> lattice(SplitMix64& rng, int grid) {
  std::vector<double> v(static_cast<std::size_t>(grid) * grid);
  for (auto& x : v) x = gaussian(rng);
  return v;
}

// Bilinear interpolation weights mapping pixel coordinates onto the lattice.
struct Axis {
  std::vector<int> lo;
  std::vector<double> frac;
};

Axis make_axis(int side, int grid) {
  Axis a;
  a.lo.resize(static_cast<std::size_t>(side));
  a.frac.resize(static_cast<std::size_t>(side));
  for (int x = 0; x < side; ++x) {
    const double u = static_cast<double>(x) * (grid - 1) / std::max(side - 1, 1);
    int i = std::min(static_cast<int>(std::floor(u)), grid - 2);
    a.lo[static_cast<std::size_t>(x)] = i;
    a.frac[static_cast<std::size_t>(x)] = u - i;
  }
  return a;
}

struct Layout {
  struct Video {
    std::string video_id;
    std::string patient;
    int patient_index;
    ClassLabel label;
    CapturePeriod period;
  };
  std::vector<Video> videos;
};

Layout make_layout(const SynthConfig& c) {
  Layout l;
  int patient = 0;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    for (int p = 0; p < c.patients_per_class; ++p, ++patient) {
      const std::string pid = fmt::format("P{:03d}", patient);
      for (int v = 0; v < c.videos_per_patient; ++v) {
        l.videos.push_back(Layout::Video{fmt::format("{}V{}", pid, v), pid, patient, static_cast<ClassLabel>(cls),
                                         CapturePeriod{2023, 1 + patient % 12}});
      }
    }
  }
  return l;
}

}  // namespace

SynthFrames render(const SynthConfig& config) {
  config.validate();
  const Layout layout = make_layout(config);
  const int g = config.field_grid, side = config.image_side;
  const std::size_t cells = static_cast<std::size_t>(g) * g;

  std::vector<std::vector<double>> class_field(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    auto rng = SplitMix64::stream(config.seed, static_cast<std::uint64_t>(c), kClassTag);
    class_field[static_cast<std::size_t>(c)] = lattice(rng, g);
  }
  const int n_patients = kNumClasses * config.patients_per_class;
  std::vector<std::vector<double>> patient_field(static_cast<std::size_t>(n_patients));
  for (int p = 0; p < n_patients; ++p) {
    auto rng = SplitMix64::stream(config.seed, static_cast<std::uint64_t>(p), kPatientTag);
    patient_field[static_cast<std::size_t>(p)] = lattice(rng, g);
  }

  const Axis axis = make_axis(side, g);
  const std::size_t fpv = static_cast<std::size_t>(config.frames_per_video);
  SynthFrames out;
  out.images.resize(layout.videos.size() * fpv);
  const double rho = config.temporal_correlation;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  const auto n_videos = static_cast<std::int64_t>(layout.videos.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t vi = 0; vi < n_videos; ++vi) {
    const auto& v = layout.videos[static_cast<std::size_t>(vi)];
    auto temporal_rng = SplitMix64::stream(config.seed, static_cast<std::uint64_t>(vi), kVideoTag);
    auto pixel_rng = SplitMix64::stream(config.seed, static_cast<std::uint64_t>(vi), kPixelTag);
    const auto& cf = class_field[static_cast<std::size_t>(ordinal(v.label))];
    const auto& pf = patient_field[static_cast<std::size_t>(v.patient_index)];
    std::vector<double> temporal(cells, 0.0), field(cells);
    for (std::size_t f = 0; f < fpv; ++f) {
      for (std::size_t k = 0; k < cells; ++k) {
        const double z = gaussian(temporal_rng);
        temporal[k] = f == 0 ? z : rho * temporal[k] + innovation * z;
        field[k] = config.class_signal * cf[k] + config.patient_signal * pf[k] + config.temporal_noise * temporal[k];
      }
      GrayImage img(side, side);
      for (int y = 0; y < side; ++y) {
        const int iy = axis.lo[static_cast<std::size_t>(y)];
        const double fy = axis.frac[static_cast<std::size_t>(y)];
        for (int x = 0; x < side; ++x) {
          const int ix = axis.lo[static_cast<std::size_t>(x)];
          const double fx = axis.frac[static_cast<std::size_t>(x)];
          const auto at = [&](int r, int c) { return field[static_cast<std::size_t>(r) * g + c]; };
          double value = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix + 1)) +
                         fy * ((1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1));
          value += 128.0;
          if (config.pixel_noise > 0) value += config.pixel_noise * gaussian(pixel_rng);
          img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
        }
      }
      out.images[static_cast<std::size_t>(vi) * fpv + f] = std::move(img);
    }
  }

  for (const auto& v : layout.videos) {
    VideoRecord rec;
    rec.video_id = v.video_id;
    rec.patient = v.patient;
    rec.label = v.label;
    rec.capture_period = v.period;
    rec.frame_count = config.frames_per_video;
    rec.width = side;
    rec.height = side;
    out.manifest.videos.push_back(rec);
    for (int f = 0; f < config.frames_per_video; ++f) {
      FrameRecord fr;
      fr.video_id = v.video_id;
      fr.frame_index = f;
      fr.path = (fs::path(format_period(v.period)) / v.patient / v.video_id / fmt::format("{}.pgm", f)).string();
      out.manifest.frames.push_back(std::move(fr));
    }
  }
  // Layout order already is (patient, video, frame), i.e. canonical.
  return out;
}

DatasetManifest generate(const SynthConfig& config, const fs::path& out_dir) {
  SynthFrames frames = render(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));
  const fs::path root = fs::absolute(out_dir);
  for (auto& f : frames.manifest.frames) {
    f.path = (root / f.path).string();
    fs::create_directories(fs::path(f.path).parent_path());
  }
  const auto n = static_cast<std::int64_t>(frames.images.size());
  std::vector<std::string> errors(frames.images.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      pnm::write(frames.manifest.frames[static_cast<std::size_t>(i)].path, frames.images[static_cast<std::size_t>(i)]);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  return std::move(frames.manifest);
}

// ---------------------------------------------------------------------------
// k-NN probe

ThumbTable compute_thumbs(const DatasetManifest& m) {
  ThumbTable out(m.frames.size());
  const auto n = static_cast<std::int64_t>(m.frames.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& f = m.frames[static_cast<std::size_t>(i)];
    if (!f.included) continue;
    try {
      out[static_cast<std::size_t>(i)] = fingerprint(pnm::read_gray(f.path)).thumb;
    } catch (const std::exception&) {
    }
  }
  return out;
}

namespace {

std::int64_t squared_distance(const std::array<std::uint8_t, kThumbSide * kThumbSide>& a,
                              const std::array<std::uint8_t, kThumbSide * kThumbSide>& b) {
  std::int32_t acc = 0;  // at most 1024 * 255^2 < 2^31
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::int32_t d = static_cast<std::int32_t>(a[i]) - static_cast<std::int32_t>(b[i]);
    acc += d * d;
  }
  return acc;
}

NeighborList neighbors_of(const ThumbTable& thumbs, std::size_t t, std::span<const std::size_t> train, int k) {
  NeighborList all;
  all.reserve(train.size());
  for (auto r : train)
    if (thumbs[r]) all.emplace_back(squared_distance(*thumbs[t], *thumbs[r]), r);
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  all.resize(keep);
  return all;
}

}  // namespace

std::vector<NeighborList> nearest_train(const ThumbTable& thumbs, std::span<const std::size_t> test,
                                        std::span<const std::size_t> train, int k) {
  std::vector<NeighborList> out(test.size());
  const auto n = static_cast<std::int64_t>(test.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto t = test[static_cast<std::size_t>(i)];
    if (thumbs[t]) out[static_cast<std::size_t>(i)] = neighbors_of(thumbs, t, train, k);
  }
  return out;
}

std::vector<ProbeResult> knn_probe_multi(const DatasetManifest& m, const SplitAssignment& a, std::span<const int> ks,
                                         const ThumbTable& thumbs) {
  if (ks.empty()) throw UsageError("knn_probe needs at least one k");
  if (thumbs.size() != m.frames.size()) throw DataError("thumbnail table does not match the manifest");
  std::vector<std::size_t> train;
  for (auto r : a.train)
    if (thumbs[r]) train.push_back(r);
  if (train.empty()) throw DataError("knn_probe: train side has no readable frames");

  std::vector<ProbeResult> results(ks.size());
  std::vector<int> effective(ks.size());
  for (std::size_t q = 0; q < ks.size(); ++q) {
    if (ks[q] < 1) throw UsageError("knn_probe: k must be >= 1");
    effective[q] = std::min<int>(ks[q], static_cast<int>(train.size()));
    if (effective[q] < ks[q])
      results[q].warnings.push_back(
          fmt::format("k = {} exceeds the {} train frames; clamped", ks[q], train.size()));
  }
  const int k_max = *std::max_element(effective.begin(), effective.end());
  const auto neighbors = nearest_train(thumbs, a.test, train, k_max);
  const auto vid = frame_video_index(m);

  for (std::size_t i = 0; i < a.test.size(); ++i) {
    const auto t = a.test[i];
    if (!thumbs[t]) {
      for (auto& r : results) r.warnings.push_back(fmt::format("frame {} unreadable; not classified", frame_id(m.frames[t])));
      continue;
    }
    for (std::size_t q = 0; q < ks.size(); ++q) {
      std::array<int, kNumClasses> votes{};
      std::array<int, kNumClasses> exact{};
      std::array<double, kNumClasses> inverse{};
      const int k = effective[q];
      for (int j = 0; j < k; ++j) {
        const auto [d2, r] = neighbors[i][static_cast<std::size_t>(j)];
        const int c = ordinal(m.videos[vid[r]].label);
        ++votes[c];
        if (d2 == 0)
          ++exact[c];
        else
          inverse[c] += 1.0 / std::sqrt(static_cast<double>(d2));
      }
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c) {
        if (std::tie(votes[c], exact[c], inverse[c]) > std::tie(votes[best], exact[best], inverse[best])) best = c;
      }
      PredictionRow row;
      row.frame_id = frame_id(m.frames[t]);
      row.run = a.run_index;
      row.truth = m.videos[vid[t]].label;
      row.predicted = static_cast<ClassLabel>(best);
      for (int c = 0; c < kNumClasses; ++c) row.scores[c] = static_cast<double>(votes[c]) / k;
      results[q].predictions.rows.push_back(std::move(row));
    }
  }
  return results;
}

ProbeResult knn_probe(const DatasetManifest& m, const SplitAssignment& a, int k, const ThumbTable* thumbs) {
  check_assignment(m, a);
  const int ks[] = {k};
  if (thumbs) return std::move(knn_probe_multi(m, a, ks, *thumbs).front());
  const ThumbTable computed = compute_thumbs(m);
  return std::move(knn_probe_multi(m, a, ks, computed).front());
}

// ---------------------------------------------------------------------------
// Inflation experiment

std::string InflationResult::model_name(std::size_t k_index) const {
  return fmt::format("{}-NN", options.ks.at(k_index));
}

namespace {

StrategyOutcome run_strategy(const DatasetManifest& m, const SplitSpec& spec, const ExperimentOptions& options,
                             const ThumbTable& thumbs) {
  StrategyOutcome out;
  out.spec = spec;
  out.splits = run_series(m, spec);
  out.predictions.resize(options.ks.size());
  for (const auto& a : out.splits) {
    auto probes = knn_probe_multi(m, a, options.ks, thumbs);
    for (std::size_t q = 0; q < probes.size(); ++q) {
      auto& rows = out.predictions[q].rows;
      rows.insert(rows.end(), probes[q].predictions.rows.begin(), probes[q].predictions.rows.end());
    }
    out.contamination.push_back(audit_split(m, a, options.audit).contamination_rate);
  }
  for (const auto& p : out.predictions) {
    out.reports.push_back(evaluate_runs(p));
    out.summaries.push_back(summarize_runs(out.reports.back()));
  }
  return out;
}

}  // namespace

InflationResult inflation_experiment(const SynthConfig& config, const SplitSpec& naive, const SplitSpec& grouped,
                                     const ExperimentOptions& options, const fs::path& work_dir) {
  if (options.ks.empty()) throw UsageError("experiment needs at least one probe k");
  if (naive.strategy != SplitStrategy::NaiveFrame || grouped.strategy != SplitStrategy::GroupedPatient)
    throw UsageError("experiment expects one naive and one grouped split spec");
  if (naive.run_count != grouped.run_count) throw UsageError("both strategies need the same run_count");

  InflationResult r;
  r.config = config;
  r.options = options;
  const DatasetManifest raw = generate(config, work_dir / "frames");
  r.manifest = run_pipeline(raw, PipelineConfig::neutral(), work_dir / "processed").manifest;
  const ThumbTable thumbs = compute_thumbs(r.manifest);

  r.naive = run_strategy(r.manifest, naive, options, thumbs);
  r.grouped = run_strategy(r.manifest, grouped, options, thumbs);

  std::map<std::string, RunSummary> before, after;
  r.accuracy_design.row_levels = {"With leakage", "Without leakage"};
  r.accuracy_design.values.assign(2, {});
  for (std::size_t q = 0; q < options.ks.size(); ++q) {
    const auto name = r.model_name(q);
    before[name] = r.naive.summaries[q];
    after[name] = r.grouped.summaries[q];
    r.accuracy_design.col_levels.push_back(name);
    std::vector<double> with, without;
    for (const auto& rep : r.naive.reports[q]) with.push_back(rep.accuracy);
    for (const auto& rep : r.grouped.reports[q]) without.push_back(rep.accuracy);
    r.accuracy_design.values[0].push_back(std::move(with));
    r.accuracy_design.values[1].push_back(std::move(without));
  }
  r.delta = delta_report(before, after);

  const auto& na = r.naive.summaries[0].metrics.at("accuracy");
  const auto& ga = r.grouped.summaries[0].metrics.at("accuracy");
  r.accuracy_gap = na.mean - ga.mean;
  const double vn = na.variance.value_or(0.0), vg = ga.variance.value_or(0.0);
  r.pooled_se = std::sqrt(vn / static_cast<double>(na.n) + vg / static_cast<double>(ga.n));
  r.adjacency_possible = config.frames_per_video > 1;
  return r;
}

}  // namespace otopipe
