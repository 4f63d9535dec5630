#include "otopipe/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/core.h>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"
#include "otopipe/rng.hpp"

namespace otopipe {

std::string_view strategy_name(SplitStrategy s) {
  return s == SplitStrategy::NaiveFrame ? "naive" : "grouped";
}

SplitStrategy parse_strategy(std::string_view text) {
  if (text == "naive" || text == "naive-frame" || text == "NaiveFrame") return SplitStrategy::NaiveFrame;
  if (text == "grouped" || text == "grouped-patient" || text == "GroupedPatient")
    return SplitStrategy::GroupedPatient;
  throw UsageError(fmt::format("unknown split strategy '{}' (naive | grouped)", text));
}

void SplitSpec::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw UsageError(fmt::format("test_fraction {} outside (0, 1)", test_fraction));
  if (run_count < 1) throw UsageError(fmt::format("run_count {} must be >= 1", run_count));
}

namespace {

std::vector<std::size_t> included_positions(const DatasetManifest& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.frames.size(); ++i)
    if (m.frames[i].included) out.push_back(i);
  return out;
}

}  // namespace

SplitAssignment split_naive_frame(const DatasetManifest& m, const SplitSpec& spec, int run_index) {
  spec.validate();
  auto frames = included_positions(m);
  const std::size_t n = frames.size();
  if (n < 2) throw DataError(fmt::format("naive split needs at least 2 included frames, found {}", n));
  auto rng = SplitMix64::stream(spec.seed, static_cast<std::uint64_t>(run_index));
  shuffle(std::span<std::size_t>(frames), rng);
  // The epsilon absorbs representation error in n * fraction (10 * 0.2 etc.).
  auto n_test = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * spec.test_fraction - 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  SplitAssignment a;
  a.spec = spec;
  a.run_index = run_index;
  a.test.assign(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n_test));
  a.train.assign(frames.begin() + static_cast<std::ptrdiff_t>(n_test), frames.end());
  std::sort(a.test.begin(), a.test.end());
  std::sort(a.train.begin(), a.train.end());
  return a;
}

SplitAssignment split_grouped_patient(const DatasetManifest& m, const SplitSpec& spec, int run_index) {
  spec.validate();
  const auto vid = frame_video_index(m);
  std::map<PatientId, std::vector<std::size_t>> by_patient;
  std::array<bool, kNumClasses> class_present{};
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    if (!m.frames[i].included) continue;
    if (vid[i] == SIZE_MAX)
      throw DataError(fmt::format("frame {} references unknown video", frame_id(m.frames[i])));
    const auto& video = m.videos[vid[i]];
    by_patient[video.patient].push_back(i);
    class_present[ordinal(video.label)] = true;
  }
  if (by_patient.size() < 2)
    throw DataError(fmt::format("grouped split needs at least 2 patients, found {}", by_patient.size()));

  std::vector<const std::vector<std::size_t>*> groups;
  std::size_t total = 0;
  for (const auto& [patient, frames] : by_patient) {
    groups.push_back(&frames);
    total += frames.size();
  }
  const double target = spec.test_fraction * static_cast<double>(total);

  std::array<bool, kNumClasses> train_has{};
  for (int attempt = 0; attempt < kClassCoverageRetries; ++attempt) {
    auto order = groups;
    auto rng = SplitMix64::stream(spec.seed, static_cast<std::uint64_t>(run_index),
                                  static_cast<std::uint64_t>(attempt));
    shuffle(std::span(order), rng);

    SplitAssignment a;
    a.spec = spec;
    a.run_index = run_index;
    a.attempts = attempt + 1;
    std::size_t k = 0;
    std::size_t test_frames = 0;
    while (k + 1 < order.size() && static_cast<double>(test_frames) < target) {
      a.test.insert(a.test.end(), order[k]->begin(), order[k]->end());
      test_frames += order[k]->size();
      ++k;
    }
    for (; k < order.size(); ++k) a.train.insert(a.train.end(), order[k]->begin(), order[k]->end());

    train_has.fill(false);
    for (auto i : a.train) train_has[ordinal(m.videos[vid[i]].label)] = true;
    bool covered = true;
    for (int c = 0; c < kNumClasses; ++c) covered = covered && (!class_present[c] || train_has[c]);
    if (covered) {
      std::sort(a.test.begin(), a.test.end());
      std::sort(a.train.begin(), a.train.end());
      return a;
    }
  }
  std::string missing;
  for (int c = 0; c < kNumClasses; ++c) {
    if (class_present[c] && !train_has[c]) {
      if (!missing.empty()) missing += ", ";
      missing += label_name(static_cast<ClassLabel>(c));
    }
  }
  throw DataError(fmt::format("grouped split (seed {}, run {}): no draw in {} attempts put class {} in train",
                              spec.seed, run_index, kClassCoverageRetries, missing));
}

SplitAssignment split(const DatasetManifest& m, const SplitSpec& spec, int run_index) {
  return spec.strategy == SplitStrategy::NaiveFrame ? split_naive_frame(m, spec, run_index)
                                                    : split_grouped_patient(m, spec, run_index);
}

std::vector<SplitAssignment> run_series(const DatasetManifest& m, const SplitSpec& spec) {
  spec.validate();
  std::vector<SplitAssignment> out;
  out.reserve(static_cast<std::size_t>(spec.run_count));
  for (int r = 0; r < spec.run_count; ++r) out.push_back(split(m, spec, r));
  return out;
}

std::vector<PatientId> patients_of(const DatasetManifest& m, const std::vector<std::size_t>& frames) {
  const auto vid = frame_video_index(m);
  std::set<PatientId> out;
  for (auto i : frames)
    if (i < vid.size() && vid[i] != SIZE_MAX) out.insert(m.videos[vid[i]].patient);
  return {out.begin(), out.end()};
}

void write_splits(std::ostream& out, const DatasetManifest& m, const std::vector<SplitAssignment>& runs) {
  if (!runs.empty()) {
    const auto& s = runs.front().spec;
    out << fmt::format("# split strategy={} test_fraction={} seed={} run_count={}\n", strategy_name(s.strategy),
                       s.test_fraction, s.seed, s.run_count);
  }
  out << "frame_id,run_index,side\n";
  for (const auto& a : runs) {
    // Frame order, so a run's lines read like the manifest.
    std::vector<std::pair<std::size_t, bool>> rows;
    for (auto i : a.train) rows.emplace_back(i, false);
    for (auto i : a.test) rows.emplace_back(i, true);
    std::sort(rows.begin(), rows.end());
    for (const auto& [i, is_test] : rows)
      out << csv::quote(frame_id(m.frames.at(i))) << ',' << a.run_index << ',' << (is_test ? "test" : "train")
          << '\n';
  }
}

std::vector<SplitAssignment> read_splits(std::istream& in, const DatasetManifest& m, std::string_view source) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  SplitSpec spec;
  if (text.rfind("# split ", 0) == 0) {
    std::istringstream head(text.substr(8, text.find('\n') - 8));
    std::string kv;
    while (head >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "strategy") spec.strategy = parse_strategy(value);
      else if (key == "test_fraction") spec.test_fraction = csv::parse_double(value, key);
      else if (key == "seed") spec.seed = static_cast<std::uint64_t>(std::stoull(value));
      else if (key == "run_count") spec.run_count = static_cast<int>(csv::parse_int(value, key));
    }
  }
  std::istringstream body(text);
  auto table = csv::Table::parse(body, std::string(source));
  const auto c_frame = table.require_column("frame_id");
  const auto c_run = table.require_column("run_index");
  const auto c_side = table.require_column("side");

  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < m.frames.size(); ++i) by_id.emplace(frame_id(m.frames[i]), i);

  std::map<int, SplitAssignment> runs;
  for (const auto& row : table.rows()) {
    const auto where = fmt::format("{}:{}", source, row.line);
    auto it = by_id.find(row.fields[c_frame]);
    if (it == by_id.end()) throw DataError(fmt::format("{}: unknown frame_id '{}'", where, row.fields[c_frame]));
    const int run = static_cast<int>(csv::parse_int(row.fields[c_run], "run_index"));
    auto& a = runs[run];
    a.run_index = run;
    a.spec = spec;
    const auto& side = row.fields[c_side];
    if (side == "train") a.train.push_back(it->second);
    else if (side == "test") a.test.push_back(it->second);
    else throw DataError(fmt::format("{}: side must be train or test, got '{}'", where, side));
  }
  std::vector<SplitAssignment> out;
  for (auto& [run, a] : runs) {
    std::sort(a.train.begin(), a.train.end());
    std::sort(a.test.begin(), a.test.end());
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace otopipe
