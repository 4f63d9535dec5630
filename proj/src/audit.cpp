#include "otopipe/audit.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include <fmt/core.h>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"
#include "otopipe/imaging.hpp"
#include "otopipe/pnm.hpp"

namespace otopipe {

FingerprintTable compute_fingerprints(const DatasetManifest& m) {
  FingerprintTable out(m.frames.size());
  const auto n = static_cast<std::int64_t>(m.frames.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& f = m.frames[static_cast<std::size_t>(i)];
    if (!f.included) continue;
    try {
      out[static_cast<std::size_t>(i)] = fingerprint(pnm::read_gray(f.path)).bits;
    } catch (const std::exception&) {
      // Left empty; the frame takes no part in duplicate search.
    }
  }
  return out;
}

void check_assignment(const DatasetManifest& m, const SplitAssignment& a) {
  std::vector<std::uint8_t> seen(m.frames.size(), 0);
  for (const auto* side : {&a.train, &a.test}) {
    for (auto i : *side) {
      if (i >= m.frames.size())
        throw DataError(fmt::format("assignment run {} references frame position {} beyond the manifest ({} frames)",
                                    a.run_index, i, m.frames.size()));
      if (seen[i]++)
        throw DataError(fmt::format("assignment run {} lists frame {} twice", a.run_index, frame_id(m.frames[i])));
      if (!m.frames[i].included)
        throw DataError(
            fmt::format("assignment run {} uses excluded frame {}", a.run_index, frame_id(m.frames[i])));
    }
  }
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    if (m.frames[i].included && !seen[i])
      throw DataError(fmt::format("assignment run {} does not cover included frame {}", a.run_index,
                                  frame_id(m.frames[i])));
  }
}

namespace {

constexpr std::size_t kAllPairsBudget = 2000u * 2000u;

std::vector<FramePair> all_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                 const FingerprintTable& fp, int threshold) {
  std::vector<std::vector<FramePair>> per_test(test.size());
  const auto n = static_cast<std::int64_t>(test.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t k = 0; k < n; ++k) {
    const auto t = test[static_cast<std::size_t>(k)];
    if (!fp[t]) continue;
    auto& local = per_test[static_cast<std::size_t>(k)];
    for (auto r : train) {
      if (!fp[r]) continue;
      const int d = hamming(*fp[t], *fp[r]);
      if (d <= threshold) local.push_back(FramePair{t, r, d});
    }
  }
  std::vector<FramePair> out;
  for (auto& v : per_test) out.insert(out.end(), v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

// Splitting the 64 bits into threshold + 1 contiguous blocks, any two hashes
// within the threshold agree exactly on at least one block (pigeonhole), so
// probing every block's bucket finds every qualifying pair.
std::vector<FramePair> blocked_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                     const FingerprintTable& fp, int threshold) {
  const int blocks = threshold + 1;
  auto block_key = [blocks](std::uint64_t bits, int b) {
    const int lo = b * 64 / blocks, hi = (b + 1) * 64 / blocks;
    const int width = hi - lo;
    const std::uint64_t mask = width >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << width) - 1);
    return (bits >> lo) & mask;
  };
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> index(static_cast<std::size_t>(blocks));
  for (auto r : train) {
    if (!fp[r]) continue;
    for (int b = 0; b < blocks; ++b) index[static_cast<std::size_t>(b)][block_key(*fp[r], b)].push_back(r);
  }

  std::vector<std::vector<FramePair>> per_test(test.size());
  const auto n = static_cast<std::int64_t>(test.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t k = 0; k < n; ++k) {
    const auto t = test[static_cast<std::size_t>(k)];
    if (!fp[t]) continue;
    std::vector<std::size_t> candidates;
    for (int b = 0; b < blocks; ++b) {
      const auto& bucket_map = index[static_cast<std::size_t>(b)];
      auto it = bucket_map.find(block_key(*fp[t], b));
      if (it != bucket_map.end()) candidates.insert(candidates.end(), it->second.begin(), it->second.end());
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    auto& local = per_test[static_cast<std::size_t>(k)];
    for (auto r : candidates) {
      const int d = hamming(*fp[t], *fp[r]);
      if (d <= threshold) local.push_back(FramePair{t, r, d});
    }
  }
  std::vector<FramePair> out;
  for (auto& v : per_test) out.insert(out.end(), v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<FramePair> duplicate_pairs(std::span<const std::size_t> test, std::span<const std::size_t> train,
                                       const FingerprintTable& fingerprints, int threshold, DuplicateSearch search) {
  if (threshold < 0 || threshold > 64) throw UsageError(fmt::format("dup_threshold {} outside [0, 64]", threshold));
  // Blocks narrower than 4 bits buy nothing over the exhaustive scan.
  const bool blockable = threshold + 1 <= 16;
  if (search == DuplicateSearch::Auto)
    search = (test.size() * train.size() <= kAllPairsBudget || !blockable) ? DuplicateSearch::AllPairs
                                                                           : DuplicateSearch::Blocked;
  if (search == DuplicateSearch::Blocked && blockable) return blocked_pairs(test, train, fingerprints, threshold);
  return all_pairs(test, train, fingerprints, threshold);
}

LeakageReport audit_split(const DatasetManifest& m, const SplitAssignment& a, const AuditOptions& options,
                          const FingerprintTable* fingerprints) {
  if (options.adjacency_window < 1) throw UsageError("adjacency_window must be >= 1");
  if (options.dup_threshold < 0 || options.dup_threshold > 64) throw UsageError("dup_threshold outside [0, 64]");
  check_assignment(m, a);
  if (fingerprints && fingerprints->size() != m.frames.size())
    throw DataError("fingerprint table does not match the manifest");

  LeakageReport r;
  r.options = options;
  r.test_frames = a.test.size();
  const auto vid = frame_video_index(m);

  // Patient and video overlap by set intersection.
  std::set<std::string> train_patients, test_patients, train_videos, test_videos;
  for (auto i : a.train) {
    train_videos.insert(m.frames[i].video_id);
    if (vid[i] != SIZE_MAX) train_patients.insert(m.videos[vid[i]].patient);
  }
  for (auto i : a.test) {
    test_videos.insert(m.frames[i].video_id);
    if (vid[i] != SIZE_MAX) test_patients.insert(m.videos[vid[i]].patient);
  }
  std::set_intersection(train_patients.begin(), train_patients.end(), test_patients.begin(), test_patients.end(),
                        std::back_inserter(r.patient_overlap));
  std::set_intersection(train_videos.begin(), train_videos.end(), test_videos.begin(), test_videos.end(),
                        std::back_inserter(r.video_overlap));

  // Adjacency: per video, train frames sorted by index, range lookup per test frame.
  std::unordered_map<std::string_view, std::vector<std::pair<std::int64_t, std::size_t>>> train_by_video;
  for (auto i : a.train) train_by_video[m.frames[i].video_id].emplace_back(m.frames[i].frame_index, i);
  for (auto& [id, list] : train_by_video) std::sort(list.begin(), list.end());
  for (auto t : a.test) {
    auto it = train_by_video.find(m.frames[t].video_id);
    if (it == train_by_video.end()) continue;
    const auto idx = m.frames[t].frame_index;
    const auto& list = it->second;
    auto lo = std::lower_bound(list.begin(), list.end(), std::make_pair(idx - options.adjacency_window, std::size_t{0}));
    for (; lo != list.end() && lo->first <= idx + options.adjacency_window; ++lo) {
      const auto gap = lo->first > idx ? lo->first - idx : idx - lo->first;
      r.adjacency_pairs.push_back(FramePair{t, lo->second, static_cast<int>(gap)});
    }
  }
  std::sort(r.adjacency_pairs.begin(), r.adjacency_pairs.end());

  if (fingerprints) {
    r.duplicates_checked = true;
    r.duplicate_pairs = duplicate_pairs(a.test, a.train, *fingerprints, options.dup_threshold, options.search);
  }

  std::set<std::size_t> contaminated;
  for (const auto& p : r.adjacency_pairs) contaminated.insert(p.test);
  for (const auto& p : r.duplicate_pairs) contaminated.insert(p.test);
  r.contaminated_test_frames = contaminated.size();
  r.contamination_rate =
      r.test_frames == 0 ? 0.0 : static_cast<double>(contaminated.size()) / static_cast<double>(r.test_frames);
  return r;
}

GateResult gate(const LeakageReport& report, const GatePolicy& policy) {
  GateResult g;
  if (policy.forbid_patient_overlap && !report.patient_overlap.empty())
    g.reasons.push_back(fmt::format("patient overlap: {} patients", report.patient_overlap.size()));
  if (policy.max_contamination && report.contamination_rate > *policy.max_contamination)
    g.reasons.push_back(fmt::format("contamination rate {:.4f} exceeds {:.4f}", report.contamination_rate,
                                    *policy.max_contamination));
  g.pass = g.reasons.empty();
  return g;
}

void write_leakage_text(std::ostream& out, const DatasetManifest& m, const LeakageReport& r) {
  out << fmt::format("test frames              {}\n", r.test_frames);
  out << fmt::format("patient overlap          {}\n", r.patient_overlap.size());
  out << fmt::format("video overlap            {}\n", r.video_overlap.size());
  out << fmt::format("adjacent pairs (<= {:>3})  {}\n", r.options.adjacency_window, r.adjacency_pairs.size());
  if (r.duplicates_checked)
    out << fmt::format("duplicate pairs (<= {:>2}) {}\n", r.options.dup_threshold, r.duplicate_pairs.size());
  else
    out << "duplicate pairs          skipped (no fingerprints)\n";
  out << fmt::format("contaminated test frames {} ({:.4f})\n", r.contaminated_test_frames, r.contamination_rate);
  for (const auto& p : r.patient_overlap) out << "  patient on both sides: " << p << '\n';
  constexpr std::size_t kShown = 20;
  for (std::size_t k = 0; k < std::min(kShown, r.duplicate_pairs.size()); ++k) {
    const auto& p = r.duplicate_pairs[k];
    out << fmt::format("  duplicate: test {} ~ train {} (hamming {})\n", frame_id(m.frames[p.test]),
                       frame_id(m.frames[p.train]), p.distance);
  }
  if (r.duplicate_pairs.size() > kShown) out << fmt::format("  ... {} more\n", r.duplicate_pairs.size() - kShown);
}

void write_leakage_csv(std::ostream& out, const DatasetManifest& m, const LeakageReport& r) {
  out << "kind,test,train,value\n";
  for (const auto& p : r.patient_overlap) out << "patient," << csv::quote(p) << ",,\n";
  for (const auto& v : r.video_overlap) out << "video," << csv::quote(v) << ",,\n";
  for (const auto& p : r.adjacency_pairs)
    out << "adjacent," << csv::quote(frame_id(m.frames[p.test])) << ',' << csv::quote(frame_id(m.frames[p.train]))
        << ',' << p.distance << '\n';
  for (const auto& p : r.duplicate_pairs)
    out << "duplicate," << csv::quote(frame_id(m.frames[p.test])) << ',' << csv::quote(frame_id(m.frames[p.train]))
        << ',' << p.distance << '\n';
  out << fmt::format("summary,contamination_rate,,{}\n", r.contamination_rate);
  out << fmt::format("summary,duplicates_checked,,{}\n", r.duplicates_checked ? 1 : 0);
}

}  // namespace otopipe
