// Shared fixtures for the test binaries.
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <unistd.h>

#include <fmt/core.h>

#include "otopipe/imaging.hpp"
#include "otopipe/manifest.hpp"
#include "otopipe/rng.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() / fmt::format("otopipe-{}-{}-{}", tag, ::getpid(), counter++);
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline otopipe::GrayImage random_image(otopipe::SplitMix64& rng, int w, int h, int levels = 256) {
  otopipe::GrayImage img(w, h);
  for (auto& px : img.pixels()) px = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(levels)));
  return img;
}

// In-memory manifest: `patients` patients with 1..max_videos videos of
// 1..max_frames frames each. Labels cycle through the classes by patient so
// every class is present once there are >= 4 patients. Paths are fake.
inline otopipe::DatasetManifest make_manifest(otopipe::SplitMix64& rng, int patients, int max_videos,
                                              int max_frames) {
  using namespace otopipe;
  DatasetManifest m;
  for (int p = 0; p < patients; ++p) {
    const std::string pid = fmt::format("P{:03d}", p);
    const auto label = kAllLabels[static_cast<std::size_t>(p % kNumClasses)];
    const int videos = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_videos)));
    for (int v = 0; v < videos; ++v) {
      VideoRecord rec;
      rec.video_id = fmt::format("{}V{}", pid, v);
      rec.patient = pid;
      rec.label = label;
      rec.capture_period = CapturePeriod{2022, 1 + p % 12};
      rec.frame_count = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_frames)));
      m.videos.push_back(rec);
      for (std::int64_t f = 0; f < rec.frame_count; ++f) {
        FrameRecord fr;
        fr.video_id = rec.video_id;
        fr.frame_index = f;
        fr.path = fmt::format("/nonexistent/{}/{}.pgm", rec.video_id, f);
        m.frames.push_back(fr);
      }
    }
  }
  return m;
}

}  // namespace testing
