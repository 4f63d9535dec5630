// Serial reference kernels against their OpenMP versions.

#include <benchmark/benchmark.h>

#include "otopipe/audit.hpp"
#include "otopipe/imaging.hpp"
#include "otopipe/rng.hpp"
#include "otopipe/synth.hpp"

using namespace otopipe;

namespace {

// One 1280x1024 frame, the capture size of the otoscope videos.
const GrayImage& frame() {
  static const GrayImage img = [] {
    GrayImage g(1280, 1024);
    SplitMix64 rng(1);
    for (auto& p : g.pixels()) p = static_cast<std::uint8_t>(rng.below(256));
    return g;
  }();
  return img;
}

void BM_LaplacianSerial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(serial::laplacian_variance(frame()));
}
void BM_LaplacianParallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(laplacian_variance(frame()));
}
void BM_EntropySerial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(serial::shannon_entropy(frame()));
}
void BM_EntropyParallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(shannon_entropy(frame()));
}
void BM_CropSerial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(serial::circular_crop(frame()));
}
void BM_CropParallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(circular_crop(frame()));
}
void BM_DownsampleSerial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(serial::box_downsample(frame(), 224, 224));
}
void BM_DownsampleParallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(box_downsample(frame(), 224, 224));
}

// Random thumbnails split 1:4 into test and train.
struct ThumbFixture {
  ThumbTable thumbs;
  std::vector<std::size_t> test, train;

  explicit ThumbFixture(std::size_t n) : thumbs(n) {
    SplitMix64 rng(2);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<std::uint8_t, kThumbSide * kThumbSide> t{};
      for (auto& p : t) p = static_cast<std::uint8_t>(rng.below(256));
      thumbs[i] = t;
      (i % 5 == 0 ? test : train).push_back(i);
    }
  }
};

void BM_NearestSerial(benchmark::State& s) {
  const ThumbFixture f(static_cast<std::size_t>(s.range(0)));
  for (auto _ : s) benchmark::DoNotOptimize(serial::nearest_train(f.thumbs, f.test, f.train, 5));
}
void BM_NearestParallel(benchmark::State& s) {
  const ThumbFixture f(static_cast<std::size_t>(s.range(0)));
  for (auto _ : s) benchmark::DoNotOptimize(nearest_train(f.thumbs, f.test, f.train, 5));
}

// Hashes where a third are near copies of earlier ones.
struct HashFixture {
  FingerprintTable hashes;
  std::vector<std::size_t> test, train;

  explicit HashFixture(std::size_t n) : hashes(n) {
    SplitMix64 rng(3);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t h = rng.next();
      if (i > 0 && rng.below(3) == 0) h = *hashes[rng.below(i)] ^ (std::uint64_t{1} << rng.below(64));
      hashes[i] = h;
      (i % 5 == 0 ? test : train).push_back(i);
    }
  }
};

void BM_DuplicatesSerial(benchmark::State& s) {
  const HashFixture f(static_cast<std::size_t>(s.range(0)));
  for (auto _ : s) benchmark::DoNotOptimize(serial::duplicate_pairs(f.test, f.train, f.hashes, 5));
}
void BM_DuplicatesAllPairs(benchmark::State& s) {
  const HashFixture f(static_cast<std::size_t>(s.range(0)));
  for (auto _ : s)
    benchmark::DoNotOptimize(duplicate_pairs(f.test, f.train, f.hashes, 5, DuplicateSearch::AllPairs));
}
void BM_DuplicatesBlocked(benchmark::State& s) {
  const HashFixture f(static_cast<std::size_t>(s.range(0)));
  for (auto _ : s)
    benchmark::DoNotOptimize(duplicate_pairs(f.test, f.train, f.hashes, 5, DuplicateSearch::Blocked));
}

}  // namespace

BENCHMARK(BM_LaplacianSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LaplacianParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EntropySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EntropyParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CropSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CropParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DownsampleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DownsampleParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_NearestSerial)->Arg(2880)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestParallel)->Arg(2880)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DuplicatesSerial)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DuplicatesAllPairs)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DuplicatesBlocked)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
