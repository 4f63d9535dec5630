#include <doctest.h>

#include <set>
#include <sstream>

#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"
#include "otopipe/manifest.hpp"
#include "otopipe/pnm.hpp"
#include "support.hpp"

using namespace otopipe;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

void put_frame(const TempDir& root, const std::string& rel) {
  fs::create_directories((root / rel).parent_path());
  pnm::write(root / rel, GrayImage(4, 4, 100));
}

DatasetManifest random_scored_manifest(std::uint64_t seed) {
  SplitMix64 rng(seed);
  DatasetManifest m = testing::make_manifest(rng, 1 + static_cast<int>(rng.below(8)), 3, 12);
  for (auto& f : m.frames) {
    const auto pick = rng.below(5);
    if (pick == 0) continue;
    f.laplacian_variance = rng.uniform() * 5000.0;
    f.shannon_entropy = rng.uniform() * 8.0;
    if (pick == 1) {
      f.included = false;
      f.reason = std::string(reason::kQuality);
    }
    if (pick == 2) f.path = "dir with spaces/tab\there/new\nline\\x.pgm";
  }
  return m;
}

}  // namespace

TEST_CASE("labels have stable ordinals and loose parsing") {
  CHECK(ordinal(ClassLabel::ChronicOtitisMedia) == 0);
  CHECK(ordinal(ClassLabel::Earwax) == 1);
  CHECK(ordinal(ClassLabel::Myringosclerosis) == 2);
  CHECK(ordinal(ClassLabel::Normal) == 3);
  for (auto l : kAllLabels) {
    CHECK(parse_label(label_name(l)) == l);
    CHECK(label_from_ordinal(ordinal(l)) == l);
  }
  CHECK(parse_label("chronic otitis media") == ClassLabel::ChronicOtitisMedia);
  CHECK(parse_label("Ear_Wax") == ClassLabel::Earwax);
  CHECK(parse_label("3") == ClassLabel::Normal);
  CHECK_FALSE(parse_label("otitis externa"));
  CHECK_FALSE(label_from_ordinal(4));
}

TEST_CASE("capture periods") {
  CHECK(parse_period("2021-03") == CapturePeriod{2021, 3});
  CHECK(parse_period("2021_11") == CapturePeriod{2021, 11});
  CHECK(parse_period("202107") == CapturePeriod{2021, 7});
  CHECK_FALSE(parse_period("2021-13"));
  CHECK_FALSE(parse_period("march"));
  CHECK(format_period(CapturePeriod{2019, 4}) == "2019-04");
}

TEST_CASE("csv parsing") {
  std::istringstream in("# comment\nA,b\n\n 1 ,\"x, \"\"y\"\"\"\n");
  const auto t = csv::Table::parse(in, "mem");
  REQUIRE(t.rows().size() == 1);
  CHECK(t.rows()[0].line == 4);
  CHECK(t.rows()[0].fields[0] == "1");
  CHECK(t.rows()[0].fields[1] == "x, \"y\"");
  CHECK(t.column("a") == 0u);
  CHECK_THROWS_AS(t.require_column("c"), DataError);
  CHECK(csv::quote("plain") == "plain");
  CHECK(csv::quote("a,b") == "\"a,b\"");
  CHECK_THROWS_AS(csv::parse_double("1.5x", "v"), DataError);
  CHECK(csv::parse_int("-7", "v") == -7);
}

TEST_CASE("ingest_tree: empty root") {
  TempDir root("ingest");
  testing::write_text(root / "dx.csv", "patient_id,video_id,label\n");
  fs::create_directories(root / "tree");
  const auto r = ingest_tree(root / "tree", root / "dx.csv");
  CHECK(r.manifest.videos.empty());
  CHECK(r.manifest.frames.empty());
}

TEST_CASE("ingest_tree: single video") {
  TempDir root("ingest");
  for (int i = 0; i < 3; ++i) put_frame(root, fmt::format("tree/2021-05/P1/V1/{}.pgm", i));
  testing::write_text(root / "dx.csv", "patient_id,video_id,label\nP1,V1,Earwax\n");
  const auto r = ingest_tree(root / "tree", root / "dx.csv");
  REQUIRE(r.manifest.videos.size() == 1);
  CHECK(r.manifest.frames.size() == 3);
  const auto counts = r.manifest.label_counts();
  CHECK(counts[ordinal(ClassLabel::Earwax)] == 3);
  CHECK(counts[0] + counts[1] + counts[2] + counts[3] == 3);
  CHECK(r.manifest.videos[0].capture_period == CapturePeriod{2021, 5});
  CHECK(r.manifest.videos[0].frame_count == 3);
  for (const auto& f : r.manifest.frames) {
    CHECK(f.included);
    CHECK_FALSE(f.laplacian_variance);
  }
  CHECK(validate(r.manifest).empty());
}

TEST_CASE("ingest_tree: orphan video is reported and excluded") {
  TempDir root("ingest");
  put_frame(root, "tree/2021-05/P1/V1/0.pgm");
  put_frame(root, "tree/2021-05/P1/V2/0.pgm");
  testing::write_text(root / "tree/2021-05/P1/V2/notes.txt", "x");
  testing::write_text(root / "dx.csv", "patient_id,video_id,label\nP1,V1,Normal\nP9,V9,normal\n");
  const auto r = ingest_tree(root / "tree", root / "dx.csv");
  CHECK(r.manifest.videos.size() == 1);
  CHECK(r.report.orphan_videos == std::vector<std::string>{"V2"});
  CHECK(r.report.missing_videos == std::vector<std::string>{"V9"});
  CHECK(r.report.skipped_files.size() == 1);
}

TEST_CASE("ingest_tree: fatal errors") {
  TempDir root("ingest");
  put_frame(root, "tree/2021-05/P1/V1/0.pgm");
  SUBCASE("unknown label names the row") {
    testing::write_text(root / "dx.csv", "patient_id,video_id,label\nP1,V1,otitis externa\n");
    try {
      (void)ingest_tree(root / "tree", root / "dx.csv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(":2:") != std::string::npos);
      CHECK(msg.find("otitis externa") != std::string::npos);
    }
  }
  SUBCASE("duplicate frame index") {
    put_frame(root, "tree/2021-05/P1/V1/00.pgm");
    testing::write_text(root / "dx.csv", "patient_id,video_id,label\nP1,V1,normal\n");
    CHECK_THROWS_AS((void)ingest_tree(root / "tree", root / "dx.csv"), DataError);
  }
  SUBCASE("missing root") {
    testing::write_text(root / "dx.csv", "patient_id,video_id,label\n");
    CHECK_THROWS_AS((void)ingest_tree(root / "nope", root / "dx.csv"), DataError);
  }
}

TEST_CASE("ingest_tree is deterministic") {
  TempDir root("ingest");
  for (const char* rel : {"tree/2020-01/B/V3/2.pgm", "tree/2020-01/B/V3/0.pgm", "tree/2020-02/A/V1/5.pgm",
                          "tree/2020-02/A/V2/1.pgm"})
    put_frame(root, rel);
  testing::write_text(root / "dx.csv", "patient_id,video_id,label\nB,V3,1\nA,V1,0\nA,V2,2\n");
  const auto a = to_string(ingest_tree(root / "tree", root / "dx.csv").manifest);
  const auto b = to_string(ingest_tree(root / "tree", root / "dx.csv").manifest);
  CHECK(a == b);
  const auto m = ingest_tree(root / "tree", root / "dx.csv").manifest;
  REQUIRE(m.frames.size() == 4);
  CHECK(m.frames[0].video_id == "V1");
  CHECK(m.frames[2].video_id == "V3");
  CHECK(m.frames[3].frame_index == 2);
  // Frame count spans the highest index seen.
  CHECK(m.find_video("V1")->frame_count == 6);
}

TEST_CASE("ingest_mapping joins a frame table") {
  TempDir root("ingest");
  put_frame(root, "frames/a.pgm");
  put_frame(root, "frames/b.pgm");
  testing::write_text(root / "map.csv", "path,patient_id,video_id,frame_index,period\nframes/a.pgm,P1,V1,0,2021-02\n"
                                        "frames/b.pgm,P1,V1,1,2021-02\n");
  testing::write_text(root / "dx.csv", "patient_id,video_id,label\nP1,V1,Myringosclerosis\n");
  const auto r = ingest_mapping(root / "map.csv", root / "dx.csv");
  REQUIRE(r.manifest.frames.size() == 2);
  CHECK(fs::path(r.manifest.frames[0].path).is_absolute());
  CHECK(r.manifest.videos[0].capture_period == CapturePeriod{2021, 2});
}

TEST_CASE("validate") {
  SplitMix64 rng(3);
  DatasetManifest m = testing::make_manifest(rng, 4, 2, 5);
  CHECK(validate(m).empty());

  SUBCASE("frame with unknown video") {
    FrameRecord f;
    f.video_id = "ghost";
    m.frames.push_back(f);
    const auto v = validate(m);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "unknown-video");
    CHECK(v[0].entity.find("ghost:0") != std::string::npos);
  }
  SUBCASE("entropy out of range") {
    m.frames[0].shannon_entropy = 9.0;
    const auto v = validate(m);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "entropy-range");
    CHECK(has_errors(v));
  }
  SUBCASE("patient with two labels is a warning") {
    VideoRecord extra = m.videos[0];
    extra.video_id = "extra";
    extra.label = extra.label == ClassLabel::Normal ? ClassLabel::Earwax : ClassLabel::Normal;
    extra.frame_count = 0;
    m.videos.push_back(extra);
    const auto v = validate(m);
    REQUIRE(v.size() == 1);
    CHECK(v[0].severity == Severity::Warning);
    CHECK_FALSE(has_errors(v));
  }
  SUBCASE("index outside frame_count") {
    m.frames[0].frame_index = 1000;
    const auto v = validate(m);
    CHECK(has_errors(v));
  }
}

TEST_CASE("save/load round trip") {
  SUBCASE("empty") {
    DatasetManifest empty;
    std::istringstream in(to_string(empty));
    CHECK(read_manifest(in) == empty);
  }
  SUBCASE("random manifests") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const DatasetManifest m = random_scored_manifest(seed);
      std::istringstream in(to_string(m));
      CHECK(read_manifest(in) == m);
    }
  }
  SUBCASE("100-frame manifest through a file") {
    SplitMix64 rng(11);
    DatasetManifest m = testing::make_manifest(rng, 10, 1, 1);
    while (m.frames.size() < 100) m = testing::make_manifest(rng, 10, 2, 10);
    TempDir dir("manifest");
    save(m, dir / "m.tsv");
    CHECK(load(dir / "m.tsv") == m);
  }
}

TEST_CASE("malformed manifests name the position") {
  const std::string text = to_string(random_scored_manifest(5));
  SUBCASE("truncated") {
    std::istringstream in(text.substr(0, text.size() / 2));
    try {
      (void)read_manifest(in, "m.tsv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
  }
  SUBCASE("bad field") {
    std::string bad = text;
    const auto pos = bad.find("\nframe\t");
    REQUIRE(pos != std::string::npos);
    const auto idx = bad.find('\t', pos + 7);
    bad.insert(idx + 1, "x");
    std::istringstream in(bad);
    try {
      (void)read_manifest(in, "m.tsv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("line") != std::string::npos);
      CHECK(msg.find("field") != std::string::npos);
    }
  }
  SUBCASE("wrong header") {
    std::istringstream in("something else\n");
    CHECK_THROWS_AS((void)read_manifest(in), DataError);
  }
}

TEST_CASE("label counts sum to the frame total") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SplitMix64 rng(seed);
    const auto m = testing::make_manifest(rng, 1 + static_cast<int>(rng.below(20)), 3, 30);
    const auto c = m.label_counts();
    CHECK(c[0] + c[1] + c[2] + c[3] == static_cast<std::int64_t>(m.frames.size()));
  }
}
