#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "otopipe/csv.hpp"
#include "otopipe/manifest.hpp"
#include "support.hpp"

using testing::TempDir;
namespace fs = std::filesystem;

namespace {

const std::string kBinary = OTOPIPE_BIN;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs the CLI inside `dir`, capturing stdout and stderr into dir/last.log.
int run(const TempDir& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" + kBinary + "' " + args + " > last.log 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string last_log(const TempDir& dir) { return slurp(dir / "last.log"); }

const char* kCells =
    "row_level,col_level,count,mean,variance\n"
    "With leakage,Swin v1,6,0.990736,3.1E-05\n"
    "With leakage,Swin v2,6,1,0\n"
    "With leakage,ResNet 50,6,0.99561,1.45E-06\n"
    "Without leakage,Swin v1,6,0.837967,0.003306\n"
    "Without leakage,Swin v2,6,0.842163,0.003373\n"
    "Without leakage,ResNet 50,6,0.815268,0.000776\n";

const std::string kSmallSynth =
    "synth --patients-per-class 3 --videos-per-patient 2 --frames-per-video 8 --image-side 32 --runs 3";

}  // namespace

TEST_CASE("anova on a cell table") {
  TempDir dir("cli-anova");
  testing::write_text(dir / "cells.csv", kCells);
  REQUIRE(run(dir, "--out out anova --summaries cells.csv") == 0);
  CHECK(last_log(dir).find("Sample") != std::string::npos);
  const auto t = otopipe::csv::Table::read(dir / "out/anova.csv");
  const auto f = t.require_column("f");
  const auto& sample = t.rows()[0].fields;
  CHECK(sample[0] == "Sample");
  CHECK(std::stod(sample[f]) == doctest::Approx(193.14).epsilon(1e-3));
  CHECK(fs::exists(dir / "out/anova.txt"));
  CHECK(slurp(dir / "out/run.log").find("anova --summaries cells.csv") != std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir dir("cli-exit");
  CHECK(run(dir, "") == 1);
  CHECK(run(dir, "split --no-such-flag") == 1);
  CHECK(run(dir, "split --test-fraction 1.5 --manifest x.tsv") != 0);
  CHECK(run(dir, "anova") == 1);
  CHECK(run(dir, "--manifest missing.tsv split") == 2);
  testing::write_text(dir / "bad.csv", "row_level,col_level,count,mean,variance\na,x,2,1,0\n");
  CHECK(run(dir, "anova --summaries bad.csv") == 2);
  testing::write_text(dir / "cfg.json", "{\"splitt\": {}}");
  CHECK(run(dir, "--config cfg.json anova --summaries bad.csv") == 1);
  CHECK(run(dir, "--help") == 0);
}

TEST_CASE("split and audit gate") {
  TempDir dir("cli-gate");
  REQUIRE(run(dir, "--out s " + kSmallSynth) == 0);
  REQUIRE(fs::exists(dir / "s/manifest.tsv"));

  REQUIRE(run(dir, "--manifest s/manifest.tsv --out g --seed 4 split --strategy grouped --runs 3") == 0);
  CHECK(run(dir, "--manifest s/manifest.tsv --out g audit") == 0);
  CHECK(fs::exists(dir / "g/audit/summary.csv"));
  CHECK(fs::exists(dir / "g/audit/run_2.txt"));

  REQUIRE(run(dir, "--manifest s/manifest.tsv --out n --seed 4 split --strategy naive --runs 2") == 0);
  CHECK(run(dir, "--manifest s/manifest.tsv --out n audit") == 3);
  CHECK(last_log(dir).find("gate") != std::string::npos);
  CHECK(run(dir, "--manifest s/manifest.tsv --out n audit --allow-patient-overlap") == 0);
  CHECK(run(dir, "--manifest s/manifest.tsv --out n audit --allow-patient-overlap --max-contamination 0.1") == 3);
}

TEST_CASE("outputs are identical across reruns") {
  TempDir dir("cli-idem");
  REQUIRE(run(dir, "--out a " + kSmallSynth) == 0);
  REQUIRE(run(dir, "--out b " + kSmallSynth) == 0);
  for (const char* file : {"splits_naive.csv", "splits_grouped.csv", "predictions_naive_1nn.csv",
                           "summary_grouped.csv", "delta.csv", "anova.csv"})
    CHECK(slurp(dir / "a" / file) == slurp(dir / "b" / file));
  REQUIRE(run(dir, "--manifest a/manifest.tsv --out x --seed 9 split --runs 4") == 0);
  const auto first = slurp(dir / "x/splits.csv");
  REQUIRE(run(dir, "--manifest a/manifest.tsv --out x --seed 9 split --runs 4") == 0);
  CHECK(slurp(dir / "x/splits.csv") == first);
  REQUIRE(run(dir, "--manifest a/manifest.tsv --out x --seed 10 split --runs 4") == 0);
  CHECK(slurp(dir / "x/splits.csv") != first);
}

TEST_CASE("ingest, score, filter, split, eval and report") {
  TempDir dir("cli-chain");
  REQUIRE(run(dir, "--out s " + kSmallSynth) == 0);

  // Diagnosis table from the generated manifest.
  std::ifstream in(dir / "s/manifest.tsv");
  const auto m = otopipe::read_manifest(in);
  std::ostringstream diag;
  diag << "patient_id,video_id,label\n";
  for (const auto& v : m.videos) diag << v.patient << "," << v.video_id << "," << otopipe::label_name(v.label) << "\n";
  testing::write_text(dir / "diagnoses.csv", diag.str());

  REQUIRE(run(dir, "--out w ingest --root s/synth/frames --diagnoses diagnoses.csv") == 0);
  REQUIRE(fs::exists(dir / "w/manifest.tsv"));
  REQUIRE(run(dir, "--manifest w/manifest.tsv --out w score --trim 0.1") == 0);
  REQUIRE(run(dir, "--manifest w/scored.tsv --out w filter --laplacian-percentile 10") == 0);
  CHECK(fs::exists(dir / "w/pipeline.csv"));
  CHECK(fs::exists(dir / "w/filtered.tsv"));
  CHECK(run(dir, "--manifest w/manifest.tsv --out w filter") == 2);  // not scored

  REQUIRE(run(dir,
              "--manifest s/manifest.tsv --out e eval --predictions s/predictions_grouped_1nn.csv "
              "--splits s/splits_grouped.csv --model 1-NN") == 0);
  CHECK(fs::exists(dir / "e/metrics.csv"));
  CHECK(fs::exists(dir / "e/summary.csv"));
  // Predictions for naive-split frames are not on the grouped test side.
  CHECK(run(dir,
            "--manifest s/manifest.tsv --out e2 eval --predictions s/predictions_naive_1nn.csv "
            "--splits s/splits_grouped.csv") == 2);

  REQUIRE(run(dir, "--out s report") == 0);
  const auto report = slurp(dir / "s/report.csv");
  CHECK(report.rfind("section,source,name,metric,value\n", 0) == 0);
  CHECK(report.find("delta") != std::string::npos);
  CHECK(report.find("anova") != std::string::npos);
  CHECK(report.find("audit") != std::string::npos);
  CHECK(run(dir, "--out empty report") == 2);
}
