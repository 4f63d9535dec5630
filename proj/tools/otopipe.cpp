// otopipe: frame-dataset preparation, leakage audit, evaluation and ANOVA.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 leakage gate failure.
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "otopipe/audit.hpp"
#include "otopipe/csv.hpp"
#include "otopipe/error.hpp"
#include "otopipe/evaluation.hpp"
#include "otopipe/manifest.hpp"
#include "otopipe/pipeline.hpp"
#include "otopipe/splitting.hpp"
#include "otopipe/stats.hpp"
#include "otopipe/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace otopipe;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitGate = 3;

struct Globals {
  std::string manifest;
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "otopipe-out";
  bool quiet = false;
};

Globals g;
json config_doc = json::object();
std::string config_digest = "none";

void log(const std::string& line) {
  if (!g.quiet) std::cerr << line << '\n';
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void load_config() {
  if (g.config.empty()) return;
  const std::string text = slurp(g.config);
  config_digest = fmt::format("{:016x}", fnv1a(text));
  try {
    config_doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", g.config, e.what()));
  }
  if (!config_doc.is_object()) throw DataError(fmt::format("{}: top level must be an object", g.config));
  static const std::set<std::string> sections = {"pipeline", "split", "audit", "synth"};
  for (const auto& [key, _] : config_doc.items())
    if (!sections.count(key)) throw UsageError(fmt::format("{}: unknown section '{}'", g.config, key));
}

// Returns the config section, rejecting keys outside `allowed`.
json section(const std::string& name, const std::set<std::string>& allowed) {
  if (!config_doc.contains(name)) return json::object();
  const json& s = config_doc[name];
  if (!s.is_object()) throw UsageError(fmt::format("{}: section '{}' must be an object", g.config, name));
  for (const auto& [key, _] : s.items())
    if (!allowed.count(key)) throw UsageError(fmt::format("{}: unknown key '{}.{}'", g.config, name, key));
  return s;
}

template <class T>
void take(const json& s, const char* key, T& dst) {
  if (!s.contains(key)) return;
  try {
    dst = s.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("{}: key '{}' has the wrong type", g.config, key));
  }
}

QualityPolicy parse_policy(const json& v, const char* key) {
  if (!v.is_object() || v.size() != 1) throw UsageError(fmt::format("{}: '{}' needs one of percentile/absolute", g.config, key));
  if (v.contains("percentile")) return QualityPolicy::percentile(v["percentile"].get<double>());
  if (v.contains("absolute")) return QualityPolicy::absolute(v["absolute"].get<double>());
  throw UsageError(fmt::format("{}: '{}' needs one of percentile/absolute", g.config, key));
}

PipelineConfig pipeline_config() {
  PipelineConfig c;
  const json s = section("pipeline", {"trim_fraction", "laplacian", "entropy", "crop", "fill"});
  take(s, "trim_fraction", c.trim_fraction);
  if (s.contains("laplacian")) c.laplacian = parse_policy(s["laplacian"], "laplacian");
  if (s.contains("entropy")) c.entropy = parse_policy(s["entropy"], "entropy");
  take(s, "crop", c.crop_enabled);
  int fill = c.fill;
  take(s, "fill", fill);
  if (fill < 0 || fill > 255) throw UsageError("pipeline.fill must lie in [0, 255]");
  c.fill = static_cast<std::uint8_t>(fill);
  return c;
}

struct AuditConfig {
  AuditOptions options;
  GatePolicy gate;
};

AuditConfig audit_config() {
  AuditConfig c;
  const json s = section("audit", {"adjacency_window", "dup_threshold", "max_contamination", "forbid_patient_overlap"});
  take(s, "adjacency_window", c.options.adjacency_window);
  take(s, "dup_threshold", c.options.dup_threshold);
  take(s, "forbid_patient_overlap", c.gate.forbid_patient_overlap);
  if (s.contains("max_contamination") && !s["max_contamination"].is_null()) {
    double v = 0;
    take(s, "max_contamination", v);
    c.gate.max_contamination = v;
  }
  return c;
}

SplitSpec split_config() {
  SplitSpec spec;
  const json s = section("split", {"strategy", "test_fraction", "runs"});
  if (s.contains("strategy")) spec.strategy = parse_strategy(s["strategy"].get<std::string>());
  take(s, "test_fraction", spec.test_fraction);
  take(s, "runs", spec.run_count);
  return spec;
}

struct SynthSettings {
  SynthConfig config;
  std::vector<int> ks = {1, 3, 5};
  double test_fraction = 0.2;
  int runs = 11;
};

SynthSettings synth_config() {
  SynthSettings st;
  auto& c = st.config;
  const json s = section("synth", {"patients_per_class", "videos_per_patient", "frames_per_video", "image_side",
                                   "class_signal", "patient_signal", "temporal_noise", "temporal_correlation",
                                   "pixel_noise", "field_grid", "ks", "test_fraction", "runs"});
  take(s, "patients_per_class", c.patients_per_class);
  take(s, "videos_per_patient", c.videos_per_patient);
  take(s, "frames_per_video", c.frames_per_video);
  take(s, "image_side", c.image_side);
  take(s, "class_signal", c.class_signal);
  take(s, "patient_signal", c.patient_signal);
  take(s, "temporal_noise", c.temporal_noise);
  take(s, "temporal_correlation", c.temporal_correlation);
  take(s, "pixel_noise", c.pixel_noise);
  take(s, "field_grid", c.field_grid);
  take(s, "ks", st.ks);
  take(s, "test_fraction", st.test_fraction);
  take(s, "runs", st.runs);
  return st;
}

fs::path out_dir() {
  fs::path p = g.out;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError(fmt::format("cannot create output directory '{}': {}", p.string(), ec.message()));
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(fmt::format("cannot write '{}'", p.string()));
  return f;
}

template <class Fn>
void write_file(const fs::path& p, Fn&& fn) {
  auto f = open_out(p);
  fn(f);
  f.flush();
  if (!f) throw DataError(fmt::format("write failed: '{}'", p.string()));
}

DatasetManifest require_manifest() {
  if (g.manifest.empty()) throw UsageError("--manifest is required");
  return load(g.manifest);
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open '{}'", p.string()));
  return f;
}

std::vector<SplitAssignment> load_splits(const std::string& path, const DatasetManifest& m) {
  auto in = open_in(path);
  return read_splits(in, m, path);
}

void append_provenance(const std::string& command, int code) {
  std::error_code ec;
  fs::create_directories(g.out, ec);
  std::ofstream log_file(fs::path(g.out) / "run.log", std::ios::app);
  if (!log_file) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  log_file << fmt::format("{}\tcommand={}\tconfig={}\tseed={}\texit={}\n", stamp, command, config_digest, g.seed, code);
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestArgs {
  std::string root, mapping, diagnoses;
};

int cmd_ingest(const IngestArgs& a) {
  if (a.root.empty() == a.mapping.empty()) throw UsageError("ingest needs exactly one of --root or --mapping");
  IngestResult r = a.root.empty() ? ingest_mapping(a.mapping, a.diagnoses) : ingest_tree(a.root, a.diagnoses);
  for (const auto& v : r.report.orphan_videos) log(fmt::format("warning: video {} has no diagnosis row; left out", v));
  for (const auto& v : r.report.missing_videos) log(fmt::format("warning: diagnosis row for video {} has no frames", v));
  for (const auto& f : r.report.skipped_files) log(fmt::format("warning: skipped {}", f));
  const auto violations = validate(r.manifest);
  for (const auto& v : violations)
    std::cerr << fmt::format("{}: {} [{}] {}\n", v.severity == Severity::Error ? "error" : "warning", v.entity,
                             v.rule, v.message);
  if (has_errors(violations)) return kExitData;
  const fs::path dst = g.manifest.empty() ? out_dir() / "manifest.tsv" : fs::path(g.manifest);
  save(r.manifest, dst);
  log(fmt::format("ingested {} videos, {} frames -> {}", r.manifest.videos.size(), r.manifest.frames.size(),
                  dst.string()));
  return kExitOk;
}

struct ScoreArgs {
  std::optional<double> trim;
};

int cmd_score(const ScoreArgs& a) {
  PipelineConfig c = pipeline_config();
  if (a.trim) c.trim_fraction = *a.trim;
  c.validate();
  const DatasetManifest m = require_manifest();
  const DatasetManifest scored = score_frames(apply_trim(m, c.trim_fraction));
  const fs::path dst = out_dir() / "scored.tsv";
  save(scored, dst);
  const auto r = tally(scored);
  log(fmt::format("scored {} frames ({} trimmed, {} unreadable) -> {}", r.total, r.dropped_trim,
                  r.dropped_unreadable, dst.string()));
  return kExitOk;
}

struct FilterArgs {
  std::optional<double> lap_pct, ent_pct, lap_abs, ent_abs;
  bool no_crop = false;
  std::optional<int> fill;
};

int cmd_filter(const FilterArgs& a) {
  PipelineConfig c = pipeline_config();
  if (a.lap_pct) c.laplacian = QualityPolicy::percentile(*a.lap_pct);
  if (a.lap_abs) c.laplacian = QualityPolicy::absolute(*a.lap_abs);
  if (a.ent_pct) c.entropy = QualityPolicy::percentile(*a.ent_pct);
  if (a.ent_abs) c.entropy = QualityPolicy::absolute(*a.ent_abs);
  if (a.no_crop) c.crop_enabled = false;
  if (a.fill) {
    if (*a.fill < 0 || *a.fill > 255) throw UsageError("--fill must lie in [0, 255]");
    c.fill = static_cast<std::uint8_t>(*a.fill);
  }
  c.validate();
  const DatasetManifest scored = require_manifest();
  for (const auto& f : scored.frames)
    if (f.included && !f.laplacian_variance)
      throw DataError(fmt::format("frame {} has no scores; run `score` first", frame_id(f)));
  FilterResult r = filter_frames(scored, c);
  const fs::path out = out_dir();
  if (c.crop_enabled) r.manifest = crop_frames(r.manifest, c.fill, out / "frames");
  save(r.manifest, out / "filtered.tsv");
  write_file(out / "pipeline.txt", [&](std::ostream& o) { write_report_text(o, r.report); });
  write_file(out / "pipeline.csv", [&](std::ostream& o) { write_report_csv(o, r.report); });
  for (const auto& w : r.report.warnings) log("warning: " + w);
  log(fmt::format("kept {} of {} frames -> {}", r.report.kept, r.report.total, (out / "filtered.tsv").string()));
  return kExitOk;
}

struct SplitArgs {
  std::string strategy;
  std::optional<double> test_fraction;
  std::optional<int> runs;
};

int cmd_split(const SplitArgs& a) {
  SplitSpec spec = split_config();
  if (!a.strategy.empty()) spec.strategy = parse_strategy(a.strategy);
  if (a.test_fraction) spec.test_fraction = *a.test_fraction;
  if (a.runs) spec.run_count = *a.runs;
  spec.seed = g.seed;
  spec.validate();
  const DatasetManifest m = require_manifest();
  const auto runs = run_series(m, spec);
  const fs::path dst = out_dir() / "splits.csv";
  write_file(dst, [&](std::ostream& o) { write_splits(o, m, runs); });
  log(fmt::format("{} split, {} runs -> {}", strategy_name(spec.strategy), runs.size(), dst.string()));
  return kExitOk;
}

struct AuditArgs {
  std::string splits;
  std::optional<int> window, dup_threshold;
  std::optional<double> max_contamination;
  bool allow_patient_overlap = false;
  bool no_duplicates = false;
};

struct AuditedRun {
  int run;
  LeakageReport report;
  GateResult gate;
};

void write_audit_outputs(const fs::path& dir, const DatasetManifest& m, const std::vector<AuditedRun>& runs) {
  fs::create_directories(dir);
  for (const auto& r : runs) {
    write_file(dir / fmt::format("run_{}.txt", r.run), [&](std::ostream& o) { write_leakage_text(o, m, r.report); });
    write_file(dir / fmt::format("run_{}.csv", r.run), [&](std::ostream& o) { write_leakage_csv(o, m, r.report); });
  }
  write_file(dir / "summary.csv", [&](std::ostream& o) {
    o << "run,test_frames,patient_overlap,video_overlap,adjacent_pairs,duplicate_pairs,contaminated,contamination_rate,"
         "gate\n";
    for (const auto& r : runs) {
      const auto& l = r.report;
      o << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.run, l.test_frames, l.patient_overlap.size(),
                       l.video_overlap.size(), l.adjacency_pairs.size(),
                       l.duplicates_checked ? fmt::format("{}", l.duplicate_pairs.size()) : std::string(),
                       l.contaminated_test_frames, l.contamination_rate, r.gate.pass ? "pass" : "fail");
    }
  });
}

std::vector<AuditedRun> audit_runs(const DatasetManifest& m, const std::vector<SplitAssignment>& splits,
                                   const AuditConfig& c, const FingerprintTable* fp) {
  std::vector<AuditedRun> out;
  for (const auto& s : splits) {
    LeakageReport r = audit_split(m, s, c.options, fp);
    GateResult gr = gate(r, c.gate);
    out.push_back(AuditedRun{s.run_index, std::move(r), std::move(gr)});
  }
  return out;
}

int cmd_audit(const AuditArgs& a) {
  AuditConfig c = audit_config();
  if (a.window) c.options.adjacency_window = *a.window;
  if (a.dup_threshold) c.options.dup_threshold = *a.dup_threshold;
  if (a.max_contamination) c.gate.max_contamination = *a.max_contamination;
  if (a.allow_patient_overlap) c.gate.forbid_patient_overlap = false;
  if (c.options.adjacency_window < 1) throw UsageError("--window must be >= 1");
  if (c.options.dup_threshold < 0 || c.options.dup_threshold > 64) throw UsageError("--dup-threshold must lie in [0, 64]");
  const DatasetManifest m = require_manifest();
  const fs::path splits_path = a.splits.empty() ? fs::path(g.out) / "splits.csv" : fs::path(a.splits);
  const auto splits = load_splits(splits_path.string(), m);
  FingerprintTable fp;
  if (!a.no_duplicates) fp = compute_fingerprints(m);
  const auto runs = audit_runs(m, splits, c, a.no_duplicates ? nullptr : &fp);
  write_audit_outputs(out_dir() / "audit", m, runs);
  bool pass = true;
  for (const auto& r : runs) {
    if (!g.quiet) {
      std::cout << fmt::format("run {}: ", r.run);
      std::cout << fmt::format("patient overlap {}, adjacent pairs {}, contamination {:.4f}\n",
                               r.report.patient_overlap.size(), r.report.adjacency_pairs.size(),
                               r.report.contamination_rate);
    }
    for (const auto& why : r.gate.reasons) std::cerr << fmt::format("gate: run {}: {}\n", r.run, why);
    pass = pass && r.gate.pass;
  }
  return pass ? kExitOk : kExitGate;
}

struct EvalArgs {
  std::string predictions, splits, model = "model";
};

int cmd_eval(const EvalArgs& a) {
  const PredictionSet p = read_predictions(fs::path(a.predictions));
  for (const auto& w : prediction_warnings(p)) log("warning: " + w);
  if (!a.splits.empty()) {
    const DatasetManifest m = require_manifest();
    check_predictions_against_splits(p, m, load_splits(a.splits, m));
  }
  const auto reports = evaluate_runs(p);
  const fs::path out = out_dir();
  write_file(out / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, reports); });
  write_file(out / "per_class.txt", [&](std::ostream& o) {
    for (const auto& r : reports) write_per_class_text(o, r);
  });
  const RunSummary s = summarize_runs(reports);
  write_file(out / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, a.model, s); });
  if (!g.quiet)
    for (const auto& [name, v] : s.metrics) std::cout << fmt::format("{:<18} {:.4f}\n", name, v.mean);
  return kExitOk;
}

struct AnovaArgs {
  std::string summaries, raw;
  double alpha = 0.05;
};

int cmd_anova(const AnovaArgs& a) {
  if (a.summaries.empty() == a.raw.empty()) throw UsageError("anova needs exactly one of --summaries or --raw");
  if (!(a.alpha > 0 && a.alpha < 1)) throw UsageError("--alpha must lie in (0, 1)");
  std::optional<AnovaTable> t;
  if (!a.summaries.empty()) {
    auto in = open_in(a.summaries);
    t.emplace(anova_from_summaries(read_summary_design(in, a.summaries), a.alpha));
  } else {
    auto in = open_in(a.raw);
    t.emplace(anova_from_raw(read_raw_design(in, a.raw), a.alpha));
  }
  if (!g.quiet) write_anova_text(std::cout, *t);
  const fs::path out = out_dir();
  write_file(out / "anova.txt", [&](std::ostream& o) { write_anova_text(o, *t); });
  write_file(out / "anova.csv", [&](std::ostream& o) { write_anova_csv(o, *t); });
  if (t->degenerate()) log("warning: within-cell variance is zero; F undefined for some sources");
  return kExitOk;
}

struct SynthArgs {
  bool use_default = false;
  std::optional<int> patients, videos, frames, side;
  std::optional<double> class_signal, patient_signal, temporal_noise, rho;
  std::optional<int> runs;
};

int cmd_synth(const SynthArgs& a) {
  SynthSettings st = a.use_default ? SynthSettings{} : synth_config();
  auto& c = st.config;
  if (a.patients) c.patients_per_class = *a.patients;
  if (a.videos) c.videos_per_patient = *a.videos;
  if (a.frames) c.frames_per_video = *a.frames;
  if (a.side) c.image_side = *a.side;
  if (a.class_signal) c.class_signal = *a.class_signal;
  if (a.patient_signal) c.patient_signal = *a.patient_signal;
  if (a.temporal_noise) c.temporal_noise = *a.temporal_noise;
  if (a.rho) c.temporal_correlation = *a.rho;
  if (a.runs) st.runs = *a.runs;
  if (g.seed_given) c.seed = g.seed;
  g.seed = c.seed;
  c.validate();

  SplitSpec naive{SplitStrategy::NaiveFrame, st.test_fraction, c.seed, st.runs};
  SplitSpec grouped{SplitStrategy::GroupedPatient, st.test_fraction, c.seed, st.runs};
  naive.validate();
  ExperimentOptions opt;
  opt.ks = st.ks;
  const fs::path out = out_dir();
  const InflationResult r = inflation_experiment(c, naive, grouped, opt, out / "synth");

  save(r.manifest, out / "manifest.tsv");
  const AuditConfig ac = audit_config();
  const FingerprintTable fp = compute_fingerprints(r.manifest);
  for (const auto* s : {&r.naive, &r.grouped}) {
    const std::string tag{strategy_name(s->spec.strategy)};
    write_file(out / fmt::format("splits_{}.csv", tag), [&](std::ostream& o) { write_splits(o, r.manifest, s->splits); });
    for (std::size_t q = 0; q < opt.ks.size(); ++q) {
      write_file(out / fmt::format("predictions_{}_{}nn.csv", tag, opt.ks[q]),
                 [&](std::ostream& o) { write_predictions(o, s->predictions[q]); });
    }
    write_file(out / fmt::format("summary_{}.csv", tag), [&](std::ostream& o) {
      for (std::size_t q = 0; q < opt.ks.size(); ++q) write_summary_csv(o, r.model_name(q), s->summaries[q], q == 0);
    });
    write_audit_outputs(out / fmt::format("audit_{}", tag), r.manifest, audit_runs(r.manifest, s->splits, ac, &fp));
  }
  write_file(out / "delta.txt", [&](std::ostream& o) { write_delta_text(o, r.delta); });
  write_file(out / "delta.csv", [&](std::ostream& o) { write_delta_csv(o, r.delta); });
  write_file(out / "anova_raw.csv", [&](std::ostream& o) { write_raw_design(o, r.accuracy_design); });
  const AnovaTable t = anova_from_raw(r.accuracy_design);
  write_file(out / "anova.txt", [&](std::ostream& o) { write_anova_text(o, t); });
  write_file(out / "anova.csv", [&](std::ostream& o) { write_anova_csv(o, t); });

  if (!g.quiet) {
    std::cout << fmt::format("naive accuracy   {:.4f}\n", r.naive.summaries[0].metrics.at("accuracy").mean);
    std::cout << fmt::format("grouped accuracy {:.4f}\n", r.grouped.summaries[0].metrics.at("accuracy").mean);
    std::cout << fmt::format("accuracy gap     {:.4f} (pooled se {:.4f}, {})\n", r.accuracy_gap, r.pooled_se,
                             r.model_name(0));
    if (!r.adjacency_possible) std::cout << "one frame per video: the gap reflects patient identity only\n";
  }
  return kExitOk;
}

// report: merge evaluation summaries, delta, audit summaries and ANOVA.

struct ReportArgs {
  std::string in;
};

std::string fmt_value(const std::string& s) {
  double v = 0;
  try {
    v = csv::parse_double(s, "value");
  } catch (const DataError&) {
    return s;
  }
  return fmt::format("{:.6g}", v);
}

int cmd_report(const ReportArgs& a) {
  const fs::path in = a.in.empty() ? fs::path(g.out) : fs::path(a.in);
  if (!fs::is_directory(in)) throw DataError(fmt::format("'{}' is not a directory", in.string()));
  std::vector<fs::path> summaries, audits;
  for (const auto& e : fs::directory_iterator(in)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("summary", 0) == 0 && e.path().extension() == ".csv")
      summaries.push_back(e.path());
    if (e.is_directory() && name.rfind("audit", 0) == 0 && fs::exists(e.path() / "summary.csv"))
      audits.push_back(e.path() / "summary.csv");
  }
  std::sort(summaries.begin(), summaries.end());
  std::sort(audits.begin(), audits.end());
  const bool has_delta = fs::exists(in / "delta.csv"), has_anova = fs::exists(in / "anova.csv");
  if (summaries.empty() && audits.empty() && !has_delta && !has_anova)
    throw DataError(fmt::format("'{}' holds no evaluation, audit or anova outputs", in.string()));

  std::ostringstream text, table;
  table << "section,source,name,metric,value\n";
  auto row = [&](std::string_view sec, const std::string& src, const std::string& name, const std::string& metric,
                 const std::string& value) {
    table << fmt::format("{},{},{},{},{}\n", sec, csv::quote(src), csv::quote(name), csv::quote(metric), value);
  };

  if (!summaries.empty()) text << "== Evaluation (mean over runs) ==\n";
  for (const auto& p : summaries) {
    auto f = open_in(p);
    const auto models = read_summary_csv(f, p.string());
    const std::string src = p.stem().string();
    for (const auto& [model, s] : models) {
      text << fmt::format("{} / {}\n", src, model);
      for (const auto& [metric, v] : s.metrics) {
        text << fmt::format("  {:<18} {:.4f}", metric, v.mean);
        if (v.stddev) text << fmt::format("  (sd {:.4f}, n {})", *v.stddev, v.n);
        text << '\n';
        row("evaluation", src, model, metric, fmt::format("{}", v.mean));
      }
    }
  }
  if (has_delta) {
    text << "\n== Before / after (drop = before - after) ==\n";
    const auto t = csv::Table::read(in / "delta.csv");
    const auto im = t.require_column("model"), imet = t.require_column("metric"), ib = t.require_column("before"),
               ia = t.require_column("after"), id = t.require_column("drop");
    text << fmt::format("  {:<10} {:<18} {:>9} {:>9} {:>9}\n", "model", "metric", "before", "after", "drop");
    for (const auto& r : t.rows()) {
      const auto& f = r.fields;
      text << fmt::format("  {:<10} {:<18} {:>9} {:>9} {:>9}\n", f[im], f[imet], fmt_value(f[ib]), fmt_value(f[ia]),
                          fmt_value(f[id]));
      row("delta", "delta", f[im], f[imet], f[id]);
      if (f[imet] == "accuracy") row("delta", "delta", f[im], "accuracy_before", f[ib]);
      if (f[imet] == "accuracy") row("delta", "delta", f[im], "accuracy_after", f[ia]);
    }
  }
  for (const auto& p : audits) {
    const std::string src = p.parent_path().filename().string();
    text << fmt::format("\n== Leakage audit: {} ==\n", src);
    const auto t = csv::Table::read(p);
    const auto irun = t.require_column("run"), ipat = t.require_column("patient_overlap"),
               iadj = t.require_column("adjacent_pairs"), irate = t.require_column("contamination_rate"),
               igate = t.require_column("gate");
    double total_rate = 0;
    int fails = 0;
    for (const auto& r : t.rows()) {
      const auto& f = r.fields;
      total_rate += csv::parse_double(f[irate], "contamination_rate");
      fails += f[igate] == "fail";
      row("audit", src, "run " + f[irun], "contamination_rate", f[irate]);
      row("audit", src, "run " + f[irun], "patient_overlap", f[ipat]);
      row("audit", src, "run " + f[irun], "adjacent_pairs", f[iadj]);
    }
    const auto n = t.rows().size();
    text << fmt::format("  runs {}, gate failures {}, mean contamination {:.4f}\n", n, fails,
                        n ? total_rate / static_cast<double>(n) : 0.0);
  }
  if (has_anova) {
    text << "\n== Two-factor ANOVA ==\n";
    const auto t = csv::Table::read(in / "anova.csv");
    text << fmt::format("  {:<20} {:>12} {:>4} {:>12} {:>12} {:>12}\n", "source", "SS", "df", "F", "P-value", "F crit");
    const auto is = t.require_column("source"), iss = t.require_column("ss"), idf = t.require_column("df"),
               iff = t.require_column("f"), ip = t.require_column("p"), ic = t.require_column("f_crit");
    for (const auto& r : t.rows()) {
      const auto& f = r.fields;
      text << fmt::format("  {:<20} {:>12} {:>4} {:>12} {:>12} {:>12}\n", f[is], fmt_value(f[iss]), f[idf],
                          fmt_value(f[iff]), fmt_value(f[ip]), fmt_value(f[ic]));
      for (const auto& [col, idx] : {std::pair{"ss", iss}, {"df", idf}, {"f", iff}, {"p", ip}, {"f_crit", ic}})
        if (!f[idx].empty()) row("anova", "anova", f[is], col, f[idx]);
    }
  }
  const fs::path out = out_dir();
  write_file(out / "report.txt", [&](std::ostream& o) { o << text.str(); });
  write_file(out / "report.csv", [&](std::ostream& o) { o << table.str(); });
  if (!g.quiet) std::cout << text.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otopipe: video-frame dataset preparation, leakage audit, metrics and ANOVA"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.add_option("--manifest", g.manifest, "Dataset manifest (input; output for ingest)");
  app.add_option("--config", g.config, "JSON config with pipeline/split/audit/synth sections")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_option("--out", g.out, "Output directory (also holds run.log)");
  app.add_flag("--quiet", g.quiet, "Only print errors");

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Join frame files with the diagnosis table into a manifest");
  s_ingest->add_option("--root", ingest.root, "Frame tree <period>/<patient>/<video>/<index>.pgm|ppm");
  s_ingest->add_option("--mapping", ingest.mapping, "Table with path,patient_id,video_id,frame_index[,period]");
  s_ingest->add_option("--diagnoses", ingest.diagnoses, "Table with patient_id,video_id,label")->required();

  ScoreArgs score;
  auto* s_score = app.add_subcommand("score", "Trim video ends and score sharpness and entropy");
  s_score->add_option("--trim", score.trim, "Fraction dropped at each end of every video [0, 0.5)");

  FilterArgs filter;
  auto* s_filter = app.add_subcommand("filter", "Apply quality cutoffs to a scored manifest, then crop");
  s_filter->add_option("--laplacian-percentile", filter.lap_pct, "Per-video sharpness cutoff percentile");
  s_filter->add_option("--laplacian-threshold", filter.lap_abs, "Absolute sharpness cutoff");
  s_filter->add_option("--entropy-percentile", filter.ent_pct, "Per-video entropy cutoff percentile");
  s_filter->add_option("--entropy-threshold", filter.ent_abs, "Absolute entropy cutoff (bits)");
  s_filter->add_flag("--no-crop", filter.no_crop, "Skip the circular crop");
  s_filter->add_option("--fill", filter.fill, "Gray level outside the crop circle");

  SplitArgs split_args;
  auto* s_split = app.add_subcommand("split", "Draw train/test assignments");
  s_split->add_option("--strategy", split_args.strategy, "naive | grouped");
  s_split->add_option("--test-fraction", split_args.test_fraction, "Target test share of frames (0, 1)");
  s_split->add_option("--runs", split_args.runs, "Number of seeded runs");

  AuditArgs audit;
  auto* s_audit = app.add_subcommand("audit", "Check splits for patient, adjacency and duplicate leakage");
  s_audit->add_option("--splits", audit.splits, "Split file (default <out>/splits.csv)");
  s_audit->add_option("--window", audit.window, "Adjacency window in frames");
  s_audit->add_option("--dup-threshold", audit.dup_threshold, "Max Hamming distance for a duplicate");
  s_audit->add_option("--max-contamination", audit.max_contamination, "Gate fails above this contamination rate");
  s_audit->add_flag("--allow-patient-overlap", audit.allow_patient_overlap, "Do not fail the gate on shared patients");
  s_audit->add_flag("--no-duplicates", audit.no_duplicates, "Skip the perceptual-hash duplicate search");

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Compute metrics from a prediction table");
  s_eval->add_option("--predictions", eval.predictions, "Table with frame_id,run,true,pred,s0..s3")->required();
  s_eval->add_option("--splits", eval.splits, "Cross-check predictions against this split file (needs --manifest)");
  s_eval->add_option("--model", eval.model, "Model name in summary.csv");

  AnovaArgs anova;
  auto* s_anova = app.add_subcommand("anova", "Two-factor ANOVA with replication");
  s_anova->add_option("--summaries", anova.summaries, "Cell table row_level,col_level,count,mean,variance");
  s_anova->add_option("--raw", anova.raw, "Observation table row_level,col_level,value");
  s_anova->add_option("--alpha", anova.alpha, "Significance level for F crit");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Synthetic leakage-inflation experiment");
  s_synth->add_flag("--default", synth.use_default, "Use the built-in configuration, ignoring the config file");
  s_synth->add_option("--patients-per-class", synth.patients, "Patients per class");
  s_synth->add_option("--videos-per-patient", synth.videos, "Videos per patient");
  s_synth->add_option("--frames-per-video", synth.frames, "Frames per video");
  s_synth->add_option("--image-side", synth.side, "Frame side in pixels");
  s_synth->add_option("--class-signal", synth.class_signal, "Class field amplitude");
  s_synth->add_option("--patient-signal", synth.patient_signal, "Patient field amplitude");
  s_synth->add_option("--temporal-noise", synth.temporal_noise, "Temporal field amplitude");
  s_synth->add_option("--temporal-correlation", synth.rho, "Frame-to-frame correlation of the temporal field");
  s_synth->add_option("--runs", synth.runs, "Runs per split strategy");

  ReportArgs report;
  auto* s_report = app.add_subcommand("report", "Merge evaluation, audit and ANOVA outputs");
  s_report->add_option("--in", report.in, "Directory to summarize (default --out)");

  for (auto* s : app.get_subcommands({})) s->fallthrough();

  std::string command = "otopipe";
  for (int i = 1; i < argc; ++i) command += std::string(" ") + argv[i];

  int code = kExitOk;
  try {
    app.parse(argc, argv);
    g.seed_given = app.count("--seed") > 0;
    load_config();
    if (s_ingest->parsed()) code = cmd_ingest(ingest);
    else if (s_score->parsed()) code = cmd_score(score);
    else if (s_filter->parsed()) code = cmd_filter(filter);
    else if (s_split->parsed()) code = cmd_split(split_args);
    else if (s_audit->parsed()) code = cmd_audit(audit);
    else if (s_eval->parsed()) code = cmd_eval(eval);
    else if (s_anova->parsed()) code = cmd_anova(anova);
    else if (s_synth->parsed()) code = cmd_synth(synth);
    else if (s_report->parsed()) code = cmd_report(report);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    code = kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kExitData;
  } catch (const json::exception& e) {
    std::cerr << "usage error: " << g.config << ": " << e.what() << '\n';
    code = kExitUsage;
  }
  append_provenance(command, code);
  return code;
}
