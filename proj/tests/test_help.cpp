#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

// Help text of every subcommand against the checked-in snapshots.

namespace {

const std::string kBinary = OTOPIPE_BIN;
const std::string kSnapshots = OTOPIPE_SNAPSHOTS;

std::string capture(const std::string& cmd) {
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  ::pclose(pipe);
  // The usage line carries the invoked path.
  for (std::size_t at; (at = out.find(kBinary)) != std::string::npos;) out.replace(at, kBinary.size(), "otopipe");
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("help snapshots") {
  for (std::string name :
       {"main", "ingest", "score", "filter", "split", "audit", "eval", "anova", "synth", "report"}) {
    CAPTURE(name);
    const std::string args = name == "main" ? "--help" : name + " --help";
    CHECK(capture("'" + kBinary + "' " + args) == slurp(kSnapshots + "/" + name + ".txt"));
  }
}
