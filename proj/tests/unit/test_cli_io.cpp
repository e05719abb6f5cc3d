#include "vpb/cli_io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vpb;

namespace {

std::string minimal() { return R"({"schema_version": 1, "domain": {"kind": "ball"}})"; }

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny(const std::string& dir) {
  RunConfig c = parse_run_config(R"({
    "schema_version": 1,
    "domain": {"kind": "ball"},
    "grids": {"mesh_h": 0.5, "v_max": 4.0, "n_v": 6},
    "physics": {"nonlinear": false},
    "initial": {"kind": "dipole", "amplitude": 0.01},
    "solver": {"segments": 2, "picard_max": 2},
    "seed": 42
  })");
  c.output_dir = dir;
  return c;
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const RunConfig c = parse_run_config(minimal());
  CHECK(c.schema_version == 1);
  CHECK(c.solver.domain == DomainKind::ball);
  CHECK(c.solver.n_v == SolverConfig{}.n_v);
  CHECK(parse_run_config(to_json(c)) == c);

  RunConfig e = parse_run_config(R"({"schema_version": 1, "domain": {"kind": "ellipsoid", "axes": [1.0, 0.8, 0.6]},
      "grids": {"n_v": 8, "mesh_h": 0.4}, "physics": {"theta": 0.2, "theta_tilde": 0.1, "field": false},
      "initial": {"kind": "isotropic", "amplitude": 0.001}, "solver": {"horizon": 0.02, "segments": 3},
      "seed": 9, "output": {"dir": "somewhere", "csv": "a.csv", "summary": "b.json"}})");
  CHECK(e.solver.domain == DomainKind::ellipsoid);
  CHECK(e.solver.axes[2] == 0.6);
  CHECK(e.solver.field == false);
  CHECK(e.solver.seed == 9u);
  CHECK(e.csv_name == "a.csv");
  const RunConfig back = parse_run_config(to_json(e));
  CHECK(back == e);
  CHECK(!(back == c));
}

TEST_CASE("config errors carry the key path") {
  CHECK(error_of(R"({"domain": {"kind": "ball"}})").rfind("$.schema_version:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 2, "domain": {"kind": "ball"}})").rfind("$.schema_version:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1})").rfind("$.domain:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "cube"}})").rfind("$.domain.kind:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "grids": {"n_vv": 3}})")
            .rfind("$.grids.n_vv: unknown key", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "extra": 1})").rfind("$.extra:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "grids": {"n_v": 2.5}})")
            .rfind("$.grids.n_v: expected an integer", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "grids": {"n_v": 1}})")
            .rfind("$.grids.n_v:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "initial": {"amplitude": -1}})")
            .rfind("$.initial.amplitude:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ball"}, "physics": {"theta_tilde": 0.2}})")
            .rfind("$.physics.theta_tilde:", 0) == 0);
  CHECK(error_of(R"({"schema_version": 1, "domain": {"kind": "ellipsoid", "axes": [1, 0, 1]}})")
            .rfind("$.domain.axes[1]:", 0) == 0);
  CHECK(error_of("{not json").rfind("$: malformed JSON", 0) == 0);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("output directory resolution") {
  RunConfig c = parse_run_config(minimal());
  c.output_dir = "explicit";
  CHECK(resolve_output_dir(c) == "explicit");
  c.output_dir.clear();
  setenv("VPB_OUTPUT_DIR", "from_env", 1);
  CHECK(resolve_output_dir(c) == "from_env");
  unsetenv("VPB_OUTPUT_DIR");
  CHECK(resolve_output_dir(c) == ".");
}

TEST_CASE("simulate is deterministic and echoes a re-parseable config") {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "vpb_cli_io_test";
  fs::remove_all(base);
  const RunConfig c1 = tiny((base / "a").string()), c2 = tiny((base / "b").string());
  TimeMarchResult r;
  simulate(c1, &r);
  simulate(c2);
  const std::string csv1 = slurp(base / "a" / "diagnostics.csv"), csv2 = slurp(base / "b" / "diagnostics.csv");
  CHECK(!csv1.empty());
  CHECK(csv1 == csv2);
  CHECK(r.series.size() == 3);

  const std::string summary = slurp(base / "a" / "summary.json");
  const auto pos = summary.find("\"config\"");
  REQUIRE(pos != std::string::npos);
  // Pull the config object back out of the summary and parse it again.
  int depth = 0;
  std::size_t start = summary.find('{', pos), end = start;
  for (; end < summary.size(); ++end) {
    if (summary[end] == '{') ++depth;
    if (summary[end] == '}' && --depth == 0) break;
  }
  const RunConfig echoed = parse_run_config(summary.substr(start, end - start + 1));
  CHECK(echoed == c1);
  CHECK(summary.find("\"seed\": 42") != std::string::npos);
  fs::remove_all(base);
}

TEST_CASE("zero data simulation keeps the mass columns constant") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "vpb_cli_io_zero";
  fs::remove_all(dir);
  RunConfig c = tiny(dir.string());
  c.solver.initial = InitialKind::zero;
  TimeMarchResult r;
  simulate(c, &r);
  for (const auto& d : r.series) {
    CHECK(d.mass_plus == r.series.front().mass_plus);
    CHECK(d.mass_minus == r.series.front().mass_minus);
  }
  fs::remove_all(dir);
}

TEST_CASE("verify report") {
  CHECK_THROWS_AS(run_verify({"nonsense"}), ConfigError);
  const VerifyReport rep = run_verify({"geometry", "alpha"});
  CHECK(rep.checks.size() == 4);
  CHECK(rep.passed());
  const std::string j = rep.to_json();
  CHECK(j.find("\"overall\": \"pass\"") != std::string::npos);
  CHECK(j.find("ray_exit_center") != std::string::npos);

  VerifyReport bad = rep;
  bad.checks.front().status = CheckStatus::fail;
  CHECK(!bad.passed());
  bad.checks.front().required = false;
  CHECK(bad.passed());
}
