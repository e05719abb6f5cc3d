#pragma once

#include "vpb/solver.hpp"

#include <map>
#include <string>
#include <vector>

namespace vpb {

inline constexpr int kConfigSchemaVersion = 1;

/// Run configuration document. Parsed from JSON; unknown keys are errors.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  SolverConfig solver;
  std::string output_dir;  ///< empty means VPB_OUTPUT_DIR or the working directory
  std::string csv_name = "diagnostics.csv";
  std::string summary_name = "summary.json";
};

/// Throws ConfigError whose message starts with the offending key path, e.g. "$.grids.n_v: ...".
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
/// Canonical JSON echo; parse_run_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& c, int indent = 2);
bool operator==(const RunConfig& a, const RunConfig& b);

/// Output directory from the config, then VPB_OUTPUT_DIR, then ".".
std::string resolve_output_dir(const RunConfig& c);

/// JSON run summary: fit, residual maxima, config echo and seed.
std::string run_summary_json(const RunConfig& c, const TimeMarchResult& r, double wall_seconds);

/// Run time_march and write the CSV series and JSON summary; returns the output directory used.
std::string simulate(const RunConfig& c, TimeMarchResult* result = nullptr);

enum class CheckStatus { pass, fail, measured };

struct CheckResult {
  std::string suite;
  std::string name;
  CheckStatus status = CheckStatus::measured;
  bool required = true;
  std::map<std::string, double> measured;
  double tolerance = 0.0;
  double wall_time = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  /// Conjunction over required checks.
  bool passed() const;
  std::string to_json(int indent = 2) const;
};

/// Suite names mirror the modules.
const std::vector<std::string>& verify_suite_names();
/// Runs the selected suites (all when empty). Unknown names throw ConfigError.
VerifyReport run_verify(const std::vector<std::string>& suites);

}  // namespace vpb
