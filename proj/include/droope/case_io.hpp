#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "droope/analysis.hpp"
#include "droope/simulator.hpp"

namespace droope {

inline constexpr int kSchemaVersion = 1;

struct AnalysisDirectives {
  std::string sweep_device;          ///< GFM swept by `sweep`
  std::string sweep_grid = "-1:0.05:1";
  double metrics_window_s = 0.1;
  std::string metrics_channel;       ///< frequency channel; empty selects f_avg_hz or the first SG
  bool metrics_until_sharing = true;  ///< stop the metrics window at the first sharing activation
  bool weighted_frequency = false;   ///< emit f_avg_hz (MVA-weighted)
};

struct CaseFile {
  int schema_version = kSchemaVersion;
  std::string notes;
  std::string provenance;
  Scenario scenario;
  AnalysisDirectives analysis;
  std::vector<std::string> defaults_applied;  ///< "path = value" for every omitted field
};

/// Parses and validates a case document. `source` names it in error messages.
/// Throws CaseError with line/column for syntax errors and field paths for
/// schema violations (all violations are listed).
CaseFile parse_case(const std::string& text, const std::string& source = "<case>");
CaseFile load_case(const std::filesystem::path& path);

/// Canonical JSON with every field explicit.
std::string emit_case(const CaseFile& c);

/// Bundled case directory (compiled-in source path).
std::filesystem::path bundled_case_dir();
/// Resolves a bare case name ("case_3bus_A") against the bundled directory.
std::filesystem::path resolve_case(const std::string& name_or_path);

/// "start:step:stop" inclusive grid.
std::vector<double> parse_grid(const std::string& spec);

// --- case runs -------------------------------------------------------------

/// Time of the earliest event, or t_end when there is none.
double first_event_time(const Scenario& scenario);

/// Appends f_avg_hz, the MVA-weighted frequency of the online machines.
void add_weighted_frequency(TimeSeries& ts, const Scenario& scenario);

struct CaseRun {
  TimeSeries series;
  std::string metrics_channel;
  std::optional<FrequencyMetrics> metrics;  ///< empty for event-free cases
};

/// Runs the scenario and evaluates the case's analysis directives.
CaseRun run_case(const CaseFile& c, IntegratorOptions opts = {});

// --- CSV -------------------------------------------------------------------

/// Shortest round-trip decimal, independent of the locale.
std::string format_number(double v);

std::string timeseries_csv(const TimeSeries& ts, const std::vector<std::string>& columns);
std::string modal_csv(const SweepResult& sweep);
std::string modal_table(const SweepResult& sweep);  ///< human-readable summary
std::string metrics_csv(const std::vector<std::pair<std::string, FrequencyMetrics>>& rows);
std::string emit_curve_tables(const DroopEParams& params, const std::vector<double>& grid,
                              double p_set = 0.0);

/// Reads a CSV with a header row of column names and numeric fields.
TimeSeries read_timeseries_csv(const std::filesystem::path& path);

// --- manifest --------------------------------------------------------------

std::string sha256_hex(const std::string& bytes);

struct Manifest {
  std::string command;
  std::string inputs_sha256;  ///< over the case bytes and the effective options
  std::vector<std::string> defaults_applied;
  std::vector<std::pair<std::string, std::string>> outputs;  ///< file name, sha256
  double wall_time_s = 0.0;

  std::string to_json() const;
};

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace droope
