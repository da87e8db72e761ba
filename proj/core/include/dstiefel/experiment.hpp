#pragma once

// Batch experiment runner: JSON configs, parameter sweeps, trace files and
// trace summaries. This is the library behind the `dstiefel` command-line tool.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dstiefel/network.hpp"
#include "dstiefel/problems.hpp"
#include "dstiefel/solver.hpp"

namespace dstiefel {

using nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kTraceSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

/// Fixed trace columns, in file order.
const std::vector<std::string>& trace_columns();

/// Reads a JSON config; parse errors become ConfigError with line and column.
json load_config_file(const std::filesystem::path& path);
json parse_config_text(const std::string& text);

/// Applies `dotted.path=value`; value is parsed as JSON when possible and kept
/// as a string otherwise. Intermediate objects are created as needed.
void apply_override(json& config, const std::string& assignment);

/// Fills defaults and checks structure (required keys, types, unknown keys).
/// Throws ConfigError naming the offending field.
json resolve_config(const json& config);

struct SweepPoint {
  json config;                                    // resolved, sweep values substituted
  std::vector<std::pair<std::string, json>> values;  // (dotted key, value) in sweep order
};

/// Cartesian product of the `sweep` lists (first key varies slowest).
std::vector<SweepPoint> expand_sweep(const json& resolved);

std::unique_ptr<MinimaxProblem> build_problem(const json& problem_spec, int nodes);
Topology build_topology(const json& topology_spec);
/// SolverConfig from the `solver` section; `k = "auto"` becomes `auto_k`.
SolverConfig build_solver_config(const json& solver_spec, int auto_k);

/// Problem- and network-derived constants recorded in trace headers and used
/// by the validator.
struct RunConstants {
  double lipschitz = 0.0;            // probed L (x1.5 safety)
  LipschitzEstimate lipschitz_detail;
  double gradient_bound = 0.0;       // probed D
  double retraction_constant = 0.0;  // probed M for polar retraction on St(d,r)
  double lambda2 = 0.0;
  double lambda_n = 0.0;
  int required_k = 1;
  int k = 1;

  json to_json() const;
};

RunConstants compute_constants(const MinimaxProblem& problem, const MixingMatrix& w, const json& resolved);

struct Issue {
  enum class Severity { kError, kWarning };
  Severity severity = Severity::kError;
  std::string field;
  std::string message;
};

std::string to_string(const Issue& issue);

/// Structural problems are errors; violated step-size and mixing conditions of
/// the convergence theory are warnings. Every sweep point is checked.
std::vector<Issue> validate_config(const json& config);

/// Theory-side warnings for one resolved sweep point.
std::vector<Issue> theory_warnings(const SolverConfig& cfg, Mode mode, const RunConstants& constants,
                                   Eigen::Index r, int n);

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 1 numeric failure in some run, 2 config error
  std::vector<std::filesystem::path> traces;
  std::vector<std::string> messages;
};

/// Runs every sweep point and writes one trace per point into the output
/// directory (`out_dir` overrides output.dir when non-empty).
RunOutcome run_experiment(const json& config, const std::filesystem::path& out_dir = {});

/// File name for a sweep point: <prefix>[__key=value...].<ext>.
std::string trace_file_name(const json& resolved, const SweepPoint& point);

void write_trace(const std::filesystem::path& path, const json& header, const RunResult& result,
                 const std::string& format, bool node_gradient_column);

struct TraceData {
  json header;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::optional<std::string> run_error;

  std::optional<std::size_t> column(const std::string& name) const;
};

/// Reads a CSV or JSON-lines trace. Throws Error on malformed or truncated files.
TraceData read_trace(const std::filesystem::path& path);

struct TraceSummary {
  std::string path;
  std::optional<std::string> error;  // unreadable trace
  std::optional<std::string> run_error;
  std::optional<int> reach_1e1;  // first t with metric_total <= 1e-1
  std::optional<int> reach_1e2;  // first t with metric_total <= 1e-2
  int iterations = 0;
  double final_total = 0.0;
  double final_grad_norm = 0.0;
  double final_primal_consensus = 0.0;
  double final_dual_gap = 0.0;
  double mean_wall_ms = 0.0;
  long long total_comms = 0;
};

/// First recorded t whose metric_total is at most `threshold`.
std::optional<int> iterations_to_threshold(const TraceData& trace, double threshold);

/// Summaries sorted by final metric (unreadable traces last, in input order).
std::vector<TraceSummary> summarize(const std::vector<std::filesystem::path>& paths);
std::string render_summary_text(const std::vector<TraceSummary>& summaries);
json render_summary_json(const std::vector<TraceSummary>& summaries);

}  // namespace dstiefel
