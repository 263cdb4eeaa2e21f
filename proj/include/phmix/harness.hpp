#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "phmix/filter.hpp"
#include "phmix/proxy.hpp"

namespace phmix::harness {

inline constexpr int kSchemaVersion = 1;

struct FilterSettings {
  int particles = 200;
  double tau = 0.3;
  double lambda_fb = 1.0;
  double lambda_conservative = 0.5;
  double ess_trigger = 0.5;
  double obs_noise = 0.05;
  double contact_dropout = 1.0;
  double init_std = 0.01;
  /// Independent filter replicas per cell; the empirical relative variance of
  /// Zhat needs at least two.
  int replicas = 4;
};

struct ProxySettings {
  ProxyConfig config;
  int frame_stride = 5;
  int calibration_episodes = 5;
};

struct RecoverySettings {
  double obs_noise = 0.002;
  double der_noise = 0.1;
  double missing_rate = 0.05;
  double mode_flip_prob = 0.01;
  double structure_perturbation = 0.01;
  double delta = 0.05;
  double t_min = 10.0;
  int label_min_run = 3;
  int kappa_draws = 2000;
};

struct CertifySettings {
  int rollouts = 600;
};

/// One experiment's run configuration. Serialized as versioned JSON; missing
/// keys take the experiment's defaults and unknown keys are rejected.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string experiment;  // exp1 | exp2 | exp3 | certify
  std::vector<std::string> tasks;
  std::vector<std::string> methods;
  std::vector<double> occlusion{0.0};
  int seeds = 20;
  std::uint64_t root_seed = 0;
  /// 0 uses each system's default length.
  int steps = 0;
  bool write_traces = true;
  std::string output_dir = "out";
  FilterSettings filter;
  ProxySettings proxy;
  RecoverySettings recovery;
  CertifySettings certify;
};

RunConfig default_config(std::string_view experiment);
/// Throws INVALID_ARGUMENT on schema mismatch, unknown keys or bad values.
RunConfig parse_config(const std::string& text);
std::string dump_config(const RunConfig& config);
RunConfig load_config(const std::string& path);
void validate(const RunConfig& config);

/// Methods each experiment knows, with the reference (full) method first.
const std::vector<std::string>& known_methods(std::string_view experiment);
/// Flattened effective settings a method actually runs with.
std::map<std::string, std::string> effective_method_config(const RunConfig& config, const std::string& method);
/// Keys whose values differ between two flattened configs.
std::vector<std::string> config_diff(const std::map<std::string, std::string>& a,
                                     const std::map<std::string, std::string>& b);
/// The single field `method` may change relative to the experiment's
/// reference method; empty for the reference itself.
std::string_view mechanism_field(std::string_view experiment, std::string_view method);

DefensiveConfig defensive_config(const RunConfig& config, const std::string& method);

using Metrics = std::vector<std::pair<std::string, double>>;

/// Result of one (task, method, condition, seed) cell. NaN metrics are NA.
struct Cell {
  std::string experiment;
  std::string task;
  std::string method;
  std::string condition;
  int seed = 0;
  std::string status = "ok";
  std::string message;
  Metrics metrics;
  /// Per-part breakdown (one entry per fitted mode in recovery runs).
  std::vector<std::pair<std::string, Metrics>> details;

  double metric(std::string_view name) const;
  bool ok() const { return status == "ok"; }
};

/// Canonical order: experiment, task, method, condition, seed.
void sort_cells(std::vector<Cell>& cells);

struct RunResult {
  RunConfig config;
  std::vector<Cell> cells;
  /// Files written, relative to the output directory, sorted.
  std::vector<std::string> files;
};

struct RunOptions {
  int workers = 1;
  bool write = true;
};

RunResult run_exp1(const RunConfig& config, const RunOptions& options = {});
RunResult run_exp2(const RunConfig& config, const RunOptions& options = {});
RunResult run_exp3(const RunConfig& config, const RunOptions& options = {});
RunResult run_certify(const RunConfig& config, const RunOptions& options = {});
/// Dispatches on config.experiment.
RunResult run(const RunConfig& config, const RunOptions& options = {});

/// Runs fn(0..n-1) on up to `workers` threads. Exceptions escaping fn are
/// rethrown after all workers finish.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

struct PlotRow {
  std::string experiment;
  std::string task;
  std::string method;
  std::string condition;
  int seed = 0;
  std::string metric;
  double value = 0.0;  // NaN is NA

  bool operator==(const PlotRow&) const = default;
};

std::vector<PlotRow> plot_rows(const std::vector<Cell>& cells);
/// Long-format `experiment,task,method,condition,seed,metric,value`.
std::string emit_plotdata(const std::vector<Cell>& cells);
std::vector<PlotRow> parse_plotdata(const std::string& text);

/// Per-group aggregate over ok cells: mean, SEM and median of every metric.
struct SummaryRow {
  std::string task;
  std::string method;
  std::string condition;
  std::string metric;
  int n = 0;
  int failed = 0;
  double mean = 0.0;
  double sem = 0.0;
  double median = 0.0;
};
std::vector<SummaryRow> summarize(const std::vector<Cell>& cells);

/// Shortest round-trip decimal; NaN and infinities become the empty string.
std::string format_number(double x);

}  // namespace phmix::harness
