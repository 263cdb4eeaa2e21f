#include "phmix/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "phmix/certificates.hpp"
#include "phmix/error.hpp"
#include "phmix/metrics.hpp"
#include "phmix/modes.hpp"
#include "phmix/rng.hpp"
#include "phmix/sparse.hpp"
#include "phmix/stats.hpp"
#include "phmix/systems.hpp"

namespace phmix::harness {

namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

constexpr double kNA = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------- config json

json to_json(const RunConfig& c) {
  const auto& p = c.proxy.config;
  const auto& f = c.filter;
  const auto& r = c.recovery;
  return json{
      {"schema_version", c.schema_version},
      {"experiment", c.experiment},
      {"tasks", c.tasks},
      {"methods", c.methods},
      {"occlusion", c.occlusion},
      {"seeds", c.seeds},
      {"root_seed", c.root_seed},
      {"steps", c.steps},
      {"write_traces", c.write_traces},
      {"output_dir", c.output_dir},
      {"filter",
       {{"particles", f.particles},
        {"tau", f.tau},
        {"lambda_fb", f.lambda_fb},
        {"lambda_conservative", f.lambda_conservative},
        {"ess_trigger", f.ess_trigger},
        {"obs_noise", f.obs_noise},
        {"contact_dropout", f.contact_dropout},
        {"init_std", f.init_std},
        {"replicas", f.replicas}}},
      {"proxy",
       {{"weight_object", p.weight_object},
        {"weight_effector", p.weight_effector},
        {"weight_action", p.weight_action},
        {"window", p.window},
        {"min_run", p.min_run},
        {"eps", p.eps},
        {"free_quantile", p.free_quantile},
        {"impact_quantile", p.impact_quantile},
        {"frame_stride", c.proxy.frame_stride},
        {"calibration_episodes", c.proxy.calibration_episodes}}},
      {"recovery",
       {{"obs_noise", r.obs_noise},
        {"der_noise", r.der_noise},
        {"missing_rate", r.missing_rate},
        {"mode_flip_prob", r.mode_flip_prob},
        {"structure_perturbation", r.structure_perturbation},
        {"delta", r.delta},
        {"t_min", r.t_min},
        {"label_min_run", r.label_min_run},
        {"kappa_draws", r.kappa_draws}}},
      {"certify", {{"rollouts", c.certify.rollouts}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  j.at("schema_version").get_to(c.schema_version);
  j.at("experiment").get_to(c.experiment);
  j.at("tasks").get_to(c.tasks);
  j.at("methods").get_to(c.methods);
  j.at("occlusion").get_to(c.occlusion);
  j.at("seeds").get_to(c.seeds);
  j.at("root_seed").get_to(c.root_seed);
  j.at("steps").get_to(c.steps);
  j.at("write_traces").get_to(c.write_traces);
  j.at("output_dir").get_to(c.output_dir);

  const auto& f = j.at("filter");
  f.at("particles").get_to(c.filter.particles);
  f.at("tau").get_to(c.filter.tau);
  f.at("lambda_fb").get_to(c.filter.lambda_fb);
  f.at("lambda_conservative").get_to(c.filter.lambda_conservative);
  f.at("ess_trigger").get_to(c.filter.ess_trigger);
  f.at("obs_noise").get_to(c.filter.obs_noise);
  f.at("contact_dropout").get_to(c.filter.contact_dropout);
  f.at("init_std").get_to(c.filter.init_std);
  f.at("replicas").get_to(c.filter.replicas);

  const auto& p = j.at("proxy");
  auto& pc = c.proxy.config;
  p.at("weight_object").get_to(pc.weight_object);
  p.at("weight_effector").get_to(pc.weight_effector);
  p.at("weight_action").get_to(pc.weight_action);
  p.at("window").get_to(pc.window);
  p.at("min_run").get_to(pc.min_run);
  p.at("eps").get_to(pc.eps);
  p.at("free_quantile").get_to(pc.free_quantile);
  p.at("impact_quantile").get_to(pc.impact_quantile);
  p.at("frame_stride").get_to(c.proxy.frame_stride);
  p.at("calibration_episodes").get_to(c.proxy.calibration_episodes);

  const auto& r = j.at("recovery");
  r.at("obs_noise").get_to(c.recovery.obs_noise);
  r.at("der_noise").get_to(c.recovery.der_noise);
  r.at("missing_rate").get_to(c.recovery.missing_rate);
  r.at("mode_flip_prob").get_to(c.recovery.mode_flip_prob);
  r.at("structure_perturbation").get_to(c.recovery.structure_perturbation);
  r.at("delta").get_to(c.recovery.delta);
  r.at("t_min").get_to(c.recovery.t_min);
  r.at("label_min_run").get_to(c.recovery.label_min_run);
  r.at("kappa_draws").get_to(c.recovery.kappa_draws);

  j.at("certify").at("rollouts").get_to(c.certify.rollouts);
  return c;
}

void check_keys(const json& input, const json& reference, const std::string& path) {
  require(input.is_object(), ErrorCode::kInvalidArgument, "config: '" + path + "' must be an object");
  for (const auto& [key, value] : input.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    require(reference.contains(key), ErrorCode::kInvalidArgument, "config: unknown key '" + where + "'");
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), where);
  }
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
  } else {
    out[prefix] = j.dump();
  }
}

// ------------------------------------------------------------------- csv io

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : path_(path), out_(path) {
    require(static_cast<bool>(out_), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  ~CsvWriter() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) throw Error(ErrorCode::kIo, "write failed: " + path_.string());
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << '\n';
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

std::string fmt_int(long long x) { return std::to_string(x); }
std::string fmt_bool(bool b) { return b ? "1" : "0"; }
std::string fmt_flag(double x) { return std::isfinite(x) ? fmt_bool(x != 0.0) : ""; }

std::string seed_label(int seed) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "seed%03d", seed);
  return buf;
}

std::string trace_name(const Cell& c, const std::string& suffix) {
  std::string name = c.experiment + "_" + c.task + "_" + c.method;
  if (!c.condition.empty()) name += "_occ" + c.condition;
  return name + "_" + seed_label(c.seed) + "_" + suffix + ".csv";
}

// ------------------------------------------------------------ cell plumbing

std::string condition_label(double occlusion) { return format_number(occlusion); }

HybridSystemSpec resolve_system(const std::string& name) {
  for (auto& spec : linear_ph_benchmarks()) {
    if (spec.name == name) return spec;
  }
  return make_system_by_name(name);
}

int steps_for(const RunConfig& cfg, const HybridSystemSpec& spec) {
  return cfg.steps > 0 ? cfg.steps : spec.default_steps;
}

Cell make_cell(const RunConfig& cfg, const std::string& task, const std::string& method, const std::string& condition,
               int seed) {
  Cell c;
  c.experiment = cfg.experiment;
  c.task = task;
  c.method = method;
  c.condition = condition;
  c.seed = seed;
  return c;
}

void guarded(Cell& cell, const std::function<void(Cell&)>& body) {
  try {
    body(cell);
  } catch (const Error& e) {
    cell.status = std::string(to_string(e.code()));
    cell.message = e.what();
    cell.metrics.clear();
    cell.details.clear();
  } catch (const std::exception& e) {
    cell.status = "ERROR";
    cell.message = e.what();
    cell.metrics.clear();
    cell.details.clear();
  }
}

std::vector<Cell> run_cells(std::vector<Cell> cells, int workers, const std::function<void(Cell&)>& body) {
  parallel_for(static_cast<int>(cells.size()), workers, [&](int i) { guarded(cells[static_cast<std::size_t>(i)], body); });
  sort_cells(cells);
  return cells;
}

struct OutputDir {
  fs::path root;
  std::vector<std::string> files;
  std::unique_ptr<std::mutex> mu = std::make_unique<std::mutex>();

  fs::path file(const std::string& rel) {
    std::lock_guard lock(*mu);
    files.push_back(rel);
    return root / rel;
  }
};

void write_common(const RunConfig& cfg, const std::vector<Cell>& cells, OutputDir& out) {
  write_text(out.file("config.json"), dump_config(cfg));
  json methods = json::object();
  for (const auto& m : cfg.methods) methods[m] = effective_method_config(cfg, m);
  write_text(out.file("methods.json"), methods.dump(2) + "\n");
  write_text(out.file("plotdata.csv"), emit_plotdata(cells));
  {
    CsvWriter status(out.file("status.csv"));
    status.row({"experiment", "task", "method", "condition", "seed", "status", "message"});
    for (const auto& c : cells) status.row({c.experiment, c.task, c.method, c.condition, fmt_int(c.seed), c.status, c.message});
  }
  CsvWriter summary(out.file(cfg.experiment + "_summary.csv"));
  summary.row({"task", "method", "condition", "metric", "n", "failed", "mean", "sem", "median"});
  for (const auto& s : summarize(cells)) {
    summary.row({s.task, s.method, s.condition, s.metric, fmt_int(s.n), fmt_int(s.failed), format_number(s.mean),
                 format_number(s.sem), format_number(s.median)});
  }
}

void write_cells_table(const fs::path& path, const std::vector<std::string>& keys, const std::string& condition_name,
                       const std::vector<std::string>& metrics, const std::vector<Cell>& cells) {
  CsvWriter w(path);
  std::vector<std::string> header = keys;
  if (!condition_name.empty()) header.push_back(condition_name);
  header.push_back("seed");
  header.insert(header.end(), metrics.begin(), metrics.end());
  w.row(header);
  for (const auto& c : cells) {
    std::vector<std::string> row{c.task, c.method};
    if (!condition_name.empty()) row.push_back(c.condition);
    row.push_back(fmt_int(c.seed));
    for (const auto& m : metrics) row.push_back(format_number(c.metric(m)));
    w.row(row);
  }
}

RunResult finish(const RunConfig& cfg, std::vector<Cell> cells, OutputDir& out, const RunOptions& options,
                 const std::function<void(const std::vector<Cell>&, OutputDir&)>& write_specific) {
  if (options.write) {
    write_common(cfg, cells, out);
    write_specific(cells, out);
  }
  RunResult result;
  result.config = cfg;
  result.cells = std::move(cells);
  result.files = std::move(out.files);
  std::sort(result.files.begin(), result.files.end());
  return result;
}

OutputDir prepare_output(const RunConfig& cfg, const RunOptions& options) {
  OutputDir out;
  out.root = cfg.output_dir;
  if (options.write) {
    std::error_code ec;
    fs::create_directories(out.root / "traces", ec);
    require(!ec, ErrorCode::kIo, "cannot create " + (out.root / "traces").string() + ": " + ec.message());
  }
  return out;
}

SeedKey experiment_key(const RunConfig& cfg, const std::string& task) {
  return SeedKey(cfg.root_seed).with(cfg.experiment).with(task);
}

// -------------------------------------------------------------------- exp1

const std::vector<std::string> kExp1Metrics{"ess_n", "rel_wvar", "emp_relvar",  "nll",
                                            "ece",   "cov90",    "mean_lambda", "certified_frac"};

void exp1_cell(const RunConfig& cfg, bool traces, OutputDir& out, Cell& cell) {
  const auto spec = resolve_system(cell.task);
  const double occlusion = std::stod(cell.condition);
  const SeedKey key = experiment_key(cfg, cell.task);
  const auto seed = static_cast<std::uint64_t>(cell.seed);

  const auto traj = simulate_default(spec, steps_for(cfg, spec), key.with("data").with(seed).seed());
  CorruptionConfig cc;
  cc.obs_noise_std = cfg.filter.obs_noise;
  cc.observed_coords = spec.position_coords;
  const auto obs = occlude(corrupt(traj, cc, key.with("noise").with(seed).seed()), occlusion,
                           key.with("occlusion").with(cell.condition).with(seed).seed());

  const HybridFilter filter(spec, defensive_config(cfg, cell.method));
  const int r = static_cast<int>(spec.position_coords.size());
  const double log_sigma = std::log(cfg.filter.obs_noise);

  // Per replica, the log normalizer increment accumulated between observations.
  std::vector<std::vector<double>> observed_log_z;
  std::vector<double> ess, rel_wvar, nll, lambdas, certified, means, vars, values, confidence;
  std::vector<int> correct;
  for (int rep = 0; rep < cfg.filter.replicas; ++rep) {
    Rng rng = key.with(cell.method).with(cell.condition).with(seed).with(static_cast<std::uint64_t>(rep)).rng();
    const auto ens = filter.run(obs, traj.actions, cfg.filter.init_std, rng);
    std::vector<double> log_z;
    double acc = 0.0;
    for (const auto& d : ens.history) {
      acc += d.log_zhat;
      if (rep == 0) {
        lambdas.push_back(d.lambda);
        certified.push_back(d.certified ? 1.0 : 0.0);
        const int top = argmax_first(d.mode_posterior);
        confidence.push_back(d.mode_posterior(top));
        correct.push_back(top == traj.modes[static_cast<std::size_t>(d.t)] ? 1 : 0);
      }
      if (!d.observed) continue;
      log_z.push_back(acc);
      if (rep == 0) {
        ess.push_back(d.ess_over_n);
        rel_wvar.push_back(d.rel_weight_var);
        nll.push_back(-acc - r * log_sigma);
        for (int c = 0; c < r; ++c) {
          means.push_back(d.pred_mean(c));
          vars.push_back(d.pred_var(c));
          values.push_back(obs.values(d.t, c));
        }
      }
      acc = 0.0;
    }
    observed_log_z.push_back(std::move(log_z));

    if (rep == 0 && traces) {
      CsvWriter w(out.file("traces/" + trace_name(cell, "diagnostics")));
      w.row({"t", "lambda", "certified", "ess_n", "rel_wvar", "zhat", "log_zhat"});
      for (const auto& d : ens.history) {
        w.row({fmt_int(d.t), format_number(d.lambda), fmt_bool(d.certified), format_number(d.ess_over_n),
               format_number(d.rel_weight_var), format_number(d.zhat), format_number(d.log_zhat)});
      }
    }
  }

  double emp_relvar = kNA;
  if (cfg.filter.replicas >= 2 && !observed_log_z.front().empty()) {
    std::vector<double> per_step;
    for (std::size_t k = 0; k < observed_log_z.front().size(); ++k) {
      std::vector<double> logs;
      for (const auto& lz : observed_log_z) logs.push_back(lz[k]);
      const double top = *std::max_element(logs.begin(), logs.end());
      if (!std::isfinite(top)) continue;
      std::vector<double> z;
      for (double l : logs) z.push_back(std::exp(l - top));
      const double m = stats::mean(z);
      per_step.push_back(stats::sample_variance(z) / (m * m));
    }
    if (!per_step.empty()) emp_relvar = stats::mean(per_step);
  }

  const bool any_observed = !ess.empty();
  cell.metrics = {
      {"ess_n", any_observed ? stats::mean(ess) : kNA},
      {"rel_wvar", any_observed ? stats::mean(rel_wvar) : kNA},
      {"emp_relvar", emp_relvar},
      {"nll", any_observed ? stats::mean(nll) : kNA},
      {"ece", confidence.empty() ? kNA : expected_calibration_error(confidence, correct)},
      {"cov90", any_observed ? coverage90(means, vars, values) : kNA},
      {"mean_lambda", lambdas.empty() ? kNA : stats::mean(lambdas)},
      {"certified_frac", certified.empty() ? kNA : stats::mean(certified)},
  };
}

// -------------------------------------------------------------------- exp2

const std::vector<std::string> kExp2Metrics{"mode_f1", "ari", "changepoint_f1", "segment_purity"};

std::vector<double> proxy_scores(const HybridSystemSpec& spec, const Trajectory& tr, int stride, const ProxyConfig& pc) {
  std::vector<int> idx;
  for (int t = 0; t < tr.length(); t += stride) idx.push_back(t);
  const auto n = static_cast<Eigen::Index>(idx.size());
  MatrixXd object(n, static_cast<Eigen::Index>(spec.position_coords.size()));
  MatrixXd actions(n, spec.input_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < spec.position_coords.size(); ++c) {
      object(i, static_cast<Eigen::Index>(c)) = tr.states(idx[static_cast<std::size_t>(i)], spec.position_coords[c]);
    }
    actions.row(i) = tr.actions.row(idx[static_cast<std::size_t>(i)]);
  }
  return kinematic_score(object, MatrixXd(), actions, pc);
}

// Thresholds from a calibration pool disjoint from the evaluation seeds,
// frozen before any evaluation cell runs.
ProxyConfig calibrate_proxy(const RunConfig& cfg, const std::string& task) {
  const auto spec = resolve_system(task);
  const SeedKey key = experiment_key(cfg, task).with("calibration");
  ProxyConfig pc = cfg.proxy.config;
  std::vector<double> pool;
  for (int k = 0; k < cfg.proxy.calibration_episodes; ++k) {
    const auto tr = simulate_default(spec, steps_for(cfg, spec), key.with(static_cast<std::uint64_t>(k)).seed());
    const auto s = proxy_scores(spec, tr, cfg.proxy.frame_stride, pc);
    pool.insert(pool.end(), s.begin(), s.end());
  }
  std::tie(pc.theta_free, pc.theta_impact) = select_thresholds(pool, pc.free_quantile, pc.impact_quantile);
  return pc;
}

void exp2_cell(const RunConfig& cfg, const std::map<std::string, ProxyConfig>& proxies, bool traces,
               bool write_labels, OutputDir& out, Cell& cell) {
  const auto spec = resolve_system(cell.task);
  const ProxyConfig& pc = proxies.at(cell.task);
  const int stride = cfg.proxy.frame_stride;
  const SeedKey key = experiment_key(cfg, cell.task).with("heldout");
  const auto seed = static_cast<std::uint64_t>(cell.seed);

  const auto traj = simulate_default(spec, steps_for(cfg, spec), key.with("data").with(seed).seed());
  const auto score = proxy_scores(spec, traj, stride, pc);
  const auto labels = score_to_labels(score, pc);
  std::vector<int> truth;
  for (auto l : labels) truth.push_back(static_cast<int>(l));
  const int frames = static_cast<int>(truth.size());

  std::vector<int> pred(static_cast<std::size_t>(frames), 0);
  MatrixXd posterior;
  if (cell.method == "proxy_oracle") {
    pred = truth;
  } else if (cell.method == "full" || cell.method == "no_support") {
    CorruptionConfig cc;
    cc.obs_noise_std = cfg.filter.obs_noise;
    cc.observed_coords = spec.position_coords;
    const auto obs = occlude(corrupt(traj, cc, key.with("noise").with(seed).seed()), std::stod(cell.condition),
                             key.with("occlusion").with(cell.condition).with(seed).seed());
    const HybridFilter filter(spec, defensive_config(cfg, cell.method));
    Rng rng = key.with(cell.method).with(cell.condition).with(seed).rng();
    const auto ens = filter.run(obs, traj.actions, cfg.filter.init_std, rng);
    std::vector<VectorXd> marginals(static_cast<std::size_t>(traj.length()), VectorXd::Zero(spec.mode_count()));
    marginals[0](spec.s0) = 1.0;
    for (const auto& d : ens.history) marginals[static_cast<std::size_t>(d.t)] = d.mode_posterior;
    const auto decoded = decode_modes(marginals);
    posterior = MatrixXd(frames, spec.mode_count());
    for (int i = 0; i < frames; ++i) {
      pred[static_cast<std::size_t>(i)] = decoded.labels[static_cast<std::size_t>(i * stride)];
      posterior.row(i) = decoded.posterior.row(i * stride);
    }
  }
  // no_mode keeps the constant prediction.

  const auto rep = segmentation_report(pred, truth);
  cell.metrics = {{"mode_f1", rep.mode_f1},
                  {"ari", rep.ari},
                  {"changepoint_f1", rep.changepoint_f1},
                  {"segment_purity", rep.segment_purity}};

  if (!traces) return;
  {
    CsvWriter w(out.file("traces/" + trace_name(cell, "timeline")));
    std::vector<std::string> header{"t", "true_mode", "proxy_mode", "decoded_mode"};
    for (int m = 1; m <= spec.mode_count(); ++m) header.push_back("p_" + fmt_int(m));
    w.row(header);
    for (int i = 0; i < frames; ++i) {
      const int t = i * stride;
      std::vector<std::string> row{fmt_int(t), fmt_int(traj.modes[static_cast<std::size_t>(t)] + 1),
                                   std::string(to_string(labels[static_cast<std::size_t>(i)])),
                                   fmt_int(pred[static_cast<std::size_t>(i)] + 1)};
      for (int m = 0; m < spec.mode_count(); ++m) {
        row.push_back(posterior.size() ? format_number(posterior(i, m)) : std::string());
      }
      w.row(row);
    }
  }
  if (write_labels) {
    Cell named = cell;
    named.method = "proxy";
    named.condition.clear();
    write_labels_csv(out.file("traces/" + trace_name(named, "labels")).string(), score, labels);
  }
}

// -------------------------------------------------------------------- exp3

const std::vector<std::string> kExp3Metrics{"support_f1", "coeff_err", "vf_nrmse", "const_err",
                                            "lambda",     "kappa",     "score_gate", "bound_ok"};

struct RecoveryData {
  MatrixXd states;
  MatrixXd derivatives;
  MatrixXd actions;
  std::vector<int> labels;
  std::vector<int> available;
  /// Perturbed structure (J, R, G) the fits plug in, per mode.
  std::vector<ModeLaw> structure;
};

MatrixXd perturb_skew(const MatrixXd& J, double eps, Rng& rng) {
  std::normal_distribution<double> n01;
  MatrixXd E(J.rows(), J.cols());
  for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = n01(rng);
  const double scale = J.size() ? J.cwiseAbs().maxCoeff() : 0.0;
  return J + eps * scale * 0.5 * (E - E.transpose());
}

MatrixXd perturb_elementwise(const MatrixXd& M, double eps, bool symmetric, Rng& rng) {
  std::normal_distribution<double> n01;
  MatrixXd E(M.rows(), M.cols());
  for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = n01(rng);
  if (symmetric) E = 0.5 * (E + E.transpose());
  return M.array() * (1.0 + eps * E.array());
}

RecoveryData recovery_data(const RunConfig& cfg, const HybridSystemSpec& spec, const SeedKey& key) {
  const auto& rc = cfg.recovery;
  const auto traj = simulate_default(spec, steps_for(cfg, spec), key.with("data").seed());
  CorruptionConfig cc;
  cc.obs_noise_std = rc.obs_noise;
  cc.der_noise_std = rc.der_noise;
  cc.missing_rate = rc.missing_rate;
  cc.mode_flip_prob = rc.mode_flip_prob;
  cc.observed_coords = spec.position_coords;
  const auto obs = corrupt(traj, cc, key.with("corrupt").seed());

  RecoveryData data;
  const int T = obs.length();
  const int d = spec.state_dim;
  data.states = MatrixXd::Constant(T, d, kNA);
  data.derivatives = obs.derivatives;
  data.actions = traj.actions;
  for (int t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < spec.position_coords.size(); ++c) {
      data.states(t, spec.position_coords[c]) = obs.values(t, static_cast<Eigen::Index>(c));
    }
    // Momenta are hidden; they come from the noisy derivative channel.
    for (const auto& vm : spec.velocity_maps) data.states(t, vm.momentum) = vm.mass * obs.derivatives(t, vm.position);
    if (obs.available(t) && data.states.row(t).allFinite() && data.derivatives.row(t).allFinite()) {
      data.available.push_back(t);
    }
  }
  data.labels = denoise_runs(obs.mode_labels, rc.label_min_run);

  Rng rng = key.with("structure").rng();
  for (const auto& law : spec.modes) {
    ModeLaw s = law;
    s.J = perturb_skew(law.J, rc.structure_perturbation, rng);
    s.R = perturb_elementwise(law.R, rc.structure_perturbation, true, rng);
    s.G = perturb_elementwise(law.G, rc.structure_perturbation, false, rng);
    data.structure.push_back(std::move(s));
  }
  return data;
}

std::vector<int> rows_in_mode(const RecoveryData& data, int mode) {
  std::vector<int> rows;
  for (int t : data.available) {
    if (data.labels[static_cast<std::size_t>(t)] == mode) rows.push_back(t);
  }
  return rows;
}

Design design_for(const HybridSystemSpec& spec, const RecoveryData& data, const ModeLaw& structure,
                  const std::vector<int>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  MatrixXd Z(n, spec.state_dim), D(n, spec.state_dim), U(n, spec.input_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = rows[static_cast<std::size_t>(i)];
    Z.row(i) = data.states.row(t);
    D.row(i) = data.derivatives.row(t);
    U.row(i) = data.actions.row(t);
  }
  return plugin_design(spec.library, structure.J, structure.R, structure.G, Z, D, U);
}

VectorXd column_scale(const MatrixXd& A) {
  VectorXd s(A.cols());
  const double n = static_cast<double>(std::max<Eigen::Index>(1, A.rows()));
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    const double v = A.col(j).norm() / std::sqrt(n);
    s(j) = v > 0.0 ? v : 1.0;
  }
  return s;
}

// Drops the weakest OLS t-statistic below t_min until every kept term clears it.
std::vector<int> backward_eliminate(const MatrixXd& A, const VectorXd& b, std::vector<int> support, double t_min) {
  const Eigen::Index n = A.rows();
  while (!support.empty()) {
    const auto m = static_cast<Eigen::Index>(support.size());
    MatrixXd sub(n, m);
    for (Eigen::Index a = 0; a < m; ++a) sub.col(a) = A.col(support[static_cast<std::size_t>(a)]);
    const MatrixXd gram_inv = (sub.transpose() * sub).ldlt().solve(MatrixXd::Identity(m, m));
    const VectorXd coef = gram_inv * (sub.transpose() * b);
    const double s2 = (b - sub * coef).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, n - m));
    int worst = -1;
    double worst_t = t_min;
    for (Eigen::Index a = 0; a < m; ++a) {
      const double t = std::abs(coef(a)) / std::sqrt(s2 * gram_inv(a, a));
      if (t < worst_t) {
        worst_t = t;
        worst = static_cast<int>(a);
      }
    }
    if (worst < 0) break;
    support.erase(support.begin() + worst);
  }
  return support;
}

struct SparseFit {
  VectorXd xi;  // original units
  std::vector<int> support;
  double lambda = 0.0;
  VectorXd lasso_xi;  // standardized units
  VectorXd scale;
  MatrixXd standardized;
};

SparseFit sparse_fit(const Design& des, const RecoverySettings& rc) {
  SparseFit fit;
  fit.scale = column_scale(des.A);
  fit.standardized = des.A * fit.scale.cwiseInverse().asDiagonal();
  const auto n = static_cast<int>(des.A.rows());
  const auto p = static_cast<int>(des.A.cols());
  const double sigma = ridge_sigma(fit.standardized, des.b);
  fit.lambda = choose_penalty(1.0, sigma, p, n, rc.delta);
  fit.lasso_xi = lasso(fit.standardized, des.b, fit.lambda).xi;
  fit.support = backward_eliminate(fit.standardized, des.b, support_of(fit.lasso_xi), rc.t_min);
  fit.xi = fit.scale.cwiseInverse().asDiagonal() * refit_on_support(fit.standardized, des.b, fit.support);
  return fit;
}

double value_range(const VectorXd& v) { return v.size() ? v.maxCoeff() - v.minCoeff() : 0.0; }

std::vector<std::pair<double, double>> constants_for(const HybridSystemSpec& spec, int mode, const VectorXd& xi) {
  std::vector<std::pair<double, double>> out;
  for (const auto& c : spec.constants) {
    if (c.mode == mode) out.emplace_back(c.truth, c.read(xi));
  }
  return out;
}

Metrics recovery_row(const HybridSystemSpec& spec, int mode, const VectorXd& xi_hat, const std::vector<int>& support,
                     const Design& des) {
  const auto& law = spec.mode(mode);
  const auto constants = constants_for(spec, mode, xi_hat);
  const VectorXd field = des.A * law.xi;
  const auto m = recovery_metrics(xi_hat, support, law.xi, support_of(law.xi), des.A, value_range(field), constants);
  return {{"samples", static_cast<double>(des.samples)},
          {"support_f1", m.support_f1},
          {"coeff_err", m.rel_coeff_err},
          {"vf_nrmse", m.vf_nrmse},
          {"const_err", constants.empty() ? kNA : m.const_err}};
}

double metric_of(const Metrics& m, std::string_view name) {
  for (const auto& [k, v] : m) {
    if (k == name) return v;
  }
  return kNA;
}

// Unstructured baseline: zdot regressed on flattened library gradients and
// actions, so there is no coefficient vector to compare.
Metrics unstructured_row(const HybridSystemSpec& spec, int mode, const RecoveryData& data, const std::vector<int>& rows,
                         const Design& des) {
  const int d = spec.state_dim;
  const int p = spec.library.size();
  const int q = spec.input_dim;
  const auto n = static_cast<Eigen::Index>(rows.size());
  MatrixXd Z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) Z.row(i) = data.states.row(rows[static_cast<std::size_t>(i)]);
  const auto lib = build_library(Z, spec.library);
  MatrixXd X(n, p * d + q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MatrixXd& g = lib.gradients[static_cast<std::size_t>(i)];
    for (int j = 0; j < p; ++j) {
      for (int c = 0; c < d; ++c) X(i, j * d + c) = g(j, c);
    }
    X.row(i).tail(q) = data.actions.row(rows[static_cast<std::size_t>(i)]);
  }
  const VectorXd s = column_scale(X);
  const MatrixXd Xs = X * s.cwiseInverse().asDiagonal();
  const MatrixXd gram = Xs.transpose() * Xs + 1e-6 * static_cast<double>(n) * MatrixXd::Identity(Xs.cols(), Xs.cols());
  const auto solver = gram.ldlt();
  VectorXd zdot(n * d), pred(n * d);
  for (int c = 0; c < d; ++c) {
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = data.derivatives(rows[static_cast<std::size_t>(i)], c);
    const VectorXd fitted = Xs * solver.solve(Xs.transpose() * y);
    for (Eigen::Index i = 0; i < n; ++i) {
      zdot(i * d + c) = y(i);
      pred(i * d + c) = fitted(i);
    }
  }
  // Plug-in truth A xi* + G a, where G a = zdot - b by construction of the design.
  const VectorXd field = des.A * spec.mode(mode).xi;
  const VectorXd target = field + (zdot - des.b);
  const double denom = std::sqrt(static_cast<double>(target.size())) * std::max(value_range(field), 1e-300);
  return {{"samples", static_cast<double>(des.samples)},
          {"support_f1", kNA},
          {"coeff_err", kNA},
          {"vf_nrmse", (pred - target).norm() / denom},
          {"const_err", kNA}};
}

double mean_finite(const std::vector<std::pair<std::string, Metrics>>& parts, std::string_view name) {
  std::vector<double> v;
  for (const auto& [label, m] : parts) {
    const double x = metric_of(m, name);
    if (std::isfinite(x)) v.push_back(x);
  }
  return v.empty() ? kNA : stats::mean(v);
}

void exp3_cell(const RunConfig& cfg, Cell& cell) {
  const auto spec = resolve_system(cell.task);
  const auto& rc = cfg.recovery;
  const SeedKey key = experiment_key(cfg, cell.task).with(static_cast<std::uint64_t>(cell.seed));
  const auto data = recovery_data(cfg, spec, key);

  std::vector<int> modes;
  for (int m = 0; m < spec.mode_count(); ++m) {
    if (spec.mode(m).identifiable) modes.push_back(m);
  }
  require(!modes.empty(), ErrorCode::kEmptyInput, "no identifiable mode");

  double lambda = kNA;
  double kappa = kNA;
  double gate = kNA;
  double bound_ok = kNA;

  if (cell.method == "no_mode") {
    const Design pooled = design_for(spec, data, data.structure[0], data.available);
    const auto fit = sparse_fit(pooled, rc);
    lambda = fit.lambda;
    for (int m : modes) {
      const Design des = design_for(spec, data, data.structure[static_cast<std::size_t>(m)], rows_in_mode(data, m));
      cell.details.emplace_back(spec.mode(m).name, recovery_row(spec, m, fit.xi, fit.support, des));
    }
  } else {
    int gated = 0;
    int gated_ok = 0;
    for (int m : modes) {
      const auto rows = rows_in_mode(data, m);
      require(!rows.empty(), ErrorCode::kEmptyInput, "no samples labelled " + spec.mode(m).name);
      const Design des = design_for(spec, data, data.structure[static_cast<std::size_t>(m)], rows);
      if (cell.method == "no_ph") {
        cell.details.emplace_back(spec.mode(m).name, unstructured_row(spec, m, data, rows, des));
        continue;
      }
      if (cell.method == "no_sparsity") {
        const VectorXd s = column_scale(des.A);
        const MatrixXd An = des.A * s.cwiseInverse().asDiagonal();
        std::vector<int> all(static_cast<std::size_t>(An.cols()));
        for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
        const VectorXd xi = s.cwiseInverse().asDiagonal() * refit_on_support(An, des.b, all);
        cell.details.emplace_back(spec.mode(m).name, recovery_row(spec, m, xi, support_of(xi), des));
        continue;
      }
      const auto fit = sparse_fit(des, rc);
      const VectorXd xs = fit.scale.asDiagonal() * spec.mode(m).xi;
      KappaOptions ko;
      ko.draws = rc.kappa_draws;
      ko.seed = key.with("kappa").with(static_cast<std::uint64_t>(m)).seed();
      const double k = estimate_kappa(fit.standardized, support_of(xs), ko);
      const auto oracle = oracle_check(fit.lasso_xi, xs, fit.standardized, des.b, fit.lambda, k);
      auto row = recovery_row(spec, m, fit.xi, fit.support, des);
      row.insert(row.end(), {{"lambda", fit.lambda},
                             {"kappa", k},
                             {"score", oracle.score},
                             {"score_gate", oracle.score_gate ? 1.0 : 0.0},
                             {"error_norm", oracle.error_norm},
                             {"error_bound", oracle.error_bound},
                             {"cone_ok", oracle.cone_ok ? 1.0 : 0.0},
                             {"bound_ok", oracle.score_gate ? (oracle.bound_ok && oracle.cone_ok ? 1.0 : 0.0) : kNA}});
      cell.details.emplace_back(spec.mode(m).name, std::move(row));
      lambda = std::isfinite(lambda) ? std::max(lambda, fit.lambda) : fit.lambda;
      kappa = std::isfinite(kappa) ? std::min(kappa, k) : k;
      if (oracle.score_gate) {
        ++gated;
        gated_ok += oracle.bound_ok && oracle.cone_ok;
      }
    }
    if (cell.method == "full") {
      gate = gated == static_cast<int>(modes.size()) ? 1.0 : 0.0;
      bound_ok = gated > 0 ? (gated_ok == gated ? 1.0 : 0.0) : kNA;
    }
  }

  cell.metrics = {{"support_f1", mean_finite(cell.details, "support_f1")},
                  {"coeff_err", mean_finite(cell.details, "coeff_err")},
                  {"vf_nrmse", mean_finite(cell.details, "vf_nrmse")},
                  {"const_err", mean_finite(cell.details, "const_err")},
                  {"lambda", lambda},
                  {"kappa", kappa},
                  {"score_gate", gate},
                  {"bound_ok", bound_ok}};
}

// ----------------------------------------------------------------- certify

void certify_cell(const RunConfig& cfg, Cell& cell) {
  const auto spec = resolve_system(cell.task);
  const SeedKey key = experiment_key(cfg, cell.task).with(static_cast<std::uint64_t>(cell.seed));
  std::vector<Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(cfg.certify.rollouts));
  for (int i = 0; i < cfg.certify.rollouts; ++i) {
    batch.push_back(simulate_default(spec, steps_for(cfg, spec), key.with(static_cast<std::uint64_t>(i)).seed()));
  }
  const auto diag = energy_drift_diagnostic(spec, batch, false);
  require(diag.assumptions.met, ErrorCode::kAssumptionUnmet, diag.assumptions.reason);
  cell.metrics = {{"alpha", diag.bound.alpha},
                  {"C_E", diag.bound.c_e},
                  {"T", diag.horizon},
                  {"bound", diag.bound.bound},
                  {"empirical_U", diag.empirical_mean},
                  {"standard_error", diag.standard_error},
                  {"pass", diag.pass ? 1.0 : 0.0}};
}

}  // namespace

// ================================================================== public

std::string format_number(double x) {
  if (!std::isfinite(x)) return {};
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

RunConfig default_config(std::string_view experiment) {
  RunConfig c;
  c.experiment = std::string(experiment);
  c.output_dir = "out/" + c.experiment;
  if (experiment == "exp1") {
    c.tasks = {"contact_toy"};
    c.occlusion = {0.0, 0.5, 0.9};
    c.filter.obs_noise = 0.05;
  } else if (experiment == "exp2") {
    c.tasks = {"block"};
    c.occlusion = {0.0};
    c.filter.obs_noise = 0.01;
    c.filter.replicas = 1;
  } else if (experiment == "exp3") {
    for (auto s : all_systems()) c.tasks.emplace_back(to_string(s));
    c.occlusion = {};
  } else if (experiment == "certify") {
    for (const auto& s : linear_ph_benchmarks()) c.tasks.push_back(s.name);
    c.occlusion = {};
    c.seeds = 1;
    c.steps = 3200;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown experiment '" + std::string(experiment) + "'");
  }
  c.methods = known_methods(experiment);
  return c;
}

const std::vector<std::string>& known_methods(std::string_view experiment) {
  static const std::map<std::string, std::vector<std::string>, std::less<>> table{
      {"exp1", {"full_adaptive", "conservative", "lambda0"}},
      {"exp2", {"full", "no_support", "no_mode", "proxy_oracle"}},
      {"exp3", {"full", "no_mode", "no_sparsity", "no_ph"}},
      {"certify", {"energy_drift"}},
  };
  const auto it = table.find(experiment);
  require(it != table.end(), ErrorCode::kInvalidArgument, "unknown experiment '" + std::string(experiment) + "'");
  return it->second;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "config: " + what); };
  if (c.schema_version != kSchemaVersion) fail("schema_version must be " + std::to_string(kSchemaVersion));
  const auto& known = known_methods(c.experiment);
  if (c.seeds < 1) fail("seeds must be >= 1");
  if (c.steps < 0) fail("steps must be >= 0");
  if (c.methods.empty()) fail("methods must be nonempty");
  if (c.tasks.empty()) fail("tasks must be nonempty");
  for (const auto& m : c.methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      fail("method '" + m + "' is not available for " + c.experiment);
    }
  }
  for (const auto& t : c.tasks) resolve_system(t);
  for (double o : c.occlusion) {
    if (!(o >= 0.0 && o < 1.0)) fail("occlusion values must lie in [0,1)");
  }
  if ((c.experiment == "exp1" || c.experiment == "exp2") && c.occlusion.empty()) fail("occlusion grid is empty");
  if (c.filter.particles < 1 || c.filter.replicas < 1) fail("filter.particles and filter.replicas must be >= 1");
  if (!(c.filter.tau > 0.0) || !(c.filter.obs_noise > 0.0)) fail("filter.tau and filter.obs_noise must be > 0");
  if (!(c.filter.lambda_conservative >= 0.0 && c.filter.lambda_conservative <= 1.0)) {
    fail("filter.lambda_conservative must lie in [0,1]");
  }
  if (c.proxy.frame_stride < 1 || c.proxy.calibration_episodes < 1) {
    fail("proxy.frame_stride and proxy.calibration_episodes must be >= 1");
  }
  const auto& r = c.recovery;
  if (!(r.missing_rate >= 0.0 && r.missing_rate < 1.0) || !(r.mode_flip_prob >= 0.0 && r.mode_flip_prob < 1.0)) {
    fail("recovery rates must lie in [0,1)");
  }
  if (!(r.delta > 0.0 && r.delta < 1.0)) fail("recovery.delta must lie in (0,1)");
  if (c.certify.rollouts < 1) fail("certify.rollouts must be >= 1");
}

RunConfig parse_config(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  require(in.is_object() && in.contains("experiment") && in.at("experiment").is_string(),
          ErrorCode::kInvalidArgument, "config: missing string field 'experiment'");
  json merged = to_json(default_config(in.at("experiment").get<std::string>()));
  check_keys(in, merged, "");
  merged.merge_patch(in);
  RunConfig c;
  try {
    c = from_json(merged);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string_view mechanism_field(std::string_view experiment, std::string_view method) {
  if (method == known_methods(experiment).front()) return {};
  if (experiment == "exp1" || method == "no_support") return "filter.lambda_rule";
  if (experiment == "exp2") return "decoder";
  if (method == "no_mode") return "recovery.mode_conditioning";
  return "recovery.regressor";
}

DefensiveConfig defensive_config(const RunConfig& config, const std::string& method) {
  DefensiveConfig d;
  const auto& f = config.filter;
  d.particles = f.particles;
  d.tau = f.tau;
  d.lambda_fb = f.lambda_fb;
  d.ess_trigger = f.ess_trigger;
  d.obs_noise_std = f.obs_noise;
  d.proposal.contact_dropout = f.contact_dropout;
  d.policy = LambdaPolicy::kCertified;
  if (method == "conservative") {
    d.policy = LambdaPolicy::kFixed;
    d.fixed_lambda = f.lambda_conservative;
  } else if (method == "lambda0" || method == "no_support") {
    d.policy = LambdaPolicy::kFixed;
    d.fixed_lambda = 0.0;
  }
  return d;
}

std::map<std::string, std::string> effective_method_config(const RunConfig& config, const std::string& method) {
  json j = to_json(config);
  j.erase("methods");
  j.erase("output_dir");
  std::map<std::string, std::string> out;
  flatten(j, "", out);
  const auto& e = config.experiment;
  if (e == "exp1" || e == "exp2") {
    const auto d = defensive_config(config, method);
    out["filter.lambda_rule"] =
        d.policy == LambdaPolicy::kCertified ? "certified" : "fixed:" + format_number(d.fixed_lambda);
    out["filter.certificate_inflation"] = format_number(d.certificate_inflation);
    out["filter.quadrature_nodes"] = fmt_int(d.quadrature_nodes);
    out["filter.mode_floor"] = format_number(d.transition.mode_floor);
    out["filter.process_floor"] = format_number(d.transition.process_floor);
    out["filter.obs_variance_scale"] = format_number(d.proposal.obs_variance_scale);
  }
  if (e == "exp2") {
    out["decoder"] = method == "no_mode" ? "constant" : method == "proxy_oracle" ? "proxy" : "filter_argmax";
  }
  if (e == "exp3") {
    out["recovery.mode_conditioning"] = method == "no_mode" ? "pooled" : "per_mode";
    out["recovery.regressor"] = method == "no_sparsity" ? "ols"
                                : method == "no_ph"     ? "ridge_unstructured"
                                                        : "lasso_tstat_refit";
  }
  return out;
}

std::vector<std::string> config_diff(const std::map<std::string, std::string>& a,
                                     const std::map<std::string, std::string>& b) {
  std::vector<std::string> out;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end() || it->second != v) out.push_back(k);
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) out.push_back(k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double Cell::metric(std::string_view name) const { return metric_of(metrics, name); }

void sort_cells(std::vector<Cell>& cells) {
  auto key = [](const Cell& c) { return std::tie(c.experiment, c.task, c.method, c.condition, c.seed); };
  std::stable_sort(cells.begin(), cells.end(), [&](const Cell& a, const Cell& b) { return key(a) < key(b); });
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  const int threads = std::min(std::max(1, workers), std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::vector<PlotRow> plot_rows(const std::vector<Cell>& cells) {
  std::vector<Cell> sorted = cells;
  sort_cells(sorted);
  std::vector<PlotRow> rows;
  for (const auto& c : sorted) {
    for (const auto& [name, value] : c.metrics) {
      rows.push_back({c.experiment, c.task, c.method, c.condition, c.seed, name, value});
    }
  }
  return rows;
}

std::string emit_plotdata(const std::vector<Cell>& cells) {
  std::string out = "experiment,task,method,condition,seed,metric,value\n";
  for (const auto& r : plot_rows(cells)) {
    out += csv_field(r.experiment) + ',' + csv_field(r.task) + ',' + csv_field(r.method) + ',' +
           csv_field(r.condition) + ',' + fmt_int(r.seed) + ',' + csv_field(r.metric) + ',' + format_number(r.value) +
           '\n';
  }
  return out;
}

std::vector<PlotRow> parse_plotdata(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == "experiment,task,method,condition,seed,metric,value",
          ErrorCode::kInvalidArgument, "plotdata: bad header");
  std::vector<PlotRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == 7, ErrorCode::kInvalidArgument, "plotdata: expected 7 fields in '" + line + "'");
    PlotRow r{f[0], f[1], f[2], f[3], std::stoi(f[4]), f[5], kNA};
    if (!f[6].empty()) {
      const auto res = std::from_chars(f[6].data(), f[6].data() + f[6].size(), r.value);
      require(res.ec == std::errc(), ErrorCode::kInvalidArgument, "plotdata: bad value '" + f[6] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<Cell>& cells) {
  std::vector<Cell> sorted = cells;
  sort_cells(sorted);
  std::vector<SummaryRow> out;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    auto same = [&](const Cell& a, const Cell& b) {
      return a.experiment == b.experiment && a.task == b.task && a.method == b.method && a.condition == b.condition;
    };
    while (j < sorted.size() && same(sorted[i], sorted[j])) ++j;
    int failed = 0;
    std::vector<std::string> names;
    for (std::size_t k = i; k < j; ++k) {
      if (!sorted[k].ok()) ++failed;
      for (const auto& [name, v] : sorted[k].metrics) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      }
    }
    for (const auto& name : names) {
      std::vector<double> v;
      for (std::size_t k = i; k < j; ++k) {
        const double x = sorted[k].metric(name);
        if (sorted[k].ok() && std::isfinite(x)) v.push_back(x);
      }
      SummaryRow s{sorted[i].task, sorted[i].method, sorted[i].condition, name, static_cast<int>(v.size()), failed,
                   kNA, kNA, kNA};
      if (!v.empty()) {
        s.mean = stats::mean(v);
        s.median = stats::median(v);
        if (v.size() >= 2) s.sem = stats::sem(v);
      }
      out.push_back(std::move(s));
    }
    i = j;
  }
  return out;
}

RunResult run_exp1(const RunConfig& cfg, const RunOptions& options) {
  validate(cfg);
  require(cfg.experiment == "exp1", ErrorCode::kInvalidArgument, "run_exp1 needs an exp1 config");
  auto out = prepare_output(cfg, options);
  std::vector<Cell> cells;
  for (const auto& task : cfg.tasks) {
    for (const auto& method : cfg.methods) {
      for (double occ : cfg.occlusion) {
        for (int s = 0; s < cfg.seeds; ++s) cells.push_back(make_cell(cfg, task, method, condition_label(occ), s));
      }
    }
  }
  const bool traces = options.write && cfg.write_traces;
  cells = run_cells(std::move(cells), options.workers, [&](Cell& c) { exp1_cell(cfg, traces, out, c); });
  return finish(cfg, std::move(cells), out, options, [&](const std::vector<Cell>& cs, OutputDir& o) {
    write_cells_table(o.file("exp1_cells.csv"), {"task", "method"}, "occlusion", kExp1Metrics, cs);
  });
}

RunResult run_exp2(const RunConfig& cfg, const RunOptions& options) {
  validate(cfg);
  require(cfg.experiment == "exp2", ErrorCode::kInvalidArgument, "run_exp2 needs an exp2 config");
  auto out = prepare_output(cfg, options);
  std::map<std::string, ProxyConfig> proxies;
  for (const auto& task : cfg.tasks) proxies[task] = calibrate_proxy(cfg, task);
  std::vector<Cell> cells;
  for (const auto& task : cfg.tasks) {
    for (const auto& method : cfg.methods) {
      for (double occ : cfg.occlusion) {
        for (int s = 0; s < cfg.seeds; ++s) cells.push_back(make_cell(cfg, task, method, condition_label(occ), s));
      }
    }
  }
  const bool traces = options.write && cfg.write_traces;
  const std::string first_condition = condition_label(cfg.occlusion.front());
  cells = run_cells(std::move(cells), options.workers, [&](Cell& c) {
    const bool labels = traces && c.method == cfg.methods.front() && c.condition == first_condition;
    exp2_cell(cfg, proxies, traces, labels, out, c);
  });
  return finish(cfg, std::move(cells), out, options, [&](const std::vector<Cell>& cs, OutputDir& o) {
    write_cells_table(o.file("exp2_cells.csv"), {"task", "method"}, "occlusion", kExp2Metrics, cs);
    CsvWriter w(o.file("exp2_thresholds.csv"));
    w.row({"task", "theta_free", "theta_impact"});
    for (const auto& [task, pc] : proxies) w.row({task, format_number(pc.theta_free), format_number(pc.theta_impact)});
  });
}

RunResult run_exp3(const RunConfig& cfg, const RunOptions& options) {
  validate(cfg);
  require(cfg.experiment == "exp3", ErrorCode::kInvalidArgument, "run_exp3 needs an exp3 config");
  auto out = prepare_output(cfg, options);
  std::vector<Cell> cells;
  for (const auto& task : cfg.tasks) {
    for (const auto& method : cfg.methods) {
      for (int s = 0; s < cfg.seeds; ++s) cells.push_back(make_cell(cfg, task, method, "", s));
    }
  }
  cells = run_cells(std::move(cells), options.workers, [&](Cell& c) { exp3_cell(cfg, c); });
  return finish(cfg, std::move(cells), out, options, [&](const std::vector<Cell>& cs, OutputDir& o) {
    {
      CsvWriter w(o.file("exp3_fit_report.csv"));
      w.row({"system", "method", "seed", "support_f1", "coeff_err", "vf_nrmse", "const_err", "lambda", "kappa",
             "score_gate", "bound_ok"});
      for (const auto& c : cs) {
        w.row({c.task, c.method, fmt_int(c.seed), format_number(c.metric("support_f1")),
               format_number(c.metric("coeff_err")), format_number(c.metric("vf_nrmse")),
               format_number(c.metric("const_err")), format_number(c.metric("lambda")),
               format_number(c.metric("kappa")), fmt_flag(c.metric("score_gate")), fmt_flag(c.metric("bound_ok"))});
      }
    }
    const std::vector<std::string> cols{"samples", "support_f1", "coeff_err", "vf_nrmse", "const_err",
                                        "lambda",  "kappa",      "score",     "score_gate", "error_norm",
                                        "error_bound", "cone_ok", "bound_ok"};
    CsvWriter w(o.file("exp3_modes.csv"));
    std::vector<std::string> header{"system", "method", "seed", "mode"};
    header.insert(header.end(), cols.begin(), cols.end());
    w.row(header);
    for (const auto& c : cs) {
      for (const auto& [mode, m] : c.details) {
        std::vector<std::string> row{c.task, c.method, fmt_int(c.seed), mode};
        for (const auto& col : cols) row.push_back(format_number(metric_of(m, col)));
        w.row(row);
      }
    }
  });
}

RunResult run_certify(const RunConfig& cfg, const RunOptions& options) {
  validate(cfg);
  require(cfg.experiment == "certify", ErrorCode::kInvalidArgument, "run_certify needs a certify config");
  auto out = prepare_output(cfg, options);
  std::vector<Cell> cells;
  for (const auto& task : cfg.tasks) {
    for (const auto& method : cfg.methods) {
      for (int s = 0; s < cfg.seeds; ++s) cells.push_back(make_cell(cfg, task, method, "", s));
    }
  }
  cells = run_cells(std::move(cells), options.workers, [&](Cell& c) { certify_cell(cfg, c); });
  return finish(cfg, std::move(cells), out, options, [&](const std::vector<Cell>& cs, OutputDir& o) {
    CsvWriter w(o.file("certificate.csv"));
    w.row({"system", "alpha", "C_E", "T", "bound", "empirical_U", "pass"});
    for (const auto& c : cs) {
      w.row({c.task, format_number(c.metric("alpha")), format_number(c.metric("C_E")), format_number(c.metric("T")),
             format_number(c.metric("bound")), format_number(c.metric("empirical_U")), fmt_flag(c.metric("pass"))});
    }
  });
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  if (config.experiment == "exp1") return run_exp1(config, options);
  if (config.experiment == "exp2") return run_exp2(config, options);
  if (config.experiment == "exp3") return run_exp3(config, options);
  if (config.experiment == "certify") return run_certify(config, options);
  throw Error(ErrorCode::kInvalidArgument, "unknown experiment '" + config.experiment + "'");
}

}  // namespace phmix::harness
