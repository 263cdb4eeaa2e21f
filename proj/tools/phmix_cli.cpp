#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "phmix/error.hpp"
#include "phmix/harness.hpp"
#include "phmix/systems.hpp"

namespace {

using namespace phmix;

struct Globals {
  int workers = 1;
  std::optional<std::uint64_t> root_seed;
};

struct ExperimentArgs {
  std::string config;
  std::string output_dir;
};

int run_experiment(const std::string& experiment, const ExperimentArgs& args, const Globals& g) {
  harness::RunConfig cfg = args.config.empty() ? harness::default_config(experiment) : harness::load_config(args.config);
  require(cfg.experiment == experiment, ErrorCode::kInvalidArgument,
          "config is for '" + cfg.experiment + "', this command runs '" + experiment + "'");
  if (g.root_seed) cfg.root_seed = *g.root_seed;
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  harness::RunOptions opts;
  opts.workers = g.workers;
  const auto result = harness::run(cfg, opts);
  int failed = 0;
  for (const auto& c : result.cells) failed += !c.ok();
  std::cout << experiment << ": " << result.cells.size() << " cells, " << failed << " failed, "
            << result.files.size() << " files in " << cfg.output_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid port-Hamiltonian filtering and recovery experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t root_seed = 0;
  app.add_option("--workers", g.workers, "Concurrent cells")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--root-seed", root_seed, "Root seed overriding the config");

  std::string system;
  std::uint64_t seed = 0;
  int steps = 0;
  std::string out;
  std::string obs_out;
  double obs_noise = 0.01;
  double occlusion = 0.0;
  auto* sim = app.add_subcommand("simulate", "Simulate one trajectory and write it as CSV");
  sim->add_option("--system", system, "puck | block | pendulum | pusher | contact_toy")->required();
  sim->add_option("--seed", seed, "Trajectory seed")->required();
  sim->add_option("--steps", steps, "Number of steps (0: system default)");
  sim->add_option("--out", out, "Trajectory CSV path")->required();
  sim->add_option("--observations", obs_out, "Also write a corrupted observation CSV here");
  sim->add_option("--obs-noise", obs_noise, "Observation noise std for --observations");
  sim->add_option("--occlusion", occlusion, "Occlusion rate for --observations")->check(CLI::Range(0.0, 0.999999));

  const std::pair<const char*, const char*> experiments[] = {
      {"sweep-occlusion", "exp1"}, {"segment", "exp2"}, {"recover", "exp3"}, {"certify", "certify"}};
  std::map<CLI::App*, std::string> experiment_of;
  ExperimentArgs exp_args;
  for (const auto& [name, experiment] : experiments) {
    auto* sub = app.add_subcommand(name, std::string("Run ") + experiment);
    sub->add_option("--config", exp_args.config, "Run configuration (JSON); defaults when omitted");
    sub->add_option("--output-dir", exp_args.output_dir, "Override the configured output directory");
    experiment_of[sub] = experiment;
  }
  std::string defaults_for;
  auto* defaults = app.add_subcommand("print-config", "Print the default configuration of an experiment");
  defaults->add_option("experiment", defaults_for, "exp1 | exp2 | exp3 | certify")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count()) g.root_seed = root_seed;

  try {
    if (sim->parsed()) {
      const auto spec = make_system_by_name(system);
      const auto traj = simulate_default(spec, steps > 0 ? steps : spec.default_steps, seed);
      write_trajectory_csv(traj, out);
      std::cout << "wrote " << traj.length() << " steps to " << out << "\n";
      if (!obs_out.empty()) {
        CorruptionConfig cc;
        cc.obs_noise_std = obs_noise;
        cc.observed_coords = spec.position_coords;
        const auto obs = occlude(corrupt(traj, cc, splitmix64(seed ^ 0x6f6273ULL)), occlusion, splitmix64(seed + 1));
        write_observations_csv(obs, obs_out);
        std::cout << "wrote observations to " << obs_out << "\n";
      }
      return 0;
    }
    if (defaults->parsed()) {
      std::cout << harness::dump_config(harness::default_config(defaults_for));
      return 0;
    }
    for (const auto& [sub, experiment] : experiment_of) {
      if (sub->parsed()) return run_experiment(experiment, exp_args, g);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
