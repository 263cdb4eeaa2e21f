#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "phmix/library.hpp"
#include "phmix/rng.hpp"

namespace phmix {

/// Per-mode port-Hamiltonian law: zdot = (J - R) grad H(z) + G a, H = Theta^T xi.
struct ModeLaw {
  std::string name;
  Eigen::MatrixXd J;
  Eigen::MatrixXd R;
  Eigen::MatrixXd G;
  Eigen::MatrixXd Sigma;
  Eigen::VectorXd xi;
  /// U_m(z) = H_m(z) + energy_offset, the shifted energy used by switch and
  /// dissipativity checks.
  double energy_offset = 0.0;
  /// Contact branches are the ones a support-deleting proposal drops.
  bool contact = false;
  /// False when J - R = 0 makes xi unobservable (e.g. a clamped stick mode).
  bool identifiable = true;
};

/// Mode switch from `from` to `to`; fires when value(z, a) < 0.
struct Guard {
  std::string name;
  int from = 0;
  int to = 0;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> value;
  /// Impact resets also snap the guard coordinate onto the surface, so
  /// interpolation error in the crossing cannot leak energy into the new mode.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> reset;
  /// Width of the logistic switch probability used by filters, in guard units.
  double softness = 1e-2;
};

/// A physical constant read off a mode's coefficient vector.
struct PhysicalConstant {
  std::string name;
  int mode = 0;
  double truth = 0.0;
  std::function<double(const Eigen::VectorXd&)> read;
};

/// Hidden momentum coordinate reconstructed from a position derivative.
struct VelocityMap {
  int position = 0;
  int momentum = 0;
  double mass = 1.0;
};

using ActionGenerator = std::function<Eigen::MatrixXd(int steps, double dt, Rng& rng)>;

struct HybridSystemSpec {
  std::string name;
  int version = 1;
  int state_dim = 0;
  int input_dim = 0;
  double dt = 1e-3;
  int default_steps = 2000;
  Library library;
  std::vector<ModeLaw> modes;
  std::vector<Guard> guards;
  std::vector<PhysicalConstant> constants;
  std::map<std::string, double> parameters;
  std::vector<VelocityMap> velocity_maps;
  std::vector<int> position_coords;
  Eigen::VectorXd z0;
  int s0 = 0;
  ActionGenerator actions;

  int mode_count() const { return static_cast<int>(modes.size()); }
  const ModeLaw& mode(int s) const { return modes.at(static_cast<std::size_t>(s)); }

  Eigen::VectorXd vector_field(int s, const Eigen::VectorXd& z, const Eigen::VectorXd& a) const;
  double hamiltonian(int s, const Eigen::VectorXd& z) const;
  double energy(int s, const Eigen::VectorXd& z) const;
  Eigen::VectorXi support(int s) const;
  int max_sparsity() const;
  Eigen::MatrixXd sample_actions(int steps, std::uint64_t seed) const;
};

enum class SystemName { kPuck, kBlock, kPendulum, kPusher };

std::optional<SystemName> parse_system_name(std::string_view name);
std::string_view to_string(SystemName name);
const std::vector<SystemName>& all_systems();

HybridSystemSpec make_system(SystemName name);
/// Two-mode bouncing puck tuned for filtering audits (observation scale,
/// contact hazard) rather than for law recovery.
HybridSystemSpec make_contact_toy();
/// Resolves any of the four named systems or "contact_toy".
HybridSystemSpec make_system_by_name(std::string_view name);

/// Copy of `spec` with every diffusion matrix multiplied by `scale`.
HybridSystemSpec with_diffusion_scale(HybridSystemSpec spec, double scale);

struct SwitchEvent {
  int step = 0;
  int from = 0;
  int to = 0;
  double energy_before = 0.0;
  double energy_after = 0.0;
};

/// Modes are stored 0-based; CSV export writes them 1-based.
struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd states;       // T x d
  std::vector<int> modes;       // T
  Eigen::MatrixXd actions;      // T x q (last row repeats the final action)
  Eigen::MatrixXd derivatives;  // T x d, noise-free drift
  std::vector<SwitchEvent> switches;

  int length() const { return static_cast<int>(modes.size()); }
};

/// Euler-Maruyama with sign-change guard detection and one bisection
/// refinement of the crossing time. Throws NON_FINITE_STATE on blow-up.
Trajectory simulate(const HybridSystemSpec& spec, const Eigen::VectorXd& z0, int s0,
                    const Eigen::MatrixXd& actions, int steps, std::uint64_t seed);
/// simulate() with the spec's default initial condition and action generator.
Trajectory simulate_default(const HybridSystemSpec& spec, int steps, std::uint64_t seed);

struct CorruptionConfig {
  double obs_noise_std = 0.0;
  double der_noise_std = 0.0;
  double missing_rate = 0.0;
  double mode_flip_prob = 0.0;
  /// Observed coordinates; empty means all.
  std::vector<int> observed_coords;
};

struct ObservationSequence {
  Eigen::VectorXd times;
  std::vector<int> observed_coords;
  Eigen::MatrixXd values;       // T x r, NaN where unavailable
  std::vector<std::uint8_t> missing;
  std::vector<std::uint8_t> occluded;
  Eigen::MatrixXd derivatives;  // T x d noisy derivative channel, NaN where missing
  std::vector<int> mode_labels;  // evaluation-only, possibly flipped
  double obs_noise_std = 0.0;
  double der_noise_std = 0.0;
  double mode_flip_prob = 0.0;

  int length() const { return static_cast<int>(missing.size()); }
  bool available(int t) const {
    return !missing[static_cast<std::size_t>(t)] && !occluded[static_cast<std::size_t>(t)];
  }
  double unobserved_fraction() const;
};

ObservationSequence corrupt(const Trajectory& traj, const CorruptionConfig& cfg, std::uint64_t seed);
/// Marks an i.i.d. Bernoulli(rate) subset of timesteps fully unobserved, on
/// top of any existing missingness.
ObservationSequence occlude(const ObservationSequence& obs, double rate, std::uint64_t seed);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);
void write_observations_csv(const ObservationSequence& obs, const std::string& path);
/// Structured-text (JSON) manifest: M, d, q, p, k, supports, xi*, guards,
/// constants and parameters.
std::string system_manifest(const HybridSystemSpec& spec);

}  // namespace phmix
