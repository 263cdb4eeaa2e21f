#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "phmix/defensive.hpp"
#include "phmix/rng.hpp"
#include "phmix/systems.hpp"

namespace phmix {

struct HybridParticle {
  int mode = 0;
  Eigen::VectorXd z;
};

/// One mode branch of a one-step law: discrete mass and a diagonal Gaussian
/// over the next continuous state.
struct Branch {
  int mode = 0;
  double log_mass = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

struct TransitionConfig {
  /// Mass mixed uniformly into every row of the mode kernel.
  double mode_floor = 1e-4;
  /// Standard deviation added to every coordinate of the continuous step.
  double process_floor = 1e-3;
};

/// The model's one-step law from a particle (the carrier). Guards switch
/// softly through a logistic in the guard value at the Euler-predicted state.
class HybridTransition {
 public:
  HybridTransition(const HybridSystemSpec& spec, TransitionConfig cfg);

  /// One branch per mode, in mode order.
  std::vector<Branch> branches(const HybridParticle& x, const Eigen::VectorXd& a) const;
  const HybridSystemSpec& spec() const { return spec_; }

 private:
  HybridSystemSpec spec_;
  TransitionConfig cfg_;
  std::vector<Eigen::VectorXd> diffusion_;
};

struct ProposalConfig {
  /// Fraction of proposal mass deleted from contact branches (1 removes them).
  double contact_dropout = 0.0;
  /// The proposal treats the observation variance as this multiple of the true one.
  double obs_variance_scale = 1.0;
  bool use_observation = true;
};

/// Base proposal built from carrier branches: contact dropout on the mode
/// masses and a precision-weighted pull of the mean toward observed coordinates.
std::vector<Branch> proposal_branches(const std::vector<Branch>& carrier, const HybridSystemSpec& spec,
                                      const ProposalConfig& cfg, const std::vector<int>& observed_coords,
                                      const Eigen::VectorXd* observation, double obs_var);

/// Log density of x under a branch set; -inf when its mode has no mass.
double branches_log_density(const std::vector<Branch>& branches, const HybridParticle& x);
HybridParticle sample_branches(const std::vector<Branch>& branches, Rng& rng);

enum class LambdaPolicy { kCertified, kFixed };

struct DefensiveConfig {
  int particles = 200;
  double tau = 0.3;
  double lambda_fb = 1.0;
  LambdaPolicy policy = LambdaPolicy::kCertified;
  /// Used by the fixed policy; 0 gives the unprotected baseline.
  double fixed_lambda = 0.5;
  double ess_trigger = 0.5;
  double certificate_inflation = 1.05;
  int quadrature_nodes = 8;
  /// Observation noise the filter assumes.
  double obs_noise_std = 0.05;
  TransitionConfig transition;
  ProposalConfig proposal;
};

struct StepDiagnostics {
  int t = 0;
  bool observed = false;
  double lambda = 1.0;
  bool certified = false;
  double lambda_min = 0.0;
  double rho_bar = 1.0;
  double ess_over_n = 1.0;
  double rel_weight_var = 0.0;
  double zhat = 1.0;
  double log_zhat = 0.0;
  bool resampled = false;
  /// Carrier predictive over the observed coordinates, including observation
  /// noise; filled on observed steps only.
  Eigen::VectorXd pred_mean;
  Eigen::VectorXd pred_var;
  /// Weighted mode marginal after this step's weighting.
  Eigen::VectorXd mode_posterior;
};

struct ParticleEnsemble {
  std::vector<HybridParticle> particles;
  std::vector<double> weights;  // normalized
  std::vector<StepDiagnostics> history;
};

/// rho = E_P[g^2] / E_P[g]^2 for the Gaussian observation likelihood under the
/// weighted carrier mixture, by adaptive Gauss-Hermite quadrature.
double carrier_second_moment_ratio(const std::vector<std::vector<Branch>>& carrier, std::span<const double> weights,
                                   const std::vector<int>& observed_coords, const Eigen::VectorXd& observation,
                                   double obs_var, int nodes);

class HybridFilter {
 public:
  HybridFilter(const HybridSystemSpec& spec, DefensiveConfig cfg);

  ParticleEnsemble initialize(const Eigen::VectorXd& z0, double init_std, int s0, Rng& rng) const;
  /// One filtering increment: choose lambda before sampling, draw from the
  /// defensive mixture, weight with the realized mixture density, record
  /// diagnostics and resample when the ESS rule fires. `observation` may be
  /// null (missing).
  const StepDiagnostics& step(ParticleEnsemble& ensemble, const Eigen::VectorXd& action,
                              const Eigen::VectorXd* observation, const std::vector<int>& observed_coords,
                              Rng& rng) const;
  /// Filters steps 1..T-1 of `obs`, using actions.row(t-1) to reach step t.
  ParticleEnsemble run(const ObservationSequence& obs, const Eigen::MatrixXd& actions, double init_std,
                       Rng& rng) const;

  const HybridTransition& transition() const { return transition_; }
  const DefensiveConfig& config() const { return cfg_; }

 private:
  HybridTransition transition_;
  DefensiveConfig cfg_;
};

/// Per-step mode marginal sum_i w_i 1{s_i = s}.
Eigen::VectorXd mode_marginal(const ParticleEnsemble& ensemble, int mode_count);

}  // namespace phmix
