#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "phmix/systems.hpp"

namespace phmix {

struct CertificateInputs {
  double r = 0.0;            // dissipation floor, R >= r I
  double mu = 0.0;           // PL constant, |grad H|^2 >= 2 mu U
  double input_gain = 0.0;   // ||G|| bound
  double action_bound = 0.0;
  double hessian_bound = 0.0;
  double diffusion_trace = 0.0;  // tr(Sigma) bound
  double horizon = 0.0;
  double initial_energy = 0.0;
  double kl_bound = 0.0;
  double cost_bound = 0.0;
  double optimizer_gap = 0.0;
  double delta = 0.1;
  double beta = 0.1;
  int rollouts = 1;
  int evaluated_actions = 1;
  double energy_level = 1.0;
};

struct EnergyBound {
  double alpha = 0.0;
  double c_e = 0.0;
  double bound = 0.0;
  double markov_tail = 1.0;
};

/// alpha = r mu, C_E = g^2 A^2 / (2r) + L_H nu^2 / 2,
/// bound = e^{-alpha T} U0 + (1 - e^{-alpha T}) C_E / alpha, tail = min(1, bound / B).
EnergyBound energy_bound(const CertificateInputs& in);

struct PinskerTransfer {
  double eps_tv = 0.0;
  double subopt_bound = 0.0;
  /// delta - eps_tv; negative means the chance constraint cannot be certified.
  double chance_budget = 0.0;
};

PinskerTransfer pinsker_transfer(double kl_bound, double cost_bound, double optimizer_gap, double delta);

/// sqrt(log(L / beta) / (2 n)).
double mc_margin(int rollouts, int evaluated_actions, double beta);

/// Single-mode linear system with H = z^T Q z / 2 over (q, p).
HybridSystemSpec linear_ph_system(const std::string& name, const Eigen::Matrix2d& Q, const Eigen::Matrix2d& J,
                                  const Eigen::Matrix2d& R, const Eigen::Matrix2d& Sigma, double dt,
                                  const Eigen::Vector2d& z0);

/// The three linear systems used by the certificate audits.
std::vector<HybridSystemSpec> linear_ph_benchmarks();

/// Closed-form stationary mean of H for a zero-input linear system, from the
/// Lyapunov equation A P + P A^T + Sigma = 0 with A = (J - R) Q.
double stationary_energy(const Eigen::Matrix2d& Q, const Eigen::Matrix2d& J, const Eigen::Matrix2d& R,
                         const Eigen::Matrix2d& Sigma);

struct AssumptionReport {
  double r = 0.0;
  double mu = 0.0;
  double hessian_bound = 0.0;
  double input_gain = 0.0;
  double action_bound = 0.0;
  double diffusion_trace = 0.0;
  bool met = false;
  std::string reason;
};

/// Numerical checks on the sampled states of the batch: r from the smallest
/// eigenvalue of sym(R) over modes, L_H from finite-difference Hessians, and
/// mu = 0.9 min |grad H|^2 / (2 U), on an evenly strided subsample of at most
/// 20000 states.
AssumptionReport check_assumptions(const HybridSystemSpec& spec, const std::vector<Trajectory>& batch);

struct EnergyDiagnostic {
  AssumptionReport assumptions;
  EnergyBound bound;
  double horizon = 0.0;
  double initial_energy = 0.0;
  double empirical_mean = 0.0;
  double standard_error = 0.0;
  /// Assumptions met and empirical mean <= bound + 4 SE.
  bool pass = false;
};

/// Compares the batch mean of U_{s_T}(z_T) with the energy bound. With
/// `enforce`, unmet assumptions throw ASSUMPTION_UNMET and a failed comparison
/// throws BOUND_VIOLATION.
EnergyDiagnostic energy_drift_diagnostic(const HybridSystemSpec& spec, const std::vector<Trajectory>& batch,
                                         bool enforce = false);

}  // namespace phmix
