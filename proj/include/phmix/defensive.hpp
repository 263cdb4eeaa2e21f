#pragma once

#include <span>
#include <vector>

#include "phmix/rng.hpp"

namespace phmix {

struct LambdaDecision {
  double lambda = 1.0;
  bool certified = false;
  double lambda_min = 0.0;
};

/// Certified budget rule: lambda_min = rho_bar / (1 + N tau^2); use it when it
/// is at most 1, otherwise fall back to lambda_fb. Throws INVALID_CERT when
/// rho_bar < 1.
LambdaDecision select_lambda(double rho_bar, int n, double tau, double lambda_fb);

/// log((1 - lambda) q + lambda p) from log q and log p.
double defensive_log_density(double log_q, double log_p, double lambda);

struct TheoryBounds {
  double chi2_bound = 0.0;
  double rel_var_bound = 0.0;
  double ess_floor = 1.0;
};

TheoryBounds theory_bounds(double rho, double lambda, int n);

/// Draws n samples, each from `carrier` with probability lambda and from
/// `proposal` otherwise. The component indicator is not returned.
template <class DrawProposal, class DrawCarrier>
auto sample_defensive(DrawProposal&& proposal, DrawCarrier&& carrier, double lambda, int n, Rng& rng) {
  std::vector<decltype(proposal(rng))> out;
  out.reserve(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    if (unit(rng) < lambda) {
      out.push_back(carrier(rng));
    } else {
      out.push_back(proposal(rng));
    }
  }
  return out;
}

struct WeightSummary {
  /// log W_i = log g + log p - log q_lambda.
  std::vector<double> log_weights;
  /// Normalized weights after folding in any carried weights.
  std::vector<double> normalized;
  double log_zhat = 0.0;
  double zhat = 0.0;
  double ess_over_n = 1.0;
  /// Var(W) / mean(W)^2 with population moments.
  double rel_weight_var = 0.0;
};

/// Importance weights against the realized mixture. `carried` holds the
/// normalized weights inherited from the previous step (empty means uniform);
/// Zhat is their weighted mean of W. Throws ALL_ZERO_WEIGHTS when every W is 0.
WeightSummary one_step_weights(std::span<const double> log_g, std::span<const double> log_p,
                               std::span<const double> log_q, double lambda,
                               std::span<const double> carried = {});

/// Systematic resampling; returns the ancestor index of each offspring.
std::vector<int> systematic_resample(std::span<const double> normalized, Rng& rng);

}  // namespace phmix
