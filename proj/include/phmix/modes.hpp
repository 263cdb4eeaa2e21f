#pragma once

#include <vector>

#include <Eigen/Dense>

namespace phmix {

/// Clamped-mode evidence over one constant-mode segment.
struct ModeEvidence {
  int mode_count = 0;
  int length = 0;
  Eigen::VectorXd log_prior;
  Eigen::VectorXd log_likelihood;  // summed over the segment, per mode
  Eigen::VectorXd posterior;
};

/// `log_liks` is L x M (row = step, column = mode); priors must be positive.
ModeEvidence accumulate_evidence(const Eigen::MatrixXd& log_liks, const Eigen::VectorXd& priors);

/// Accumulated log-ratio of each mode against `reference`, R_s = sum_t (l_{t,s} - l_{t,ref}).
Eigen::VectorXd log_ratios(const ModeEvidence& evidence, int reference);

/// Bound inputs for one wrong mode s: separation Gamma_{L,s}, variance proxy
/// V_s and prior log-odds B_s = log(pi_s / pi_m).
struct WrongModeTerms {
  double separation = 0.0;
  double variance = 0.0;
  double log_prior_odds = 0.0;
};

struct ConcentrationBound {
  double a_sharp = 0.0;
  double sharp_bound = 0.0;
  /// (M-1) exp(B - L Delta + sigma sqrt(2 L log((M-1)/delta))) with B the
  /// largest prior log-odds, Delta the smallest per-step separation and
  /// sigma^2 the largest per-step variance proxy.
  double simple_bound = 0.0;
};

/// `wrong` holds one entry per wrong mode (M - 1 entries); `length` is L.
ConcentrationBound concentration_bound(const std::vector<WrongModeTerms>& wrong, int length, double delta);

/// sharp_bound + sqrt(eps_q / 2), clipped to 1.
double variational_transfer(double sharp_bound, double eps_q);

struct DecodedModes {
  std::vector<int> labels;    // 0-based
  Eigen::MatrixXd posterior;  // T x M
};

/// Per-step MAP of the weighted mode marginal; ties go to the smallest index.
DecodedModes decode_modes(const std::vector<Eigen::VectorXd>& marginals);

/// Index of the largest entry, first one on ties.
int argmax_first(const Eigen::VectorXd& v);

}  // namespace phmix
