#include "phmix/modes.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

using Eigen::VectorXd;

ModeEvidence accumulate_evidence(const Eigen::MatrixXd& log_liks, const VectorXd& priors) {
  const auto m = priors.size();
  require(m >= 1, ErrorCode::kEmptyInput, "accumulate_evidence: no modes");
  require(log_liks.rows() == 0 || log_liks.cols() == m, ErrorCode::kDimensionMismatch,
          "accumulate_evidence: log-likelihood columns must match the priors");
  require((priors.array() > 0.0).all(), ErrorCode::kInvalidArgument, "accumulate_evidence: priors must be positive");
  require(log_liks.allFinite(), ErrorCode::kInvalidArgument, "accumulate_evidence: non-finite log-likelihood");
  ModeEvidence ev;
  ev.mode_count = static_cast<int>(m);
  ev.length = static_cast<int>(log_liks.rows());
  ev.log_prior = (priors / priors.sum()).array().log();
  ev.log_likelihood = log_liks.rows() > 0 ? VectorXd(log_liks.colwise().sum().transpose()) : VectorXd::Zero(m);
  const VectorXd joint = ev.log_prior + ev.log_likelihood;
  const double norm = stats::log_sum_exp(std::span<const double>(joint.data(), static_cast<std::size_t>(m)));
  ev.posterior = (joint.array() - norm).exp();
  return ev;
}

VectorXd log_ratios(const ModeEvidence& evidence, int reference) {
  require(reference >= 0 && reference < evidence.mode_count, ErrorCode::kInvalidArgument,
          "log_ratios: reference mode out of range");
  return evidence.log_likelihood.array() - evidence.log_likelihood(reference);
}

ConcentrationBound concentration_bound(const std::vector<WrongModeTerms>& wrong, int length, double delta) {
  require(!wrong.empty(), ErrorCode::kEmptyInput, "concentration_bound: need at least one wrong mode");
  require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument, "concentration_bound: delta must lie in (0,1)");
  require(length >= 1, ErrorCode::kInvalidArgument, "concentration_bound: segment length must be positive");
  const double wrong_count = static_cast<double>(wrong.size());
  const double log_term = std::log(wrong_count / delta);
  std::vector<double> terms;
  double b_max = -1e300, delta_min = 1e300, var_max = 0.0;
  for (const auto& w : wrong) {
    require(w.variance >= 0.0, ErrorCode::kInvalidArgument, "concentration_bound: negative variance proxy");
    const double u = std::sqrt(2.0 * w.variance * log_term);
    terms.push_back(w.log_prior_odds - w.separation + u);
    b_max = std::max(b_max, w.log_prior_odds);
    delta_min = std::min(delta_min, w.separation / length);
    var_max = std::max(var_max, w.variance / length);
  }
  ConcentrationBound out;
  const double log_a = stats::log_sum_exp(terms);
  out.a_sharp = std::exp(log_a);
  // A / (1 + A) written to stay finite when A overflows.
  out.sharp_bound = log_a > 0.0 ? 1.0 / (1.0 + std::exp(-log_a)) : out.a_sharp / (1.0 + out.a_sharp);
  out.simple_bound = wrong_count * std::exp(b_max - length * delta_min +
                                            std::sqrt(var_max) * std::sqrt(2.0 * length * log_term));
  return out;
}

double variational_transfer(double sharp_bound, double eps_q) {
  require(eps_q >= 0.0, ErrorCode::kInvalidArgument, "variational_transfer: eps_q must be nonnegative");
  return std::min(1.0, sharp_bound + std::sqrt(eps_q / 2.0));
}

int argmax_first(const VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

DecodedModes decode_modes(const std::vector<VectorXd>& marginals) {
  DecodedModes out;
  if (marginals.empty()) return out;
  const auto m = marginals.front().size();
  out.posterior.resize(static_cast<Eigen::Index>(marginals.size()), m);
  for (std::size_t t = 0; t < marginals.size(); ++t) {
    require(marginals[t].size() == m, ErrorCode::kDimensionMismatch, "decode_modes: ragged marginals");
    out.posterior.row(static_cast<Eigen::Index>(t)) = marginals[t].transpose();
    out.labels.push_back(argmax_first(marginals[t]));
  }
  return out;
}

}  // namespace phmix
