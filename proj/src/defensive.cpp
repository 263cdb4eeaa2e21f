#include "phmix/defensive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

LambdaDecision select_lambda(double rho_bar, int n, double tau, double lambda_fb) {
  require(std::isfinite(rho_bar) && rho_bar >= 1.0, ErrorCode::kInvalidCert,
          "certificate " + std::to_string(rho_bar) + " is below 1");
  require(n >= 1 && tau > 0.0, ErrorCode::kInvalidArgument, "select_lambda: need N >= 1 and tau > 0");
  require(lambda_fb > 0.0 && lambda_fb <= 1.0, ErrorCode::kInvalidArgument,
          "select_lambda: fallback lambda must lie in (0,1]");
  LambdaDecision d;
  d.lambda_min = rho_bar / (1.0 + n * tau * tau);
  d.certified = d.lambda_min <= 1.0;
  d.lambda = d.certified ? d.lambda_min : lambda_fb;
  return d;
}

double defensive_log_density(double log_q, double log_p, double lambda) {
  if (lambda >= 1.0) return log_p;
  if (lambda <= 0.0) return log_q;
  if (log_q == log_p) return log_p;
  return stats::log_add_exp(std::log1p(-lambda) + log_q, std::log(lambda) + log_p);
}

TheoryBounds theory_bounds(double rho, double lambda, int n) {
  require(rho >= 1.0, ErrorCode::kInvalidCert, "theory_bounds: rho must be >= 1");
  require(lambda > 0.0 && lambda <= 1.0 && n >= 1, ErrorCode::kInvalidArgument,
          "theory_bounds: need lambda in (0,1] and N >= 1");
  TheoryBounds b;
  b.chi2_bound = rho / lambda - 1.0;
  b.rel_var_bound = b.chi2_bound / n;
  b.ess_floor = lambda / rho;
  return b;
}

WeightSummary one_step_weights(std::span<const double> log_g, std::span<const double> log_p,
                               std::span<const double> log_q, double lambda, std::span<const double> carried) {
  const std::size_t n = log_g.size();
  require(n > 0, ErrorCode::kEmptyInput, "one_step_weights: no samples");
  require(log_p.size() == n && log_q.size() == n && (carried.empty() || carried.size() == n),
          ErrorCode::kDimensionMismatch, "one_step_weights: input lengths differ");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  WeightSummary out;
  out.log_weights.resize(n);
  std::vector<double> combined(n);
  bool any_positive = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double lq = defensive_log_density(log_q[i], log_p[i], lambda);
    double lw = (log_g[i] == kNegInf || log_p[i] == kNegInf) ? kNegInf : log_g[i] + log_p[i] - lq;
    require(!std::isnan(lw), ErrorCode::kAllZeroWeights, "one_step_weights: undefined weight");
    out.log_weights[i] = lw;
    combined[i] = lw + (carried.empty() ? -std::log(static_cast<double>(n)) : std::log(carried[i]));
    any_positive = any_positive || combined[i] > kNegInf;
  }
  require(any_positive, ErrorCode::kAllZeroWeights, "every importance weight is zero");

  out.log_zhat = stats::log_sum_exp(combined);
  out.zhat = std::exp(out.log_zhat);
  out.normalized.resize(n);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.normalized[i] = std::exp(combined[i] - out.log_zhat);
    sum_sq += out.normalized[i] * out.normalized[i];
  }
  out.ess_over_n = 1.0 / (sum_sq * static_cast<double>(n));

  // Relative variance of the raw weights, scaled by their maximum for range.
  const double shift = *std::max_element(out.log_weights.begin(), out.log_weights.end());
  double m1 = 0.0, m2 = 0.0;
  for (double lw : out.log_weights) {
    const double w = std::exp(lw - shift);
    m1 += w;
    m2 += w * w;
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  out.rel_weight_var = std::max(0.0, m2 / (m1 * m1) - 1.0);
  return out;
}

std::vector<int> systematic_resample(std::span<const double> normalized, Rng& rng) {
  const std::size_t n = normalized.size();
  require(n > 0, ErrorCode::kEmptyInput, "systematic_resample: no weights");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u0 = unit(rng);
  std::vector<int> ancestors(n);
  double cumulative = normalized[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double position = (static_cast<double>(k) + u0) / static_cast<double>(n);
    while ((position > cumulative || normalized[j] == 0.0) && j + 1 < n) {
      ++j;
      cumulative += normalized[j];
    }
    ancestors[k] = static_cast<int>(j);
  }
  return ancestors;
}

}  // namespace phmix
