#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace phmix::stats {

double mean(std::span<const double> x);
/// Unbiased (n-1) sample variance; 0 for n < 2.
double sample_variance(std::span<const double> x);
/// Standard error of the mean, sqrt(s^2/n).
double sem(std::span<const double> x);
double median(std::span<const double> x);
/// Linear-interpolation quantile (type 7), q in [0,1].
double quantile(std::span<const double> x, double q);

double log_sum_exp(std::span<const double> x);
double log_add_exp(double a, double b);

double normal_log_pdf(double x, double mean, double var);
double normal_cdf(double x);
double normal_quantile(double p);
/// Upper quantile of the chi-square distribution with k degrees of freedom
/// (Wilson-Hilferty), used for one-sided variance tests.
double chi_square_quantile(double p, double k);

/// Gauss-Hermite nodes/weights for the weight exp(-x^2), n points.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite(std::size_t n);

/// Ordinary least-squares slope of y on x.
double ols_slope(std::span<const double> x, std::span<const double> y);

}  // namespace phmix::stats
