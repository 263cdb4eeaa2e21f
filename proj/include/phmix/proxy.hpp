#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace phmix {

enum class ProxyLabel { kFree = 0, kImpact = 1, kStickSlip = 2 };

std::string_view to_string(ProxyLabel label);

struct ProxyConfig {
  double weight_object = 1.0;
  double weight_effector = 1.0;
  double weight_action = 0.5;
  int window = 5;
  double theta_free = 0.0;    // free if score < theta_free
  double theta_impact = 1.0;  // impact if score >= theta_impact
  int min_run = 3;
  double eps = 1e-9;
  double free_quantile = 0.6;
  double impact_quantile = 0.9;
};

/// Median absolute deviation from the median.
double mad(std::span<const double> x);

/// Centered moving average; the window shrinks at the ends.
std::vector<double> moving_average(std::span<const double> x, int window);

/// Smoothed kinematic score over T steps from aligned object positions,
/// effector positions and actions (any block may have zero columns). Each
/// term is the step-to-step difference norm over its MAD plus eps; step 0
/// reuses step 1's difference.
std::vector<double> kinematic_score(const Eigen::MatrixXd& object, const Eigen::MatrixXd& effector,
                                    const Eigen::MatrixXd& actions, const ProxyConfig& cfg);

/// Thresholds without denoising.
std::vector<int> threshold_labels(std::span<const double> score, const ProxyConfig& cfg);

/// Absorbs every run shorter than min_run into a neighbouring run, shortest
/// runs first (leftmost on ties). The neighbour with the longer run wins;
/// equal lengths go left.
std::vector<int> denoise_runs(std::vector<int> labels, int min_run);

std::vector<ProxyLabel> score_to_labels(std::span<const double> score, const ProxyConfig& cfg);

/// (theta_free, theta_impact) as quantiles of pooled validation scores.
std::pair<double, double> select_thresholds(std::span<const double> validation_scores, double free_quantile,
                                            double impact_quantile);

void write_labels_csv(const std::string& path, std::span<const double> score, const std::vector<ProxyLabel>& labels);

}  // namespace phmix
