#pragma once

#include <map>
#include <span>
#include <vector>

namespace phmix {

/// Assignment maximizing total weight on a (possibly rectangular) matrix given
/// row-major; returns the matched column of each row, -1 when unmatched.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight);

struct ModeF1 {
  double f1 = 0.0;
  /// Predicted label -> matched true label.
  std::map<int, int> mapping;
};

/// Hungarian matching on the confusion matrix (ties between count-optimal
/// matchings go to the higher F1), then F1 macro-averaged over the true classes.
ModeF1 mode_f1(std::span<const int> pred, std::span<const int> truth);

double adjusted_rand_index(std::span<const int> pred, std::span<const int> truth);

/// Indices t with labels[t] != labels[t-1].
std::vector<int> change_points(std::span<const int> labels);

/// Greedy one-to-one matching of change points within +-tol steps.
double changepoint_f1(std::span<const int> pred, std::span<const int> truth, int tol = 2);

/// Duration-weighted majority fraction of true labels inside each predicted run.
double segment_purity(std::span<const int> pred, std::span<const int> truth);

struct SegmentationReport {
  double mode_f1 = 0.0;
  double ari = 0.0;
  double changepoint_f1 = 0.0;
  double segment_purity = 0.0;
  std::map<int, int> mapping;
};

SegmentationReport segmentation_report(std::span<const int> pred, std::span<const int> truth, int tol = 2);

struct CalibrationReport {
  double nll = 0.0;
  double ece = 0.0;
  double cov90 = 0.0;
};

/// Mean negative Gaussian log-density over all entries.
double gaussian_nll(std::span<const double> means, std::span<const double> vars, std::span<const double> values);
/// Fraction of values inside the central 90% Gaussian interval.
double coverage90(std::span<const double> means, std::span<const double> vars, std::span<const double> values);
/// Expected calibration error with equal-width confidence bins.
double expected_calibration_error(std::span<const double> confidence, std::span<const int> correct, int bins = 10);

/// Throws EMPTY_INPUT when either input block is empty.
CalibrationReport calibration(std::span<const double> means, std::span<const double> vars,
                              std::span<const double> values, std::span<const double> confidence,
                              std::span<const int> correct);

}  // namespace phmix
