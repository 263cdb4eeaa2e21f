#include "phmix/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

std::string_view to_string(ProxyLabel label) {
  switch (label) {
    case ProxyLabel::kFree: return "free";
    case ProxyLabel::kImpact: return "impact";
    case ProxyLabel::kStickSlip: return "stickslip";
  }
  return "unknown";
}

double mad(std::span<const double> x) {
  require(!x.empty(), ErrorCode::kEmptyInput, "mad: empty series");
  const double med = stats::median(x);
  std::vector<double> dev;
  dev.reserve(x.size());
  for (double v : x) dev.push_back(std::abs(v - med));
  return stats::median(dev);
}

std::vector<double> moving_average(std::span<const double> x, int window) {
  require(window >= 1 && window % 2 == 1, ErrorCode::kInvalidArgument, "moving_average: window must be odd");
  const int n = static_cast<int>(x.size());
  const int half = window / 2;
  std::vector<double> out(x.size());
  for (int t = 0; t < n; ++t) {
    const int lo = std::max(0, t - half), hi = std::min(n - 1, t + half);
    double sum = 0.0;
    for (int k = lo; k <= hi; ++k) sum += x[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(t)] = sum / (hi - lo + 1);
  }
  return out;
}

namespace {

std::vector<double> normalized_differences(const Eigen::MatrixXd& series, double eps) {
  const auto T = series.rows();
  std::vector<double> diff(static_cast<std::size_t>(T), 0.0);
  for (Eigen::Index t = 1; t < T; ++t) diff[static_cast<std::size_t>(t)] = (series.row(t) - series.row(t - 1)).norm();
  diff[0] = diff[1];
  const double scale = mad(diff) + eps;
  for (auto& d : diff) d = scale > 0.0 ? d / scale : 0.0;
  return diff;
}

}  // namespace

std::vector<double> kinematic_score(const Eigen::MatrixXd& object, const Eigen::MatrixXd& effector,
                                    const Eigen::MatrixXd& actions, const ProxyConfig& cfg) {
  const auto T = object.rows();
  require(T >= 2, ErrorCode::kInvalidArgument, "kinematic_score: need at least two steps");
  require((effector.cols() == 0 || effector.rows() == T) && (actions.cols() == 0 || actions.rows() == T),
          ErrorCode::kDimensionMismatch, "kinematic_score: series are not aligned");
  require(cfg.weight_object >= 0 && cfg.weight_effector >= 0 && cfg.weight_action >= 0 && cfg.eps >= 0,
          ErrorCode::kInvalidArgument, "kinematic_score: weights and eps must be nonnegative");
  std::vector<double> score(static_cast<std::size_t>(T), 0.0);
  const auto add = [&](const Eigen::MatrixXd& block, double weight) {
    if (block.cols() == 0 || weight == 0.0) return;
    const auto r = normalized_differences(block, cfg.eps);
    for (std::size_t t = 0; t < r.size(); ++t) score[t] += weight * r[t];
  };
  add(object, cfg.weight_object);
  add(effector, cfg.weight_effector);
  add(actions, cfg.weight_action);
  return moving_average(score, cfg.window);
}

std::vector<int> threshold_labels(std::span<const double> score, const ProxyConfig& cfg) {
  require(cfg.theta_free < cfg.theta_impact, ErrorCode::kInvalidArgument, "proxy thresholds must be increasing");
  std::vector<int> labels;
  labels.reserve(score.size());
  for (double c : score) {
    if (c < cfg.theta_free) {
      labels.push_back(static_cast<int>(ProxyLabel::kFree));
    } else if (c >= cfg.theta_impact) {
      labels.push_back(static_cast<int>(ProxyLabel::kImpact));
    } else {
      labels.push_back(static_cast<int>(ProxyLabel::kStickSlip));
    }
  }
  return labels;
}

std::vector<int> denoise_runs(std::vector<int> labels, int min_run) {
  require(min_run >= 1, ErrorCode::kInvalidArgument, "denoise_runs: min_run must be >= 1");
  struct Run {
    int label;
    int length;
  };
  std::vector<Run> runs;
  for (int v : labels) {
    if (!runs.empty() && runs.back().label == v) {
      ++runs.back().length;
    } else {
      runs.push_back({v, 1});
    }
  }
  while (runs.size() > 1) {
    std::size_t target = runs.size();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i].length < min_run && (target == runs.size() || runs[i].length < runs[target].length)) target = i;
    }
    if (target == runs.size()) break;
    const bool has_left = target > 0, has_right = target + 1 < runs.size();
    const bool go_left = has_left && (!has_right || runs[target - 1].length >= runs[target + 1].length);
    const std::size_t into = go_left ? target - 1 : target + 1;
    runs[into].length += runs[target].length;
    runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(target));
    // The absorbing run may now touch a run with the same label.
    std::vector<Run> merged;
    for (const auto& r : runs) {
      if (!merged.empty() && merged.back().label == r.label) {
        merged.back().length += r.length;
      } else {
        merged.push_back(r);
      }
    }
    runs = std::move(merged);
  }
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& r : runs) out.insert(out.end(), static_cast<std::size_t>(r.length), r.label);
  return out;
}

std::vector<ProxyLabel> score_to_labels(std::span<const double> score, const ProxyConfig& cfg) {
  const auto raw = denoise_runs(threshold_labels(score, cfg), cfg.min_run);
  std::vector<ProxyLabel> out;
  out.reserve(raw.size());
  for (int v : raw) out.push_back(static_cast<ProxyLabel>(v));
  return out;
}

std::pair<double, double> select_thresholds(std::span<const double> validation_scores, double free_quantile,
                                            double impact_quantile) {
  require(!validation_scores.empty(), ErrorCode::kEmptyInput, "select_thresholds: no validation scores");
  require(free_quantile < impact_quantile, ErrorCode::kInvalidArgument, "select_thresholds: quantiles out of order");
  double lo = stats::quantile(validation_scores, free_quantile);
  double hi = stats::quantile(validation_scores, impact_quantile);
  if (!(lo < hi)) hi = std::nextafter(lo, std::numeric_limits<double>::infinity());
  return {lo, hi};
}

void write_labels_csv(const std::string& path, std::span<const double> score, const std::vector<ProxyLabel>& labels) {
  require(score.size() == labels.size(), ErrorCode::kDimensionMismatch, "write_labels_csv: lengths differ");
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.precision(12);
  out << "t,score,label\n";
  for (std::size_t t = 0; t < score.size(); ++t) out << t << ',' << score[t] << ',' << to_string(labels[t]) << '\n';
  require(out.good(), ErrorCode::kIo, "write failed for '" + path + "'");
}

}  // namespace phmix
