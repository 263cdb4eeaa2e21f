#include "phmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  const std::size_t cols = rows ? weight[0].size() : 0;
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  double top = 0.0;
  for (const auto& r : weight) {
    for (double v : r) top = std::max(top, v);
  }
  // Square cost matrix (1-based) for the shortest augmenting path method.
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, top));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) cost[i + 1][j + 1] = top - weight[i][j];
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) match[p[j] - 1] = static_cast<int>(j - 1);
  }
  return match;
}

namespace {

std::vector<int> distinct(std::span<const int> x) {
  std::vector<int> v(x.begin(), x.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

int index_in(const std::vector<int>& sorted, int value) {
  return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), value) - sorted.begin());
}

void check_lengths(std::span<const int> a, std::span<const int> b, const char* what) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch, std::string(what) + ": label sequences differ in length");
}

}  // namespace

ModeF1 mode_f1(std::span<const int> pred, std::span<const int> truth) {
  check_lengths(pred, truth, "mode_f1");
  ModeF1 out;
  if (truth.empty()) return out;
  const auto t_labels = distinct(truth), p_labels = distinct(pred);
  std::vector<std::vector<double>> confusion(t_labels.size(), std::vector<double>(p_labels.size(), 0.0));
  std::vector<double> t_count(t_labels.size(), 0.0), p_count(p_labels.size(), 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int a = index_in(t_labels, truth[i]), b = index_in(p_labels, pred[i]);
    confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += 1.0;
    t_count[static_cast<std::size_t>(a)] += 1.0;
    p_count[static_cast<std::size_t>(b)] += 1.0;
  }
  // Matched counts dominate; among count-optimal matchings the macro F1 terms
  // (each below 1, at most min(rows, cols) of them) break ties.
  const double tie_scale = 1.0 / static_cast<double>(std::min(t_labels.size(), p_labels.size()) + 1);
  std::vector<std::vector<double>> score = confusion;
  for (std::size_t a = 0; a < t_labels.size(); ++a) {
    for (std::size_t b = 0; b < p_labels.size(); ++b) {
      score[a][b] += tie_scale * 2.0 * confusion[a][b] / (t_count[a] + p_count[b]);
    }
  }
  const auto match = max_weight_assignment(score);
  double total = 0.0;
  for (std::size_t a = 0; a < t_labels.size(); ++a) {
    const int b = match[a];
    if (b < 0) continue;
    out.mapping[p_labels[static_cast<std::size_t>(b)]] = t_labels[a];
    const double tp = confusion[a][static_cast<std::size_t>(b)];
    total += 2.0 * tp / (t_count[a] + p_count[static_cast<std::size_t>(b)]);
  }
  out.f1 = total / static_cast<double>(t_labels.size());
  return out;
}

double adjusted_rand_index(std::span<const int> pred, std::span<const int> truth) {
  check_lengths(pred, truth, "adjusted_rand_index");
  const auto n = static_cast<double>(truth.size());
  if (truth.size() < 2) return 1.0;
  const auto t_labels = distinct(truth), p_labels = distinct(pred);
  std::vector<std::vector<double>> table(t_labels.size(), std::vector<double>(p_labels.size(), 0.0));
  std::vector<double> a(t_labels.size(), 0.0), b(p_labels.size(), 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto x = static_cast<std::size_t>(index_in(t_labels, truth[i]));
    const auto y = static_cast<std::size_t>(index_in(p_labels, pred[i]));
    table[x][y] += 1.0;
    a[x] += 1.0;
    b[y] += 1.0;
  }
  const auto pairs = [](double k) { return k * (k - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& row : table) {
    for (double v : row) index += pairs(v);
  }
  for (double v : a) sum_a += pairs(v);
  for (double v : b) sum_b += pairs(v);
  const double expected = sum_a * sum_b / pairs(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) {
    // Both partitions are trivial (all-in-one or all singletons).
    return sum_a == sum_b && index == sum_a ? 1.0 : 0.0;
  }
  return (index - expected) / (max_index - expected);
}

std::vector<int> change_points(std::span<const int> labels) {
  std::vector<int> cps;
  for (std::size_t t = 1; t < labels.size(); ++t) {
    if (labels[t] != labels[t - 1]) cps.push_back(static_cast<int>(t));
  }
  return cps;
}

double changepoint_f1(std::span<const int> pred, std::span<const int> truth, int tol) {
  check_lengths(pred, truth, "changepoint_f1");
  require(tol >= 0, ErrorCode::kInvalidArgument, "changepoint_f1: tolerance must be nonnegative");
  const auto p = change_points(pred), t = change_points(truth);
  if (p.empty() && t.empty()) return 1.0;
  if (p.empty() || t.empty()) return 0.0;
  std::vector<char> used(p.size(), 0);
  int matched = 0;
  for (int c : t) {
    int best = -1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (used[j] || std::abs(p[j] - c) > tol) continue;
      if (best < 0 || std::abs(p[j] - c) < std::abs(p[static_cast<std::size_t>(best)] - c)) best = static_cast<int>(j);
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = 1;
      ++matched;
    }
  }
  return 2.0 * matched / static_cast<double>(p.size() + t.size());
}

double segment_purity(std::span<const int> pred, std::span<const int> truth) {
  check_lengths(pred, truth, "segment_purity");
  if (truth.empty()) return 1.0;
  double total = 0.0;
  std::size_t start = 0;
  while (start < pred.size()) {
    std::size_t end = start;
    while (end < pred.size() && pred[end] == pred[start]) ++end;
    std::map<int, int> counts;
    int best = 0;
    for (std::size_t i = start; i < end; ++i) best = std::max(best, ++counts[truth[i]]);
    total += best;
    start = end;
  }
  return total / static_cast<double>(truth.size());
}

SegmentationReport segmentation_report(std::span<const int> pred, std::span<const int> truth, int tol) {
  SegmentationReport r;
  const auto f1 = mode_f1(pred, truth);
  r.mode_f1 = f1.f1;
  r.mapping = f1.mapping;
  r.ari = adjusted_rand_index(pred, truth);
  r.changepoint_f1 = changepoint_f1(pred, truth, tol);
  r.segment_purity = segment_purity(pred, truth);
  return r;
}

double gaussian_nll(std::span<const double> means, std::span<const double> vars, std::span<const double> values) {
  require(!values.empty(), ErrorCode::kEmptyInput, "gaussian_nll: no values");
  require(means.size() == values.size() && vars.size() == values.size(), ErrorCode::kDimensionMismatch,
          "gaussian_nll: lengths differ");
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) total -= stats::normal_log_pdf(values[i], means[i], vars[i]);
  return total / static_cast<double>(values.size());
}

double coverage90(std::span<const double> means, std::span<const double> vars, std::span<const double> values) {
  require(!values.empty(), ErrorCode::kEmptyInput, "coverage90: no values");
  require(means.size() == values.size() && vars.size() == values.size(), ErrorCode::kDimensionMismatch,
          "coverage90: lengths differ");
  const double z = stats::normal_quantile(0.95);
  int inside = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    inside += std::abs(values[i] - means[i]) <= z * std::sqrt(vars[i]) ? 1 : 0;
  }
  return inside / static_cast<double>(values.size());
}

double expected_calibration_error(std::span<const double> confidence, std::span<const int> correct, int bins) {
  require(!confidence.empty(), ErrorCode::kEmptyInput, "expected_calibration_error: no predictions");
  require(confidence.size() == correct.size(), ErrorCode::kDimensionMismatch,
          "expected_calibration_error: lengths differ");
  require(bins >= 1, ErrorCode::kInvalidArgument, "expected_calibration_error: need at least one bin");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), acc_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<int> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = std::clamp(confidence[i], 0.0, 1.0);
    const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(c * bins)));
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    ece += std::abs(acc_sum[b] - conf_sum[b]) / static_cast<double>(confidence.size());
  }
  return ece;
}

CalibrationReport calibration(std::span<const double> means, std::span<const double> vars,
                              std::span<const double> values, std::span<const double> confidence,
                              std::span<const int> correct) {
  require(!values.empty() && !confidence.empty(), ErrorCode::kEmptyInput, "calibration: empty input");
  CalibrationReport r;
  r.nll = gaussian_nll(means, vars, values);
  r.cov90 = coverage90(means, vars, values);
  r.ece = expected_calibration_error(confidence, correct);
  return r;
}

}  // namespace phmix
