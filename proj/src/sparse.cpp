#include "phmix/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "phmix/error.hpp"
#include "phmix/proxy.hpp"
#include "phmix/rng.hpp"

namespace phmix {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Design plugin_design(const Library& library, const MatrixXd& J, const MatrixXd& R, const MatrixXd& G,
                     const MatrixXd& states, const MatrixXd& derivatives, const MatrixXd& actions) {
  const int d = library.dim();
  const int n = static_cast<int>(states.rows());
  require(J.rows() == d && J.cols() == d && R.rows() == d && R.cols() == d, ErrorCode::kDimensionMismatch,
          "structure matrices must be d x d");
  require(states.cols() == d && derivatives.rows() == n && derivatives.cols() == d,
          ErrorCode::kDimensionMismatch, "states and derivatives must be n x d");
  require(G.rows() == d, ErrorCode::kDimensionMismatch, "G must have d rows");
  const bool driven = G.cols() > 0;
  if (driven) {
    require(actions.rows() == n && actions.cols() == G.cols(), ErrorCode::kDimensionMismatch,
            "actions must be n x q");
  }
  const MatrixXd JR = J - R;
  Design out;
  out.samples = n;
  out.A.resize(static_cast<Eigen::Index>(n) * d, library.size());
  out.b.resize(static_cast<Eigen::Index>(n) * d);
  for (int i = 0; i < n; ++i) {
    const VectorXd z = states.row(i).transpose();
    out.A.middleRows(i * d, d) = JR * library.gradients(z).transpose();
    VectorXd rhs = derivatives.row(i).transpose();
    if (driven) rhs -= G * actions.row(i).transpose();
    out.b.segment(i * d, d) = rhs;
  }
  require(out.A.allFinite() && out.b.allFinite(), ErrorCode::kInvalidArgument, "design has non-finite entries");
  return out;
}

Design stack_designs(std::span<const Design> parts) {
  Eigen::Index rows = 0, cols = -1;
  int samples = 0;
  for (const auto& part : parts) {
    if (cols < 0) cols = part.A.cols();
    require(part.A.cols() == cols, ErrorCode::kDimensionMismatch, "designs have different libraries");
    rows += part.A.rows();
    samples += part.samples;
  }
  Design out;
  out.samples = samples;
  out.A.resize(rows, std::max<Eigen::Index>(cols, 0));
  out.b.resize(rows);
  Eigen::Index at = 0;
  for (const auto& part : parts) {
    out.A.middleRows(at, part.A.rows()) = part.A;
    out.b.segment(at, part.b.size()) = part.b;
    at += part.A.rows();
  }
  return out;
}

double lasso_objective(const MatrixXd& A, const VectorXd& b, const VectorXd& xi, double lambda) {
  const double n = static_cast<double>(A.rows());
  return (b - A * xi).squaredNorm() / (2.0 * n) + lambda * xi.lpNorm<1>();
}

double lasso_kkt_residual(const MatrixXd& A, const VectorXd& b, const VectorXd& xi, double lambda) {
  const VectorXd grad = A.transpose() * (b - A * xi) / static_cast<double>(A.rows());
  double worst = 0.0;
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    const double v = xi(j) != 0.0 ? std::abs(grad(j) - lambda * (xi(j) > 0 ? 1.0 : -1.0))
                                   : std::max(0.0, std::abs(grad(j)) - lambda);
    worst = std::max(worst, v);
  }
  return worst;
}

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

double quadratic_objective(const MatrixXd& gram, const VectorXd& corr, const VectorXd& weight,
                           const VectorXd& beta) {
  return -corr.dot(beta) + 0.5 * beta.dot(gram * beta) + weight.dot(beta.cwiseAbs());
}

int sign_of(double x) { return (x > 0) - (x < 0); }

// Replaces beta by the exact stationary point of its signed support when that
// keeps every sign, removing the tolerance-level error of the iterate.
void solve_signed_support(const MatrixXd& gram, const VectorXd& corr, const VectorXd& weight,
                          const std::vector<int>& theta, VectorXd& beta) {
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (theta[j] != 0) active.push_back(j);
  }
  if (active.empty()) return;
  const auto m = static_cast<Eigen::Index>(active.size());
  MatrixXd sub(m, m);
  VectorXd rhs(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index c = 0; c < m; ++c) sub(a, c) = gram(active[a], active[c]);
    rhs(a) = corr(active[a]) - weight(active[a]) * theta[active[a]];
  }
  const VectorXd exact = sub.ldlt().solve(rhs);
  for (Eigen::Index a = 0; a < m; ++a) {
    if (!std::isfinite(exact(a)) || sign_of(exact(a)) != theta[active[a]]) return;
  }
  for (Eigen::Index a = 0; a < m; ++a) beta(active[a]) = exact(a);
}

// Minimizes -c'beta + beta'G beta / 2 + sum w_j |beta_j| by alternating exact
// solves on a signed active set with line searches over its zero crossings.
// Returns true once the KKT conditions hold to `tol`.
bool feature_sign_search(const MatrixXd& gram, const VectorXd& corr, const VectorXd& weight, VectorXd& beta,
                         double tol) {
  const Eigen::Index p = beta.size();
  std::vector<int> theta(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) theta[j] = sign_of(beta(j));
  for (int iter = 0; iter < 4 * static_cast<int>(p) + 50; ++iter) {
    const VectorXd grad = corr - gram * beta;
    bool active_optimal = true;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (theta[j] != 0 && std::abs(grad(j) - weight(j) * theta[j]) > tol) active_optimal = false;
    }
    if (active_optimal) {
      Eigen::Index worst = -1;
      double worst_gap = tol;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (theta[j] == 0 && std::abs(grad(j)) - weight(j) > worst_gap) {
          worst_gap = std::abs(grad(j)) - weight(j);
          worst = j;
        }
      }
      if (worst < 0) {
        solve_signed_support(gram, corr, weight, theta, beta);
        return true;
      }
      theta[worst] = sign_of(grad(worst));
    }
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (theta[j] != 0) active.push_back(j);
    }
    const auto m = static_cast<Eigen::Index>(active.size());
    MatrixXd sub(m, m);
    VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index c = 0; c < m; ++c) sub(a, c) = gram(active[a], active[c]);
      rhs(a) = corr(active[a]) - weight(active[a]) * theta[active[a]];
    }
    const VectorXd target = sub.ldlt().solve(rhs);
    if (!target.allFinite()) return false;

    VectorXd best = beta;
    double best_value = quadratic_objective(gram, corr, weight, beta);
    const double start_value = best_value;
    auto consider = [&](double t) {
      VectorXd cand = beta;
      for (Eigen::Index a = 0; a < m; ++a) {
        const Eigen::Index j = active[a];
        cand(j) = beta(j) + t * (target(a) - beta(j));
        if (std::abs(cand(j)) <= 1e-15 * std::abs(beta(j))) cand(j) = 0.0;
      }
      const double v = quadratic_objective(gram, corr, weight, cand);
      if (v < best_value) {
        best_value = v;
        best = cand;
      }
    };
    consider(1.0);
    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index j = active[a];
      if (beta(j) != 0.0 && sign_of(target(a)) != sign_of(beta(j))) {
        const double t = beta(j) / (beta(j) - target(a));
        VectorXd before = beta;
        consider(t);
        // Pin the crossing coordinate to zero exactly when this step wins.
        if (best != before && std::abs(best(j)) < 1e-12 * (1.0 + std::abs(beta(j)))) best(j) = 0.0;
      }
    }
    if (!(best_value < start_value)) return false;
    beta = best;
    for (Eigen::Index j = 0; j < p; ++j) theta[j] = sign_of(beta(j));
  }
  return false;
}

}  // namespace

LassoResult lasso(const MatrixXd& A, const VectorXd& b, double lambda, const LassoOptions& options) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::kInvalidArgument, "lambda must be >= 0");
  require(A.rows() == b.size(), ErrorCode::kDimensionMismatch, "A and b row counts differ");
  require(A.rows() > 0, ErrorCode::kEmptyInput, "empty design");
  const double n = static_cast<double>(A.rows());
  const Eigen::Index p = A.cols();

  // Work in standardized coordinates beta_j = s_j xi_j with penalty lambda / s_j.
  VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) scale(j) = A.col(j).norm() / std::sqrt(n);
  VectorXd inv = VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (scale(j) > 0.0) inv(j) = 1.0 / scale(j);
  }
  const MatrixXd gram = inv.asDiagonal() * (A.transpose() * A / n) * inv.asDiagonal();
  const VectorXd corr = inv.asDiagonal() * (A.transpose() * b / n);
  const double b_energy = b.squaredNorm() / (2.0 * n);

  VectorXd beta = VectorXd::Zero(p);
  VectorXd grad = corr;  // corr - gram * beta
  auto objective = [&] {
    double pen = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) pen += std::abs(beta(j)) * inv(j);
    return b_energy - corr.dot(beta) + 0.5 * beta.dot(gram * beta) + lambda * pen;
  };
  auto kkt = [&] {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (scale(j) == 0.0) continue;
      const double g = grad(j) * scale(j);
      const double v = beta(j) != 0.0 ? std::abs(g - lambda * (beta(j) > 0 ? 1.0 : -1.0))
                                      : std::max(0.0, std::abs(g) - lambda);
      worst = std::max(worst, v);
    }
    return worst;
  };

  LassoResult result;
  if (options.record_objective) result.objective.push_back(objective());
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (scale(j) == 0.0) continue;
      const double old = beta(j);
      const double updated = soft_threshold(grad(j) + old, lambda * inv(j));
      if (updated != old) {
        grad -= gram.col(j) * (updated - old);
        beta(j) = updated;
      }
    }
    // Refresh the running gradient now and then to stop drift.
    if (sweep % 64 == 0) grad = corr - gram * beta;
    // Every few sweeps, finish from the current iterate with a feature-sign
    // active-set search; its steps never increase the objective.
    if (sweep % 8 == 0) {
      feature_sign_search(gram, corr, lambda * inv, beta, 0.25 * options.kkt_tol / std::max(scale.maxCoeff(), 1.0));
      grad = corr - gram * beta;
    }
    if (options.record_objective) result.objective.push_back(objective());
    if (kkt() <= 0.5 * options.kkt_tol) {
      grad = corr - gram * beta;
      if (kkt() <= 0.5 * options.kkt_tol) {
        result.sweeps = sweep;
        break;
      }
    }
    if (sweep == options.max_sweeps) {
      throw Error(ErrorCode::kNoConvergence,
                  "lasso did not reach KKT tolerance in " + std::to_string(options.max_sweeps) +
                      " sweeps (residual " + std::to_string(kkt()) + ")");
    }
  }
  {
    std::vector<int> theta(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) theta[j] = sign_of(beta(j));
    const VectorXd iterate = beta;
    const double before = kkt();
    // Exact solve on the signed support through QR of the raw columns; the
    // Gram route squares the condition number.
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (theta[j] != 0) active.push_back(j);
    }
    if (!active.empty() && static_cast<Eigen::Index>(active.size()) <= A.rows()) {
      MatrixXd sub(A.rows(), static_cast<Eigen::Index>(active.size()));
      VectorXd sgn(sub.cols());
      for (Eigen::Index k = 0; k < sub.cols(); ++k) {
        sub.col(k) = A.col(active[k]);
        sgn(k) = theta[active[k]];
      }
      const Eigen::HouseholderQR<MatrixXd> qr(sub);
      const auto R = qr.matrixQR().topRows(sub.cols()).triangularView<Eigen::Upper>();
      const VectorXd qtb = (qr.householderQ().transpose() * b).head(sub.cols());
      const VectorXd w = R.transpose().solve(sgn);
      const VectorXd xi = R.solve(qtb - n * lambda * w);
      bool signs_ok = xi.allFinite();
      for (Eigen::Index k = 0; signs_ok && k < sub.cols(); ++k) signs_ok = sign_of(xi(k)) == theta[active[k]];
      if (signs_ok) {
        beta.setZero();
        for (Eigen::Index k = 0; k < sub.cols(); ++k) beta(active[k]) = xi(k) * scale(active[k]);
      }
    }
    grad = corr - gram * beta;
    if (kkt() > std::max(before, options.kkt_tol)) {
      beta = iterate;
      grad = corr - gram * beta;
    }
  }
  result.xi = inv.asDiagonal() * beta;
  result.kkt_residual = lasso_kkt_residual(A, b, result.xi, lambda);
  return result;
}

double choose_penalty(double design_bound, double sigma, int p, int n, double delta, double nu) {
  require(design_bound >= 0 && sigma >= 0 && nu >= 0, ErrorCode::kInvalidArgument, "inputs must be >= 0");
  require(p >= 1 && n >= 1, ErrorCode::kInvalidArgument, "p and n must be positive");
  require(delta > 0 && delta < 1, ErrorCode::kInvalidArgument, "delta must lie in (0,1)");
  return 2.0 * (design_bound * sigma * std::sqrt(2.0 * std::log(2.0 * p / delta) / n) + nu);
}

double ridge_sigma(const MatrixXd& A, const VectorXd& b, double ridge) {
  const Eigen::Index n = A.rows(), p = A.cols();
  require(n > p, ErrorCode::kInvalidArgument, "ridge sigma needs more rows than columns");
  MatrixXd gram = A.transpose() * A;
  const double shift = ridge * std::max(gram.trace() / static_cast<double>(p), 1e-300);
  gram.diagonal().array() += shift;
  const VectorXd xi = gram.ldlt().solve(A.transpose() * b);
  return std::sqrt((b - A * xi).squaredNorm() / static_cast<double>(n - p));
}

VectorXd refit_on_support(const MatrixXd& A, const VectorXd& b, const std::vector<int>& support) {
  VectorXd xi = VectorXd::Zero(A.cols());
  if (support.empty()) return xi;
  MatrixXd sub(A.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(support[k]);
  const VectorXd coef = sub.colPivHouseholderQr().solve(b);
  for (std::size_t k = 0; k < support.size(); ++k) xi(support[k]) = coef(static_cast<Eigen::Index>(k));
  return xi;
}

SupportThreshold threshold_support(const VectorXd& xi, int k, double lambda, double kappa, double beta_min) {
  require(kappa > 0.0, ErrorCode::kInvalidArgument, "kappa must be positive");
  const double radius = 4.0 * std::sqrt(static_cast<double>(std::max(k, 0))) * lambda / kappa;
  SupportThreshold out;
  out.certified = radius < beta_min - radius;
  out.threshold = out.certified ? 0.5 * beta_min : radius;
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    if (std::abs(xi(j)) > out.threshold) out.support.push_back(static_cast<int>(j));
  }
  return out;
}

std::vector<int> support_of(const VectorXd& xi, double tol) {
  std::vector<int> s;
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    if (std::abs(xi(j)) > tol) s.push_back(static_cast<int>(j));
  }
  return s;
}

namespace {

double min_sparse_eigenvalue(const MatrixXd& gram, int size) {
  const int p = static_cast<int>(gram.rows());
  std::vector<int> pick(static_cast<std::size_t>(p), 0);
  std::fill(pick.begin(), pick.begin() + size, 1);
  double best = std::numeric_limits<double>::infinity();
  // prev_permutation over a sorted-descending mask walks every subset once.
  do {
    std::vector<int> idx;
    for (int j = 0; j < p; ++j) {
      if (pick[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    MatrixXd sub(size, size);
    for (int a = 0; a < size; ++a) {
      for (int c = 0; c < size; ++c) sub(a, c) = gram(idx[a], idx[c]);
    }
    best = std::min(best, Eigen::SelfAdjointEigenSolver<MatrixXd>(sub, Eigen::EigenvaluesOnly).eigenvalues()(0));
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

}  // namespace

double estimate_kappa(const MatrixXd& A, const std::vector<int>& support, const KappaOptions& options) {
  const int p = static_cast<int>(A.cols());
  require(A.rows() > 0 && p > 0, ErrorCode::kEmptyInput, "empty design");
  const MatrixXd gram = A.transpose() * A / static_cast<double>(A.rows());
  const int k = static_cast<int>(support.size());
  std::vector<int> off;
  for (int j = 0; j < p; ++j) {
    if (std::find(support.begin(), support.end(), j) == support.end()) off.push_back(j);
  }
  double best = std::numeric_limits<double>::infinity();
  auto ratio = [&](const VectorXd& delta) {
    const double norm2 = delta.squaredNorm();
    if (norm2 > 0.0) best = std::min(best, delta.dot(gram * delta) / norm2);
  };

  if (k > 0) {
    Rng rng(options.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const std::uint64_t patterns = k >= 62 ? ~0ULL : (1ULL << k);
    for (int draw = 0; draw < options.draws; ++draw) {
      VectorXd delta = VectorXd::Zero(p);
      const std::uint64_t signs = static_cast<std::uint64_t>(draw) % patterns;
      // Even draws keep unit magnitudes on S; odd draws randomize them.
      for (int a = 0; a < k; ++a) {
        const double mag = draw % 2 == 0 ? 1.0 : unit(rng);
        delta(support[a]) = ((signs >> a) & 1ULL) ? -mag : mag;
      }
      if (!off.empty()) {
        const double budget = 3.0 * delta.lpNorm<1>() * unit(rng);
        VectorXd tail(static_cast<Eigen::Index>(off.size()));
        for (Eigen::Index c = 0; c < tail.size(); ++c) tail(c) = expo(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
        tail *= budget / tail.lpNorm<1>();
        for (std::size_t c = 0; c < off.size(); ++c) delta(off[c]) = tail(static_cast<Eigen::Index>(c));
      }
      ratio(delta);
    }
  }
  if (p <= options.exact_max_p) {
    const int size = std::min(std::max(2 * k, 1), p);
    best = std::min(best, min_sparse_eigenvalue(gram, size));
  }
  return std::max(best, 0.0);
}

double support_f1(const std::vector<int>& estimate, const std::vector<int>& truth) {
  if (estimate.empty() && truth.empty()) return 1.0;
  double tp = 0;
  for (int j : estimate) tp += std::find(truth.begin(), truth.end(), j) != truth.end();
  return 2.0 * tp / static_cast<double>(estimate.size() + truth.size());
}

RecoveryMetrics recovery_metrics(const VectorXd& xi_hat, const std::vector<int>& support_hat,
                                 const VectorXd& xi_star, const std::vector<int>& support_star,
                                 const MatrixXd& A, double vf_normalizer,
                                 std::span<const std::pair<double, double>> constants) {
  require(xi_hat.size() == xi_star.size() && A.cols() == xi_hat.size(), ErrorCode::kDimensionMismatch,
          "coefficient sizes differ");
  RecoveryMetrics m;
  m.support_f1 = support_f1(support_hat, support_star);
  const double ref = xi_star.norm();
  m.rel_coeff_err = ref > 0 ? (xi_hat - xi_star).norm() / ref : (xi_hat - xi_star).norm();
  if (A.rows() > 0) {
    const double denom = std::sqrt(static_cast<double>(A.rows())) * (vf_normalizer > 0 ? vf_normalizer : 1.0);
    m.vf_nrmse = (A * (xi_hat - xi_star)).norm() / denom;
  }
  if (!constants.empty()) {
    double total = 0.0;
    for (const auto& [truth, estimate] : constants) {
      total += truth != 0.0 ? std::abs(estimate - truth) / std::abs(truth) : std::abs(estimate);
    }
    m.const_err = total / static_cast<double>(constants.size());
  }
  return m;
}

OracleReport oracle_check(const VectorXd& xi_hat, const VectorXd& xi_star, const MatrixXd& A, const VectorXd& b,
                          double lambda, double kappa, bool enforce) {
  require(A.rows() == b.size() && A.cols() == xi_hat.size() && xi_hat.size() == xi_star.size(),
          ErrorCode::kDimensionMismatch, "oracle_check dimensions differ");
  const double n = static_cast<double>(A.rows());
  const auto support = support_of(xi_star);
  const double k = static_cast<double>(support.size());
  OracleReport r;
  r.score = (A.transpose() * (b - A * xi_star) / n).lpNorm<Eigen::Infinity>();
  r.score_gate = r.score <= 0.5 * lambda;

  const VectorXd delta = xi_hat - xi_star;
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    const bool on = std::find(support.begin(), support.end(), static_cast<int>(j)) != support.end();
    (on ? r.cone_on : r.cone_off) += std::abs(delta(j));
  }
  // Slack proportional to solver tolerance keeps exact fits from failing on round-off.
  const double slack = 1e-9 * (1.0 + xi_star.lpNorm<1>());
  r.cone_ok = r.cone_off <= 3.0 * r.cone_on + slack;
  r.error_norm = delta.norm();
  r.prediction_error = (A * delta).squaredNorm() / n;
  const double safe_kappa = std::max(kappa, 1e-300);
  r.error_bound = 4.0 * std::sqrt(k) * lambda / safe_kappa;
  r.prediction_bound = 16.0 * k * lambda * lambda / safe_kappa;
  const bool error_ok = r.error_norm <= r.error_bound + slack;
  const bool pred_ok = r.prediction_error <= r.prediction_bound + slack;
  r.bound_ok = r.cone_ok && error_ok && pred_ok;
  if (enforce && r.score_gate && !r.bound_ok) {
    std::string what = !r.cone_ok  ? "cone condition: ||D_Sc||_1 = " + std::to_string(r.cone_off) +
                                        " > 3 ||D_S||_1 = " + std::to_string(3.0 * r.cone_on)
                       : !error_ok ? "estimation error " + std::to_string(r.error_norm) + " > bound " +
                                         std::to_string(r.error_bound)
                                   : "prediction error " + std::to_string(r.prediction_error) + " > bound " +
                                         std::to_string(r.prediction_bound);
    throw Error(ErrorCode::kBoundViolation, what);
  }
  return r;
}

std::vector<double> numerical_derivative(std::span<const double> x, double dt, int window) {
  require(dt > 0, ErrorCode::kInvalidArgument, "dt must be positive");
  const std::size_t n = x.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d[0] = (x[1] - x[0]) / dt;
  d[n - 1] = (x[n - 1] - x[n - 2]) / dt;
  for (std::size_t t = 1; t + 1 < n; ++t) d[t] = (x[t + 1] - x[t - 1]) / (2.0 * dt);
  return window > 1 ? moving_average(d, window) : d;
}

}  // namespace phmix
