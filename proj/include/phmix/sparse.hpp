#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "phmix/library.hpp"

namespace phmix {

/// Stacked plug-in regression b = A xi + residual, d rows per sample.
struct Design {
  Eigen::MatrixXd A;  // (n*d) x p
  Eigen::VectorXd b;  // n*d
  int samples = 0;
};

/// Row block i is (J - R) gradTheta(z_i)^T, response zdot_i - G a_i.
/// `actions` may have zero columns when G has none.
Design plugin_design(const Library& library, const Eigen::MatrixXd& J, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& G, const Eigen::MatrixXd& states,
                     const Eigen::MatrixXd& derivatives, const Eigen::MatrixXd& actions);

/// Concatenates designs row-wise.
Design stack_designs(std::span<const Design> parts);

struct LassoOptions {
  int max_sweeps = 100000;
  double kkt_tol = 1e-8;
  /// Keeps the objective after every sweep (for monotonicity audits).
  bool record_objective = false;
};

struct LassoResult {
  Eigen::VectorXd xi;
  int sweeps = 0;
  double kkt_residual = 0.0;
  std::vector<double> objective;
};

/// (1/2n)||b - A xi||^2 + lambda ||xi||_1 with n = rows of A.
double lasso_objective(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& xi,
                       double lambda);

/// Largest KKT violation of xi for the Lasso problem.
double lasso_kkt_residual(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& xi,
                          double lambda);

/// Cyclic coordinate descent from zero on internally standardized columns; the
/// per-column penalty is rescaled so the returned xi solves the unscaled
/// problem. Throws NO_CONVERGENCE when the sweep budget runs out.
LassoResult lasso(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lambda,
                  const LassoOptions& options = {});

/// 2 [L_A sigma sqrt(2 log(2p/delta) / n) + nu].
double choose_penalty(double design_bound, double sigma, int p, int n, double delta, double nu = 0.0);

/// Residual standard deviation of a lightly regularized ridge fit.
double ridge_sigma(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double ridge = 1e-6);

/// Ordinary least squares restricted to `support` (other entries zero).
Eigen::VectorXd refit_on_support(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                 const std::vector<int>& support);

struct SupportThreshold {
  std::vector<int> support;
  double threshold = 0.0;
  /// False when (4 sqrt(k) lambda / kappa, beta_min - 4 sqrt(k) lambda / kappa) is empty.
  bool certified = false;
};

SupportThreshold threshold_support(const Eigen::VectorXd& xi, int k, double lambda, double kappa,
                                   double beta_min);

/// Indices with nonzero entries.
std::vector<int> support_of(const Eigen::VectorXd& xi, double tol = 0.0);

struct KappaOptions {
  int draws = 10000;
  std::uint64_t seed = 0;
  /// Also minimize over all supports of size min(2k, p) when p is at most this.
  int exact_max_p = 12;
};

/// Restricted-eigenvalue estimate min ||A D||^2 / (n ||D||^2) over sampled cone
/// directions ||D_Sc||_1 <= 3 ||D_S||_1, plus the exact sparse minimum.
double estimate_kappa(const Eigen::MatrixXd& A, const std::vector<int>& support, const KappaOptions& options = {});

struct RecoveryMetrics {
  double support_f1 = 0.0;
  double rel_coeff_err = 0.0;
  double vf_nrmse = 0.0;
  double const_err = 0.0;
};

/// `constants` holds (truth, estimate) pairs; `vf_normalizer` is the range of
/// the true vector field over the fitted samples.
RecoveryMetrics recovery_metrics(const Eigen::VectorXd& xi_hat, const std::vector<int>& support_hat,
                                 const Eigen::VectorXd& xi_star, const std::vector<int>& support_star,
                                 const Eigen::MatrixXd& A, double vf_normalizer,
                                 std::span<const std::pair<double, double>> constants);

double support_f1(const std::vector<int>& estimate, const std::vector<int>& truth);

struct OracleReport {
  double score = 0.0;  // ||A^T zeta||_inf / n
  bool score_gate = false;
  double error_norm = 0.0;
  double error_bound = 0.0;
  double prediction_error = 0.0;
  double prediction_bound = 0.0;
  double cone_off = 0.0;  // ||D_Sc||_1
  double cone_on = 0.0;   // ||D_S||_1
  bool cone_ok = false;
  /// All three inequalities hold; meaningful only when the gate passes.
  bool bound_ok = false;
};

/// Evaluates the score gate and, when it passes, the estimation, prediction
/// and cone inequalities. With `enforce`, a gated violation throws
/// BOUND_VIOLATION naming the quantity.
OracleReport oracle_check(const Eigen::VectorXd& xi_hat, const Eigen::VectorXd& xi_star,
                          const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lambda, double kappa,
                          bool enforce = false);

/// Central differences (one-sided at the ends) smoothed by the centered moving
/// average used for proxy scores.
std::vector<double> numerical_derivative(std::span<const double> x, double dt, int window = 5);

}  // namespace phmix
