#include "phmix/certificates.hpp"

#include <algorithm>
#include <cmath>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

using Eigen::MatrixXd;
using Eigen::VectorXd;

EnergyBound energy_bound(const CertificateInputs& in) {
  require(in.r > 0.0 && in.mu > 0.0, ErrorCode::kInvalidArgument, "energy_bound needs r > 0 and mu > 0");
  require(in.horizon >= 0.0 && in.initial_energy >= 0.0, ErrorCode::kInvalidArgument,
          "horizon and initial energy must be >= 0");
  EnergyBound out;
  out.alpha = in.r * in.mu;
  const double gA = in.input_gain * in.action_bound;
  out.c_e = gA * gA / (2.0 * in.r) + 0.5 * in.hessian_bound * in.diffusion_trace;
  const double decay = std::exp(-out.alpha * in.horizon);
  out.bound = decay * in.initial_energy + (1.0 - decay) * out.c_e / out.alpha;
  out.markov_tail = in.energy_level > 0.0 ? std::min(1.0, out.bound / in.energy_level) : 1.0;
  return out;
}

PinskerTransfer pinsker_transfer(double kl_bound, double cost_bound, double optimizer_gap, double delta) {
  require(kl_bound >= 0.0, ErrorCode::kInvalidArgument, "KL bound must be >= 0");
  PinskerTransfer out;
  out.eps_tv = std::min(1.0, std::sqrt(kl_bound / 2.0));
  out.subopt_bound = 2.0 * cost_bound * out.eps_tv + optimizer_gap;
  out.chance_budget = delta - out.eps_tv;
  return out;
}

double mc_margin(int rollouts, int evaluated_actions, double beta) {
  require(rollouts >= 1 && evaluated_actions >= 1, ErrorCode::kInvalidArgument, "n and L must be >= 1");
  require(beta > 0.0 && beta < 1.0, ErrorCode::kInvalidArgument, "beta must lie in (0,1)");
  return std::sqrt(std::log(evaluated_actions / beta) / (2.0 * rollouts));
}

HybridSystemSpec linear_ph_system(const std::string& name, const Eigen::Matrix2d& Q, const Eigen::Matrix2d& J,
                                  const Eigen::Matrix2d& R, const Eigen::Matrix2d& Sigma, double dt,
                                  const Eigen::Vector2d& z0) {
  HybridSystemSpec spec;
  spec.name = name;
  spec.state_dim = 2;
  spec.input_dim = 1;
  spec.dt = dt;
  spec.default_steps = 2000;
  spec.library = Library({"q", "p"}, {"q^2", "q*p", "p^2"});
  ModeLaw law;
  law.name = "linear";
  law.J = J;
  law.R = R;
  law.G = MatrixXd::Zero(2, 1);
  law.Sigma = Sigma;
  law.xi = (VectorXd(3) << 0.5 * Q(0, 0), Q(0, 1), 0.5 * Q(1, 1)).finished();
  spec.modes = {law};
  spec.z0 = z0;
  spec.s0 = 0;
  spec.velocity_maps = {};
  spec.position_coords = {0};
  spec.actions = [](int steps, double, Rng&) { return MatrixXd::Zero(steps, 1); };
  return spec;
}

std::vector<HybridSystemSpec> linear_ph_benchmarks() {
  const Eigen::Matrix2d J = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();
  std::vector<HybridSystemSpec> out;
  out.push_back(linear_ph_system("linear_iso", Eigen::Matrix2d::Identity(), J, 0.5 * Eigen::Matrix2d::Identity(),
                                 0.2 * Eigen::Matrix2d::Identity(), 5e-3, Eigen::Vector2d(1.5, 0.0)));
  out.push_back(linear_ph_system("linear_stiff", (Eigen::Matrix2d() << 4, 0, 0, 1).finished(), J,
                                 (Eigen::Matrix2d() << 0.3, 0, 0, 0.8).finished(),
                                 (Eigen::Matrix2d() << 0.05, 0, 0, 0.3).finished(), 5e-3, Eigen::Vector2d(0.0, 2.0)));
  out.push_back(linear_ph_system("linear_coupled", (Eigen::Matrix2d() << 2, 0.5, 0.5, 1).finished(), J,
                                 (Eigen::Matrix2d() << 0.6, 0.1, 0.1, 0.4).finished(),
                                 (Eigen::Matrix2d() << 0.1, 0.02, 0.02, 0.1).finished(), 5e-3,
                                 Eigen::Vector2d(-1.0, 1.0)));
  return out;
}

double stationary_energy(const Eigen::Matrix2d& Q, const Eigen::Matrix2d& J, const Eigen::Matrix2d& R,
                         const Eigen::Matrix2d& Sigma) {
  const Eigen::Matrix2d A = (J - R) * Q;
  // vec(A P + P A^T) = (I kron A + A kron I) vec(P).
  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 2; ++k) {
        K(i + 2 * j, k + 2 * j) += A(i, k);
        K(i + 2 * j, i + 2 * k) += A(j, k);
      }
    }
  }
  const Eigen::Vector4d rhs = -Eigen::Map<const Eigen::Vector4d>(Sigma.data());
  const Eigen::Vector4d vecP = K.fullPivLu().solve(rhs);
  const Eigen::Matrix2d P = Eigen::Map<const Eigen::Matrix2d>(vecP.data());
  return 0.5 * (Q * P).trace();
}

namespace {

constexpr std::size_t kMaxAssumptionSamples = 20000;

MatrixXd hessian(const HybridSystemSpec& spec, int s, const VectorXd& z) {
  const auto& law = spec.mode(s);
  const int d = spec.state_dim;
  MatrixXd h(d, d);
  for (int c = 0; c < d; ++c) {
    const double step = 1e-5 * std::max(1.0, std::abs(z(c)));
    VectorXd zp = z, zm = z;
    zp(c) += step;
    zm(c) -= step;
    h.col(c) = (spec.library.hamiltonian_gradient(law.xi, zp) - spec.library.hamiltonian_gradient(law.xi, zm)) /
               (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace

AssumptionReport check_assumptions(const HybridSystemSpec& spec, const std::vector<Trajectory>& batch) {
  require(!batch.empty(), ErrorCode::kEmptyInput, "empty trajectory batch");
  AssumptionReport rep;
  rep.r = std::numeric_limits<double>::infinity();
  for (const auto& law : spec.modes) {
    const MatrixXd sym = 0.5 * (law.R + law.R.transpose());
    rep.r = std::min(rep.r, Eigen::SelfAdjointEigenSolver<MatrixXd>(sym).eigenvalues()(0));
    if (law.G.cols() > 0) {
      rep.input_gain = std::max(rep.input_gain, Eigen::JacobiSVD<MatrixXd>(law.G).singularValues()(0));
    }
    rep.diffusion_trace = std::max(rep.diffusion_trace, law.Sigma.trace());
  }
  double pl = std::numeric_limits<double>::infinity();
  std::size_t total = 0;
  for (const auto& traj : batch) total += static_cast<std::size_t>(traj.length());
  const int stride = static_cast<int>(std::max<std::size_t>(1, total / kMaxAssumptionSamples));
  for (const auto& traj : batch) {
    for (int t = 0; t < traj.length(); t += stride) {
      const VectorXd z = traj.states.row(t).transpose();
      const int s = traj.modes[t];
      if (traj.actions.cols() > 0) rep.action_bound = std::max(rep.action_bound, traj.actions.row(t).norm());
      const MatrixXd h = hessian(spec, s, z);
      rep.hessian_bound =
          std::max(rep.hessian_bound, Eigen::SelfAdjointEigenSolver<MatrixXd>(h).eigenvalues().cwiseAbs().maxCoeff());
      const double u = spec.energy(s, z);
      if (u > 1e-12) {
        pl = std::min(pl, spec.library.hamiltonian_gradient(spec.mode(s).xi, z).squaredNorm() / (2.0 * u));
      }
    }
  }
  rep.mu = std::isfinite(pl) ? 0.9 * pl : 0.0;
  if (!(rep.r > 0.0)) {
    rep.reason = "dissipation is not uniformly positive (min eig sym(R) = " + std::to_string(rep.r) + ")";
  } else if (!(rep.mu > 0.0)) {
    rep.reason = "no positive PL constant on the sampled region";
  } else if (!std::isfinite(rep.hessian_bound)) {
    rep.reason = "Hessian bound is not finite";
  } else {
    rep.met = true;
  }
  return rep;
}

EnergyDiagnostic energy_drift_diagnostic(const HybridSystemSpec& spec, const std::vector<Trajectory>& batch,
                                         bool enforce) {
  EnergyDiagnostic out;
  out.assumptions = check_assumptions(spec, batch);
  if (enforce && !out.assumptions.met) throw Error(ErrorCode::kAssumptionUnmet, out.assumptions.reason);

  std::vector<double> initial, final;
  for (const auto& traj : batch) {
    const int last = traj.length() - 1;
    initial.push_back(spec.energy(traj.modes[0], traj.states.row(0).transpose()));
    final.push_back(spec.energy(traj.modes[last], traj.states.row(last).transpose()));
    out.horizon = traj.times(last) - traj.times(0);
  }
  out.initial_energy = stats::mean(initial);
  out.empirical_mean = stats::mean(final);
  out.standard_error = final.size() > 1 ? stats::sem(final) : 0.0;
  if (out.assumptions.met) {
    CertificateInputs in;
    in.r = out.assumptions.r;
    in.mu = out.assumptions.mu;
    in.input_gain = out.assumptions.input_gain;
    in.action_bound = out.assumptions.action_bound;
    in.hessian_bound = out.assumptions.hessian_bound;
    in.diffusion_trace = out.assumptions.diffusion_trace;
    in.horizon = out.horizon;
    in.initial_energy = out.initial_energy;
    out.bound = energy_bound(in);
    out.pass = out.empirical_mean <= out.bound.bound + 4.0 * out.standard_error;
    if (enforce && !out.pass) {
      throw Error(ErrorCode::kBoundViolation, "mean terminal energy " + std::to_string(out.empirical_mean) +
                                                  " exceeds bound " + std::to_string(out.bound.bound) + " + 4 SE");
    }
  }
  return out;
}

}  // namespace phmix
