#include "phmix/filter.hpp"

#include <cmath>
#include <limits>

#include "phmix/error.hpp"
#include "phmix/stats.hpp"

namespace phmix {

using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

HybridTransition::HybridTransition(const HybridSystemSpec& spec, TransitionConfig cfg)
    : spec_(spec), cfg_(cfg) {
  require(cfg_.mode_floor >= 0.0 && cfg_.mode_floor < 1.0, ErrorCode::kInvalidArgument,
          "mode floor must lie in [0,1)");
  require(cfg_.process_floor > 0.0, ErrorCode::kInvalidArgument, "process floor must be positive");
  for (const auto& m : spec_.modes) {
    diffusion_.push_back(m.Sigma.diagonal() * spec_.dt +
                         VectorXd::Constant(spec_.state_dim, cfg_.process_floor * cfg_.process_floor));
  }
}

std::vector<Branch> HybridTransition::branches(const HybridParticle& x, const VectorXd& a) const {
  const int m = spec_.mode_count();
  const VectorXd z_pred = x.z + spec_.dt * spec_.vector_field(x.mode, x.z, a);
  std::vector<double> mass(static_cast<std::size_t>(m), 0.0);
  std::vector<const Guard*> via(static_cast<std::size_t>(m), nullptr);
  double remaining = 1.0;
  for (const auto& g : spec_.guards) {
    if (g.from != x.mode) continue;
    const double fire = logistic(-g.value(z_pred, a) / g.softness);
    mass[static_cast<std::size_t>(g.to)] += remaining * fire;
    remaining *= 1.0 - fire;
    if (!via[static_cast<std::size_t>(g.to)]) via[static_cast<std::size_t>(g.to)] = &g;
  }
  mass[static_cast<std::size_t>(x.mode)] += remaining;

  std::vector<Branch> out(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s) {
    Branch& b = out[static_cast<std::size_t>(s)];
    b.mode = s;
    const double pi = (1.0 - cfg_.mode_floor) * mass[static_cast<std::size_t>(s)] + cfg_.mode_floor / m;
    b.log_mass = pi > 0.0 ? std::log(pi) : kNegInf;
    const Guard* g = via[static_cast<std::size_t>(s)];
    b.mean = (s != x.mode && g) ? g->reset(z_pred) : z_pred;
    b.var = diffusion_[static_cast<std::size_t>(s)];
  }
  return out;
}

std::vector<Branch> proposal_branches(const std::vector<Branch>& carrier, const HybridSystemSpec& spec,
                                      const ProposalConfig& cfg, const std::vector<int>& observed_coords,
                                      const VectorXd* observation, double obs_var) {
  std::vector<Branch> out = carrier;
  if (cfg.contact_dropout > 0.0) {
    const double keep = cfg.contact_dropout >= 1.0 ? kNegInf : std::log1p(-cfg.contact_dropout);
    std::vector<double> masses;
    for (auto& b : out) {
      if (spec.mode(b.mode).contact) b.log_mass += keep;
      masses.push_back(b.log_mass);
    }
    const double total = stats::log_sum_exp(masses);
    if (total > kNegInf) {
      for (auto& b : out) b.log_mass -= total;
    } else {
      out = carrier;
    }
  }
  if (cfg.use_observation && observation) {
    const double r = obs_var * cfg.obs_variance_scale;
    for (auto& b : out) {
      for (std::size_t j = 0; j < observed_coords.size(); ++j) {
        const int c = observed_coords[j];
        const double v = b.var(c);
        const double post_var = v * r / (v + r);
        b.mean(c) = post_var * (b.mean(c) / v + (*observation)(static_cast<Eigen::Index>(j)) / r);
        b.var(c) = post_var;
      }
    }
  }
  return out;
}

double branches_log_density(const std::vector<Branch>& branches, const HybridParticle& x) {
  for (const auto& b : branches) {
    if (b.mode != x.mode) continue;
    if (b.log_mass == kNegInf) return kNegInf;
    double lp = b.log_mass;
    for (Eigen::Index c = 0; c < x.z.size(); ++c) lp += stats::normal_log_pdf(x.z(c), b.mean(c), b.var(c));
    return lp;
  }
  return kNegInf;
}

HybridParticle sample_branches(const std::vector<Branch>& branches, Rng& rng) {
  double top = kNegInf;
  for (const auto& b : branches) top = std::max(top, b.log_mass);
  std::vector<double> probs;
  for (const auto& b : branches) probs.push_back(std::exp(b.log_mass - top));
  std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
  const Branch& b = branches[pick(rng)];
  std::normal_distribution<double> normal(0.0, 1.0);
  HybridParticle x{b.mode, b.mean};
  for (Eigen::Index c = 0; c < x.z.size(); ++c) x.z(c) += std::sqrt(b.var(c)) * normal(rng);
  return x;
}

namespace {

// log of the integral of N(z; mu, v) * N(o; z, r)^power over z, by Gauss-Hermite
// centred on the Gaussian product so the rule is exact for these integrands.
double log_gaussian_moment(double mu, double v, double o, double r, int power, const stats::GaussHermite& gh) {
  const double r_eff = r / power;
  const double s = 1.0 / (1.0 / v + 1.0 / r_eff);
  const double center = s * (mu / v + o / r_eff);
  const double scale = std::sqrt(2.0 * s);
  std::vector<double> terms;
  terms.reserve(gh.nodes.size());
  for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
    const double x = gh.nodes[k];
    const double z = center + scale * x;
    terms.push_back(std::log(gh.weights[k]) + x * x + stats::normal_log_pdf(z, mu, v) +
                    power * stats::normal_log_pdf(o, z, r));
  }
  return std::log(scale) + stats::log_sum_exp(terms);
}

}  // namespace

double carrier_second_moment_ratio(const std::vector<std::vector<Branch>>& carrier, std::span<const double> weights,
                                   const std::vector<int>& observed_coords, const VectorXd& observation,
                                   double obs_var, int nodes) {
  require(carrier.size() == weights.size(), ErrorCode::kDimensionMismatch, "certificate: weights and carrier differ");
  const auto& gh = stats::gauss_hermite(static_cast<std::size_t>(nodes));
  std::vector<double> first, second;
  for (std::size_t i = 0; i < carrier.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    const double lw = std::log(weights[i]);
    for (const auto& b : carrier[i]) {
      if (b.log_mass == kNegInf) continue;
      double l1 = lw + b.log_mass, l2 = lw + b.log_mass;
      for (std::size_t j = 0; j < observed_coords.size(); ++j) {
        const int c = observed_coords[j];
        const double o = observation(static_cast<Eigen::Index>(j));
        l1 += log_gaussian_moment(b.mean(c), b.var(c), o, obs_var, 1, gh);
        l2 += log_gaussian_moment(b.mean(c), b.var(c), o, obs_var, 2, gh);
      }
      first.push_back(l1);
      second.push_back(l2);
    }
  }
  require(!first.empty(), ErrorCode::kEmptyInput, "certificate: empty carrier");
  const double log_rho = stats::log_sum_exp(second) - 2.0 * stats::log_sum_exp(first);
  return std::max(1.0, std::exp(log_rho));
}

HybridFilter::HybridFilter(const HybridSystemSpec& spec, DefensiveConfig cfg)
    : transition_(spec, cfg.transition), cfg_(cfg) {
  require(cfg_.particles >= 2, ErrorCode::kInvalidArgument, "filter needs at least 2 particles");
  require(cfg_.tau > 0.0, ErrorCode::kInvalidArgument, "tau must be positive");
  require(cfg_.lambda_fb > 0.0 && cfg_.lambda_fb <= 1.0, ErrorCode::kInvalidArgument,
          "fallback lambda must lie in (0,1]");
  require(cfg_.fixed_lambda >= 0.0 && cfg_.fixed_lambda <= 1.0, ErrorCode::kInvalidArgument,
          "fixed lambda must lie in [0,1]");
  require(cfg_.obs_noise_std > 0.0, ErrorCode::kInvalidArgument, "filter observation noise must be positive");
}

ParticleEnsemble HybridFilter::initialize(const VectorXd& z0, double init_std, int s0, Rng& rng) const {
  ParticleEnsemble ens;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < cfg_.particles; ++i) {
    HybridParticle x{s0, z0};
    for (Eigen::Index c = 0; c < x.z.size(); ++c) x.z(c) += init_std * normal(rng);
    ens.particles.push_back(std::move(x));
  }
  ens.weights.assign(static_cast<std::size_t>(cfg_.particles), 1.0 / cfg_.particles);
  return ens;
}

const StepDiagnostics& HybridFilter::step(ParticleEnsemble& ens, const VectorXd& action, const VectorXd* observation,
                                          const std::vector<int>& observed_coords, Rng& rng) const {
  const auto n = ens.particles.size();
  const double obs_var = cfg_.obs_noise_std * cfg_.obs_noise_std;
  const auto& spec = transition_.spec();
  StepDiagnostics diag;
  diag.observed = observation != nullptr;

  std::vector<std::vector<Branch>> carrier(n);
  for (std::size_t i = 0; i < n; ++i) carrier[i] = transition_.branches(ens.particles[i], action);

  if (observation) {
    const auto r = static_cast<Eigen::Index>(observed_coords.size());
    diag.pred_mean = VectorXd::Zero(r);
    VectorXd second = VectorXd::Zero(r);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& b : carrier[i]) {
        const double w = ens.weights[i] * std::exp(b.log_mass);
        for (Eigen::Index j = 0; j < r; ++j) {
          const int c = observed_coords[static_cast<std::size_t>(j)];
          diag.pred_mean(j) += w * b.mean(c);
          second(j) += w * (b.var(c) + b.mean(c) * b.mean(c));
        }
      }
    }
    diag.pred_var = (second - diag.pred_mean.cwiseProduct(diag.pred_mean)).cwiseMax(0.0) +
                    VectorXd::Constant(r, obs_var);
  }

  // Step 1: lambda is fixed from the history and the carrier before any draw.
  const double rho = observation ? carrier_second_moment_ratio(carrier, ens.weights, observed_coords, *observation,
                                                               obs_var, cfg_.quadrature_nodes)
                                 : 1.0;
  diag.rho_bar = cfg_.certificate_inflation * rho;
  if (cfg_.policy == LambdaPolicy::kCertified) {
    const LambdaDecision d = select_lambda(diag.rho_bar, cfg_.particles, cfg_.tau, cfg_.lambda_fb);
    diag.lambda = d.lambda;
    diag.certified = d.certified;
    diag.lambda_min = d.lambda_min;
  } else {
    diag.lambda = cfg_.fixed_lambda;
    diag.lambda_min = diag.rho_bar / (1.0 + cfg_.particles * cfg_.tau * cfg_.tau);
  }
  const double lambda = diag.lambda;

  // Steps 2-3: sample from the mixture and weight with the same lambda.
  std::vector<HybridParticle> next(n);
  std::vector<double> log_g(n, 0.0), log_p(n), log_q(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto proposal = proposal_branches(carrier[i], spec, cfg_.proposal, observed_coords, observation, obs_var);
    next[i] = unit(rng) < lambda ? sample_branches(carrier[i], rng) : sample_branches(proposal, rng);
    log_p[i] = branches_log_density(carrier[i], next[i]);
    log_q[i] = branches_log_density(proposal, next[i]);
    if (observation) {
      for (std::size_t j = 0; j < observed_coords.size(); ++j) {
        log_g[i] += stats::normal_log_pdf((*observation)(static_cast<Eigen::Index>(j)),
                                          next[i].z(observed_coords[j]), obs_var);
      }
    }
  }
  const WeightSummary w = one_step_weights(log_g, log_p, log_q, lambda, ens.weights);

  // Step 4: normalize and record.
  ens.particles = std::move(next);
  ens.weights = w.normalized;
  diag.ess_over_n = w.ess_over_n;
  diag.rel_weight_var = w.rel_weight_var;
  diag.zhat = w.zhat;
  diag.log_zhat = w.log_zhat;
  diag.mode_posterior = mode_marginal(ens, spec.mode_count());

  // Step 5: resample when the ESS rule fires.
  if (diag.ess_over_n < cfg_.ess_trigger) {
    const auto ancestors = systematic_resample(ens.weights, rng);
    std::vector<HybridParticle> resampled(n);
    for (std::size_t k = 0; k < n; ++k) resampled[k] = ens.particles[static_cast<std::size_t>(ancestors[k])];
    ens.particles = std::move(resampled);
    ens.weights.assign(n, 1.0 / static_cast<double>(n));
    diag.resampled = true;
  }
  diag.t = static_cast<int>(ens.history.size()) + 1;
  ens.history.push_back(std::move(diag));
  return ens.history.back();
}

ParticleEnsemble HybridFilter::run(const ObservationSequence& obs, const Eigen::MatrixXd& actions, double init_std,
                                   Rng& rng) const {
  require(actions.rows() >= obs.length() - 1, ErrorCode::kDimensionMismatch, "run: too few actions");
  const auto& spec = transition_.spec();
  ParticleEnsemble ens = initialize(spec.z0, init_std, spec.s0, rng);
  VectorXd o;
  for (int t = 1; t < obs.length(); ++t) {
    const bool seen = obs.available(t);
    if (seen) o = obs.values.row(t).transpose();
    step(ens, actions.row(t - 1).transpose(), seen ? &o : nullptr, obs.observed_coords, rng);
    ens.history.back().t = t;
  }
  return ens;
}

VectorXd mode_marginal(const ParticleEnsemble& ens, int mode_count) {
  VectorXd post = VectorXd::Zero(mode_count);
  for (std::size_t i = 0; i < ens.particles.size(); ++i) post(ens.particles[i].mode) += ens.weights[i];
  return post;
}

}  // namespace phmix
