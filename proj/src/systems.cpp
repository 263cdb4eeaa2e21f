#include "phmix/systems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "phmix/error.hpp"

namespace phmix {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd HybridSystemSpec::vector_field(int s, const VectorXd& z, const VectorXd& a) const {
  const ModeLaw& m = mode(s);
  VectorXd f = (m.J - m.R) * library.hamiltonian_gradient(m.xi, z);
  if (input_dim > 0 && a.size() == input_dim) f += m.G * a;
  return f;
}

double HybridSystemSpec::hamiltonian(int s, const VectorXd& z) const {
  return library.hamiltonian(mode(s).xi, z);
}

double HybridSystemSpec::energy(int s, const VectorXd& z) const {
  return hamiltonian(s, z) + mode(s).energy_offset;
}

Eigen::VectorXi HybridSystemSpec::support(int s) const {
  const VectorXd& xi = mode(s).xi;
  std::vector<int> idx;
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    if (xi(j) != 0.0) idx.push_back(static_cast<int>(j));
  }
  return Eigen::Map<Eigen::VectorXi>(idx.data(), static_cast<Eigen::Index>(idx.size()));
}

int HybridSystemSpec::max_sparsity() const {
  int k = 0;
  for (int s = 0; s < mode_count(); ++s) k = std::max(k, static_cast<int>(support(s).size()));
  return k;
}

MatrixXd HybridSystemSpec::sample_actions(int steps, std::uint64_t seed) const {
  Rng rng(seed);
  if (!actions) return MatrixXd::Zero(steps, input_dim);
  return actions(steps, dt, rng);
}

namespace {

MatrixXd canonical_j(int dof) {
  MatrixXd j = MatrixXd::Zero(2 * dof, 2 * dof);
  j.topRightCorner(dof, dof) = MatrixXd::Identity(dof, dof);
  j.bottomLeftCorner(dof, dof) = -MatrixXd::Identity(dof, dof);
  return j;
}

MatrixXd diag(std::initializer_list<double> values) {
  VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v.asDiagonal();
}

VectorXd coefficients(const Library& lib, std::initializer_list<std::pair<const char*, double>> terms) {
  VectorXd xi = VectorXd::Zero(lib.size());
  for (const auto& [id, value] : terms) xi(lib.index_of(id)) = value;
  return xi;
}

std::vector<std::string> cubic_monomials(const std::string& q, const std::string& p) {
  return {q, p, q + "^2", q + "*" + p, p + "^2", q + "^3", q + "^2*" + p, q + "*" + p + "^2", p + "^3"};
}

double uniform_phase(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
}

HybridSystemSpec make_puck_like(const std::string& name, double mass, double gravity, double stiffness,
                                double restitution, double contact_damping, double height,
                                double momentum_noise, double thrust) {
  HybridSystemSpec spec;
  spec.name = name;
  spec.state_dim = 2;
  spec.input_dim = 1;
  spec.library = Library({"q", "p"}, cubic_monomials("q", "p"));
  spec.parameters = {{"mass", mass},
                     {"gravity", gravity},
                     {"wall_stiffness", stiffness},
                     {"restitution", restitution},
                     {"contact_damping", contact_damping},
                     {"thrust_amplitude", thrust}};
  const double e_min = -(mass * gravity) * (mass * gravity) / (2.0 * stiffness);
  const MatrixXd g = (MatrixXd(2, 1) << 0.0, 1.0).finished();

  ModeLaw free;
  free.name = "free_flight";
  free.J = canonical_j(1);
  free.R = MatrixXd::Zero(2, 2);
  free.G = g;
  free.Sigma = diag({0.0, momentum_noise * momentum_noise});
  free.xi = coefficients(spec.library, {{"p^2", 0.5 / mass}, {"q", mass * gravity}});
  free.energy_offset = -e_min;

  ModeLaw contact = free;
  contact.name = "wall_contact";
  contact.R = diag({0.0, contact_damping});
  contact.xi = coefficients(spec.library,
                            {{"p^2", 0.5 / mass}, {"q", mass * gravity}, {"q^2", 0.5 * stiffness}});
  contact.contact = true;
  spec.modes = {free, contact};

  spec.guards.push_back({"floor_impact", 0, 1,
                         [](const VectorXd& z, const VectorXd&) { return z(0); },
                         [restitution](const VectorXd& z) {
                           VectorXd out = z;
                           out(0) = 0.0;
                           out(1) *= restitution;
                           return out;
                         },
                         0.002});
  spec.guards.push_back({"floor_release", 1, 0,
                         [](const VectorXd& z, const VectorXd&) { return -z(0); },
                         [](const VectorXd& z) { return z; }, 0.002});

  const int ip = spec.library.index_of("p^2");
  const int iq = spec.library.index_of("q");
  const int iqq = spec.library.index_of("q^2");
  spec.constants = {
      {"mass", 0, mass, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"gravity", 0, gravity, [ip, iq](const VectorXd& xi) { return 2.0 * xi(ip) * xi(iq); }},
      {"mass", 1, mass, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"wall_stiffness", 1, stiffness, [iqq](const VectorXd& xi) { return 2.0 * xi(iqq); }},
  };
  spec.velocity_maps = {{0, 1, mass}};
  spec.position_coords = {0};
  spec.z0 = (VectorXd(2) << height, 0.0).finished();
  spec.s0 = 0;
  spec.actions = [thrust](int steps, double dt, Rng& rng) {
    const double phase = uniform_phase(rng);
    MatrixXd a(steps, 1);
    for (int k = 0; k < steps; ++k) a(k, 0) = thrust * std::sin(2.0 * std::numbers::pi * 1.3 * k * dt + phase);
    return a;
  };
  return spec;
}

HybridSystemSpec make_puck() {
  return make_puck_like("puck", 1.0, 10.0, 400.0, 0.8, 2.0, 1.0, 0.05, 0.5);
}

HybridSystemSpec make_block() {
  constexpr double kMass = 1.0;
  constexpr double kKinetic = 2.0;
  constexpr double kStatic = 2.5;
  constexpr double kViscous = 0.5;
  constexpr double kPush = 4.0;
  HybridSystemSpec spec;
  spec.name = "block";
  spec.state_dim = 2;
  spec.input_dim = 1;
  spec.library = Library({"q", "p"}, cubic_monomials("q", "p"));
  spec.parameters = {{"mass", kMass},
                     {"kinetic_friction_force", kKinetic},
                     {"static_friction_force", kStatic},
                     {"viscous_damping", kViscous},
                     {"push_amplitude", kPush}};
  const MatrixXd g = (MatrixXd(2, 1) << 0.0, 1.0).finished();

  ModeLaw free;
  free.name = "free";
  free.J = canonical_j(1);
  free.R = MatrixXd::Zero(2, 2);
  free.G = g;
  free.Sigma = diag({0.0, 0.05 * 0.05});
  free.xi = coefficients(spec.library, {{"p^2", 0.5 / kMass}});

  ModeLaw stick;
  stick.name = "stick";
  stick.J = MatrixXd::Zero(2, 2);
  stick.R = MatrixXd::Zero(2, 2);
  stick.G = MatrixXd::Zero(2, 1);
  stick.Sigma = MatrixXd::Zero(2, 2);
  stick.xi = coefficients(spec.library, {{"p^2", 0.5 / kMass}, {"q", kKinetic}});
  stick.contact = true;
  stick.identifiable = false;

  ModeLaw slip = free;
  slip.name = "slip";
  slip.R = diag({0.0, kViscous});
  slip.xi = stick.xi;
  slip.contact = true;
  spec.modes = {free, stick, slip};

  spec.guards.push_back({"enter_rough_patch", 0, 2,
                         [](const VectorXd& z, const VectorXd&) { return -z(0); },
                         [](const VectorXd& z) {
                           VectorXd out = z;
                           out(0) = 0.0;
                           return out;
                         },
                         0.002});
  spec.guards.push_back({"static_friction_holds", 2, 1,
                         [](const VectorXd& z, const VectorXd&) { return z(1); },
                         [](const VectorXd& z) {
                           VectorXd out = z;
                           out(1) = 0.0;
                           return out;
                         },
                         0.002});
  spec.guards.push_back({"push_breaks_stiction", 1, 2,
                         [](const VectorXd&, const VectorXd& a) { return kStatic - a(0); },
                         [](const VectorXd& z) { return z; }, 0.05});

  const int ip = spec.library.index_of("p^2");
  const int iq = spec.library.index_of("q");
  spec.constants = {
      {"mass", 0, kMass, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"mass", 2, kMass, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"kinetic_friction_force", 2, kKinetic, [iq](const VectorXd& xi) { return xi(iq); }},
  };
  spec.velocity_maps = {{0, 1, kMass}};
  spec.position_coords = {0};
  spec.z0 = (VectorXd(2) << -0.5, 1.5).finished();
  spec.s0 = 0;
  spec.actions = [](int steps, double dt, Rng& rng) {
    std::uniform_real_distribution<double> jitter(0.0, 0.15);
    MatrixXd a = MatrixXd::Zero(steps, 1);
    double start = 0.6 + jitter(rng);
    while (true) {
      const int k0 = static_cast<int>(std::lround(start / dt));
      if (k0 >= steps) break;
      const int k1 = std::min(steps, k0 + static_cast<int>(std::lround(0.15 / dt)));
      for (int k = k0; k < k1; ++k) a(k, 0) = kPush;
      start += 0.45 + jitter(rng);
    }
    return a;
  };
  return spec;
}

HybridSystemSpec make_pendulum() {
  constexpr double kInertia = 1.0;
  constexpr double kGravityTorque = 25.0;  // m g l
  constexpr double kStopAngle = 1.0;
  constexpr double kStopStiffness = 100.0;
  constexpr double kRestitution = 0.7;
  HybridSystemSpec spec;
  spec.name = "pendulum";
  spec.state_dim = 2;
  spec.input_dim = 1;
  spec.library = Library({"th", "p"}, {"p", "th*p", "p^2", "p^3", "sin(th)", "cos(th)", "p*sin(th)",
                                       "p*cos(th)", "p^2*cos(th)"});
  spec.parameters = {{"inertia", kInertia},
                     {"gravity_torque", kGravityTorque},
                     {"stop_angle", kStopAngle},
                     {"stop_stiffness", kStopStiffness},
                     {"restitution", kRestitution},
                     {"swing_damping", 0.1},
                     {"stop_damping", 2.0}};
  const MatrixXd g = (MatrixXd(2, 1) << 0.0, 1.0).finished();

  ModeLaw swing;
  swing.name = "swing";
  swing.J = canonical_j(1);
  swing.R = diag({0.0, 0.1});
  swing.G = g;
  swing.Sigma = diag({0.0, 0.05 * 0.05});
  swing.xi = coefficients(spec.library, {{"p^2", 0.5 / kInertia}, {"cos(th)", -kGravityTorque}});
  swing.energy_offset = kGravityTorque;

  // Compliant stop potential k (1 - cos(th - th_s)) expands onto cos/sin terms.
  ModeLaw stop = swing;
  stop.name = "stop_contact";
  stop.R = diag({0.0, 2.0});
  stop.xi = coefficients(spec.library,
                         {{"p^2", 0.5 / kInertia},
                          {"cos(th)", -(kGravityTorque + kStopStiffness * std::cos(kStopAngle))},
                          {"sin(th)", -kStopStiffness * std::sin(kStopAngle)}});
  stop.energy_offset = kGravityTorque + kStopStiffness;
  stop.contact = true;
  spec.modes = {swing, stop};

  spec.guards.push_back({"hit_stop", 0, 1,
                         [](const VectorXd& z, const VectorXd&) { return kStopAngle - z(0); },
                         [](const VectorXd& z) {
                           VectorXd out = z;
                           out(0) = kStopAngle;
                           out(1) *= kRestitution;
                           return out;
                         },
                         0.002});
  spec.guards.push_back({"leave_stop", 1, 0,
                         [](const VectorXd& z, const VectorXd&) { return z(0) - kStopAngle; },
                         [](const VectorXd& z) { return z; }, 0.002});

  const int ip = spec.library.index_of("p^2");
  const int ic = spec.library.index_of("cos(th)");
  const int is = spec.library.index_of("sin(th)");
  spec.constants = {
      {"inertia", 0, kInertia, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"gravity_torque", 0, kGravityTorque, [ic](const VectorXd& xi) { return -xi(ic); }},
      {"inertia", 1, kInertia, [ip](const VectorXd& xi) { return 0.5 / xi(ip); }},
      {"stop_stiffness", 1, kStopStiffness,
       [is](const VectorXd& xi) { return -xi(is) / std::sin(kStopAngle); }},
  };
  spec.velocity_maps = {{0, 1, kInertia}};
  spec.position_coords = {0};
  spec.z0 = (VectorXd(2) << -1.8, 0.0).finished();
  spec.s0 = 0;
  spec.actions = [](int steps, double dt, Rng& rng) {
    const double phase = uniform_phase(rng);
    MatrixXd a(steps, 1);
    for (int k = 0; k < steps; ++k) a(k, 0) = 0.3 * std::sin(2.0 * std::numbers::pi * 0.7 * k * dt + phase);
    return a;
  };
  return spec;
}

HybridSystemSpec make_pusher() {
  constexpr double kMass = 1.0;
  constexpr double kTable = 0.5;
  constexpr double kWallStiffness = 50.0;
  constexpr double kWallDamping = 2.0;
  constexpr double kRestitution = 0.6;
  HybridSystemSpec spec;
  spec.name = "pusher";
  spec.state_dim = 4;
  spec.input_dim = 2;
  spec.library = Library({"x", "y", "px", "py"}, {"x", "y", "px", "py", "x^2", "y^2", "px^2", "py^2", "x*y",
                                                  "px*py", "x*px", "y*py"});
  spec.parameters = {{"mass", kMass},
                     {"table_damping", kTable},
                     {"wall_stiffness", kWallStiffness},
                     {"wall_damping", kWallDamping},
                     {"restitution", kRestitution}};
  MatrixXd g = MatrixXd::Zero(4, 2);
  g(2, 0) = 1.0;
  g(3, 1) = 1.0;

  ModeLaw free;
  free.name = "free_slide";
  free.J = canonical_j(2);
  free.R = diag({0.0, 0.0, kTable, kTable});
  free.G = g;
  free.Sigma = diag({0.0, 0.0, 0.05 * 0.05, 0.05 * 0.05});
  free.xi = coefficients(spec.library, {{"px^2", 0.5 / kMass}, {"py^2", 0.5 / kMass}});

  ModeLaw wall = free;
  wall.name = "wall_contact";
  wall.R = diag({0.0, 0.0, kTable, kTable + kWallDamping});
  wall.xi = coefficients(spec.library,
                         {{"px^2", 0.5 / kMass}, {"py^2", 0.5 / kMass}, {"y^2", 0.5 * kWallStiffness}});
  wall.contact = true;
  spec.modes = {free, wall};

  spec.guards.push_back({"wall_impact", 0, 1,
                         [](const VectorXd& z, const VectorXd&) { return z(1); },
                         [](const VectorXd& z) {
                           VectorXd out = z;
                           out(1) = 0.0;
                           out(3) *= kRestitution;
                           return out;
                         },
                         0.002});
  spec.guards.push_back({"wall_release", 1, 0,
                         [](const VectorXd& z, const VectorXd&) { return -z(1); },
                         [](const VectorXd& z) { return z; }, 0.002});

  const int ipx = spec.library.index_of("px^2");
  const int ipy = spec.library.index_of("py^2");
  const int iyy = spec.library.index_of("y^2");
  spec.constants = {
      {"mass_x", 0, kMass, [ipx](const VectorXd& xi) { return 0.5 / xi(ipx); }},
      {"mass_y", 0, kMass, [ipy](const VectorXd& xi) { return 0.5 / xi(ipy); }},
      {"mass_y", 1, kMass, [ipy](const VectorXd& xi) { return 0.5 / xi(ipy); }},
      {"wall_stiffness", 1, kWallStiffness, [iyy](const VectorXd& xi) { return 2.0 * xi(iyy); }},
  };
  spec.velocity_maps = {{0, 2, kMass}, {1, 3, kMass}};
  spec.position_coords = {0, 1};
  spec.z0 = (VectorXd(4) << 0.0, 0.3, 0.5, 0.0).finished();
  spec.s0 = 0;
  spec.actions = [](int steps, double dt, Rng& rng) {
    const double phase_x = uniform_phase(rng);
    const double phase_y = uniform_phase(rng);
    MatrixXd a(steps, 2);
    for (int k = 0; k < steps; ++k) {
      const double t = k * dt;
      a(k, 0) = 0.8 * std::sin(2.0 * std::numbers::pi * 0.4 * t + phase_x);
      a(k, 1) = -0.8 + 1.6 * std::sin(2.0 * std::numbers::pi * 0.6 * t + phase_y);
    }
    return a;
  };
  return spec;
}

}  // namespace

std::optional<SystemName> parse_system_name(std::string_view name) {
  if (name == "puck") return SystemName::kPuck;
  if (name == "block") return SystemName::kBlock;
  if (name == "pendulum") return SystemName::kPendulum;
  if (name == "pusher") return SystemName::kPusher;
  return std::nullopt;
}

std::string_view to_string(SystemName name) {
  switch (name) {
    case SystemName::kPuck: return "puck";
    case SystemName::kBlock: return "block";
    case SystemName::kPendulum: return "pendulum";
    case SystemName::kPusher: return "pusher";
  }
  return "unknown";
}

const std::vector<SystemName>& all_systems() {
  static const std::vector<SystemName> names = {SystemName::kPuck, SystemName::kBlock, SystemName::kPendulum,
                                                SystemName::kPusher};
  return names;
}

HybridSystemSpec make_system(SystemName name) {
  switch (name) {
    case SystemName::kPuck: return make_puck();
    case SystemName::kBlock: return make_block();
    case SystemName::kPendulum: return make_pendulum();
    case SystemName::kPusher: return make_pusher();
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown system");
}

HybridSystemSpec make_contact_toy() {
  HybridSystemSpec spec = make_puck_like("contact_toy", 1.0, 10.0, 400.0, 0.8, 2.0, 0.5, 0.2, 0.0);
  spec.dt = 2e-3;
  spec.default_steps = 1000;
  return spec;
}

HybridSystemSpec make_system_by_name(std::string_view name) {
  if (name == "contact_toy") return make_contact_toy();
  const auto parsed = parse_system_name(name);
  require(parsed.has_value(), ErrorCode::kInvalidArgument, "unknown system '" + std::string(name) + "'");
  return make_system(*parsed);
}

HybridSystemSpec with_diffusion_scale(HybridSystemSpec spec, double scale) {
  for (auto& m : spec.modes) m.Sigma *= scale;
  return spec;
}

namespace {

MatrixXd psd_sqrt(const MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (sigma + sigma.transpose()));
  const VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace

Trajectory simulate(const HybridSystemSpec& spec, const VectorXd& z0, int s0, const MatrixXd& actions,
                    int steps, std::uint64_t seed) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "simulate: steps must be >= 1");
  require(spec.dt > 0.0, ErrorCode::kInvalidArgument, "simulate: dt must be positive");
  require(actions.rows() == steps && actions.cols() == spec.input_dim, ErrorCode::kDimensionMismatch,
          "simulate: actions must be steps x input_dim");
  require(z0.size() == spec.state_dim, ErrorCode::kDimensionMismatch, "simulate: z0 dimension");
  require(s0 >= 0 && s0 < spec.mode_count(), ErrorCode::kInvalidArgument, "simulate: s0 out of range");

  std::vector<MatrixXd> noise_roots;
  for (const auto& m : spec.modes) noise_roots.push_back(psd_sqrt(m.Sigma));

  Rng rng(seed);
  const int T = steps + 1;
  const double dt = spec.dt;
  Trajectory traj;
  traj.times.resize(T);
  traj.states.resize(T, spec.state_dim);
  traj.modes.resize(static_cast<std::size_t>(T));
  traj.actions.resize(T, spec.input_dim);
  traj.derivatives.resize(T, spec.state_dim);

  VectorXd z = z0;
  int s = s0;
  traj.states.row(0) = z.transpose();
  traj.modes[0] = s;
  traj.times(0) = 0.0;
  for (int k = 0; k < steps; ++k) {
    const VectorXd a = actions.row(k).transpose();
    const VectorXd noise = standard_normal(spec.state_dim, rng);
    const VectorXd z_end =
        z + dt * spec.vector_field(s, z, a) + std::sqrt(dt) * noise_roots[static_cast<std::size_t>(s)] * noise;
    VectorXd z_next = z_end;
    for (const auto& guard : spec.guards) {
      if (guard.from != s || !(guard.value(z_end, a) < 0.0)) continue;
      double tau = 0.0;
      VectorXd z_cross = z;
      const double g_start = guard.value(z, a);
      if (!(g_start < 0.0)) {
        // One bisection halves the bracket, then the crossing is placed by
        // linear interpolation of the guard value inside it.
        const VectorXd mid = z + 0.5 * (z_end - z);
        const double g_mid = guard.value(mid, a);
        const bool first_half = g_mid < 0.0;
        const VectorXd& lo = first_half ? z : mid;
        const VectorXd& hi = first_half ? mid : z_end;
        const double g_lo = first_half ? g_start : g_mid;
        const double g_hi = first_half ? g_mid : guard.value(z_end, a);
        const double theta = std::clamp(g_lo / (g_lo - g_hi), 0.0, 1.0);
        z_cross = lo + theta * (hi - lo);
        tau = dt * ((first_half ? 0.0 : 0.5) + 0.5 * theta);
      }
      const VectorXd z_plus = guard.reset(z_cross);
      traj.switches.push_back({k, s, guard.to, spec.energy(s, z_cross), spec.energy(guard.to, z_plus)});
      s = guard.to;
      z_next = z_plus;
      const double remaining = dt - tau;
      if (remaining > 0.0) {
        const VectorXd fresh = standard_normal(spec.state_dim, rng);
        z_next += remaining * spec.vector_field(s, z_plus, a) +
                  std::sqrt(remaining) * noise_roots[static_cast<std::size_t>(s)] * fresh;
      }
      break;
    }
    require(z_next.allFinite() && z_next.cwiseAbs().maxCoeff() < 1e150, ErrorCode::kNonFiniteState,
            "state left the representable range at step " + std::to_string(k + 1));
    z = z_next;
    traj.states.row(k + 1) = z.transpose();
    traj.modes[static_cast<std::size_t>(k + 1)] = s;
    traj.times(k + 1) = (k + 1) * dt;
  }
  for (int t = 0; t < T; ++t) {
    traj.actions.row(t) = actions.row(std::min(t, steps - 1));
    traj.derivatives.row(t) =
        spec.vector_field(traj.modes[static_cast<std::size_t>(t)], traj.states.row(t).transpose(),
                          traj.actions.row(t).transpose())
            .transpose();
  }
  return traj;
}

Trajectory simulate_default(const HybridSystemSpec& spec, int steps, std::uint64_t seed) {
  const MatrixXd actions = spec.sample_actions(steps, SeedKey(seed).with("actions").seed());
  return simulate(spec, spec.z0, spec.s0, actions, steps, seed);
}

double ObservationSequence::unobserved_fraction() const {
  if (missing.empty()) return 0.0;
  int count = 0;
  for (int t = 0; t < length(); ++t) count += available(t) ? 0 : 1;
  return static_cast<double>(count) / static_cast<double>(length());
}

ObservationSequence corrupt(const Trajectory& traj, const CorruptionConfig& cfg, std::uint64_t seed) {
  require(cfg.obs_noise_std >= 0.0 && cfg.der_noise_std >= 0.0, ErrorCode::kInvalidArgument,
          "corrupt: noise stds must be nonnegative");
  require(cfg.missing_rate >= 0.0 && cfg.missing_rate < 1.0, ErrorCode::kInvalidArgument,
          "corrupt: missing rate must lie in [0,1)");
  require(cfg.mode_flip_prob >= 0.0 && cfg.mode_flip_prob <= 1.0, ErrorCode::kInvalidArgument,
          "corrupt: mode flip probability must lie in [0,1]");
  const int T = traj.length();
  const auto d = traj.states.cols();
  ObservationSequence obs;
  obs.times = traj.times;
  obs.observed_coords = cfg.observed_coords;
  if (obs.observed_coords.empty()) {
    for (int j = 0; j < d; ++j) obs.observed_coords.push_back(j);
  }
  const auto r = static_cast<Eigen::Index>(obs.observed_coords.size());
  obs.values.resize(T, r);
  obs.derivatives.resize(T, d);
  obs.missing.assign(static_cast<std::size_t>(T), 0);
  obs.occluded.assign(static_cast<std::size_t>(T), 0);
  obs.mode_labels = traj.modes;
  obs.obs_noise_std = cfg.obs_noise_std;
  obs.der_noise_std = cfg.der_noise_std;
  obs.mode_flip_prob = cfg.mode_flip_prob;

  const SeedKey key(seed);
  Rng noise_rng = key.with("observation_noise").rng();
  Rng deriv_rng = key.with("derivative_noise").rng();
  Rng missing_rng = key.with("missing").rng();
  Rng flip_rng = key.with("mode_flips").rng();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int mode_count = 1;
  for (int m : traj.modes) mode_count = std::max(mode_count, m + 1);

  for (int t = 0; t < T; ++t) {
    const bool drop = unit(missing_rng) < cfg.missing_rate;
    obs.missing[static_cast<std::size_t>(t)] = drop ? 1 : 0;
    for (Eigen::Index j = 0; j < r; ++j) {
      const double noisy = traj.states(t, obs.observed_coords[static_cast<std::size_t>(j)]) +
                           cfg.obs_noise_std * normal(noise_rng);
      obs.values(t, j) = drop ? nan : noisy;
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      const double noisy = traj.derivatives(t, j) + cfg.der_noise_std * normal(deriv_rng);
      obs.derivatives(t, j) = drop ? nan : noisy;
    }
    if (mode_count > 1 && unit(flip_rng) < cfg.mode_flip_prob) {
      const int shift = 1 + static_cast<int>(unit(flip_rng) * (mode_count - 1));
      auto& label = obs.mode_labels[static_cast<std::size_t>(t)];
      label = (label + std::min(shift, mode_count - 1)) % mode_count;
    }
  }
  return obs;
}

ObservationSequence occlude(const ObservationSequence& obs, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument, "occlude: rate must lie in [0,1)");
  ObservationSequence out = obs;
  Rng rng(SeedKey(seed).with("occlusion").seed());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& flag : out.occluded) {
    if (unit(rng) < rate) flag = 1;
  }
  return out;
}

namespace {

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.precision(12);
  return out;
}

}  // namespace

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  auto out = open_for_write(path);
  const auto d = traj.states.cols();
  const auto q = traj.actions.cols();
  out << "t,s";
  for (Eigen::Index j = 1; j <= d; ++j) out << ",z_" << j;
  for (Eigen::Index j = 1; j <= q; ++j) out << ",a_" << j;
  for (Eigen::Index j = 1; j <= d; ++j) out << ",zdot_" << j;
  out << '\n';
  for (int t = 0; t < traj.length(); ++t) {
    out << traj.times(t) << ',' << traj.modes[static_cast<std::size_t>(t)] + 1;
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << traj.states(t, j);
    for (Eigen::Index j = 0; j < q; ++j) out << ',' << traj.actions(t, j);
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << traj.derivatives(t, j);
    out << '\n';
  }
  require(out.good(), ErrorCode::kIo, "write failed for '" + path + "'");
}

void write_observations_csv(const ObservationSequence& obs, const std::string& path) {
  auto out = open_for_write(path);
  const auto r = obs.values.cols();
  out << "t,observed";
  for (Eigen::Index j = 1; j <= r; ++j) out << ",o_" << j;
  out << '\n';
  for (int t = 0; t < obs.length(); ++t) {
    const bool seen = obs.available(t);
    out << obs.times(t) << ',' << (seen ? 1 : 0);
    for (Eigen::Index j = 0; j < r; ++j) {
      out << ',';
      if (seen) out << obs.values(t, j);
    }
    out << '\n';
  }
  require(out.good(), ErrorCode::kIo, "write failed for '" + path + "'");
}

std::string system_manifest(const HybridSystemSpec& spec) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema"] = "phmix.system_manifest";
  j["schema_version"] = 1;
  j["system"] = spec.name;
  j["system_version"] = spec.version;
  j["M"] = spec.mode_count();
  j["d"] = spec.state_dim;
  j["q"] = spec.input_dim;
  j["p"] = spec.library.size();
  j["k"] = spec.max_sparsity();
  j["dt"] = spec.dt;
  j["coordinates"] = spec.library.coord_names();
  std::vector<std::string> ids;
  for (int i = 0; i < spec.library.size(); ++i) ids.push_back(spec.library.term(i).id());
  j["library"] = ids;
  j["parameters"] = spec.parameters;
  ordered_json modes = ordered_json::array();
  for (int s = 0; s < spec.mode_count(); ++s) {
    const ModeLaw& m = spec.mode(s);
    ordered_json mj;
    mj["index"] = s + 1;
    mj["name"] = m.name;
    mj["contact"] = m.contact;
    mj["identifiable"] = m.identifiable;
    ordered_json support = ordered_json::array();
    ordered_json xi = ordered_json::object();
    for (int idx : spec.support(s)) {
      support.push_back(ids[static_cast<std::size_t>(idx)]);
      xi[ids[static_cast<std::size_t>(idx)]] = m.xi(idx);
    }
    mj["support"] = support;
    mj["xi"] = xi;
    mj["energy_offset"] = m.energy_offset;
    modes.push_back(mj);
  }
  j["modes"] = modes;
  ordered_json guards = ordered_json::array();
  for (const auto& g : spec.guards) {
    guards.push_back({{"name", g.name},
                      {"from", spec.mode(g.from).name},
                      {"to", spec.mode(g.to).name}});
  }
  j["guards"] = guards;
  ordered_json constants = ordered_json::array();
  for (const auto& c : spec.constants) {
    constants.push_back({{"name", c.name}, {"mode", spec.mode(c.mode).name}, {"value", c.truth}});
  }
  j["physical_constants"] = constants;
  j["vf_nrmse_normalizer"] = "range (max - min) of the true vector field entries over the fitted samples";
  return j.dump(2);
}

}  // namespace phmix
