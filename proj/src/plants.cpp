#include "mpctune/plants.hpp"

#include <cmath>
#include <string>

#include "mpctune/errors.hpp"

namespace mpctune {

void PlantDef::validate() const {
  const bool cont = static_cast<bool>(continuous_rhs);
  const bool disc = static_cast<bool>(discrete_map);
  if (cont == disc) throw Error(ErrorCode::InvalidArgs, "plant needs exactly one of continuous_rhs/discrete_map");
  if (cont && !(dt > 0)) throw Error(ErrorCode::InvalidArgs, "continuous plant needs dt > 0");
  if (n_x <= 0 || n_u <= 0 || n_d < 0 || n_w < 0) throw Error(ErrorCode::InvalidArgs, "bad plant dimensions");
}

void CartPendulumParams::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgs, "cart-pendulum: " + m); };
  if (!(mass > 0) || !(inertia > 0) || !(coupling > 0)) fail("mass, inertia and coupling must be positive");
  if (!(mass * inertia > coupling * coupling)) {
    throw Error(ErrorCode::SingularMass, "cart-pendulum: need mass·inertia > coupling²");
  }
  if (!(gravity >= 0) || !(angle_window > 0) || !(dt > 0)) fail("gravity, angle window and dt must be positive");
}

namespace {

struct Trig {
  double s, c;
  bool inside;
};

Trig windowed_trig(double phi, double window) {
  if (std::abs(phi) <= window) return {std::sin(phi), std::cos(phi), true};
  return {0.0, 0.0, false};
}

struct Physical {
  double m, J, mu;
};

Physical perturbed(const CartPendulumParams& p, const Vector& d) {
  Physical q{p.mass, p.inertia, p.coupling};
  if (d.size() >= 1) q.m *= 1.0 + d(0);
  if (d.size() >= 2) q.J *= 1.0 + d(1);
  if (d.size() >= 3) q.mu *= 1.0 + d(2);
  return q;
}

}  // namespace

Vector cartpole_rhs(const CartPendulumParams& p, const Vector& x, const Vector& u, const Vector& d) {
  const auto [m, J, mu] = perturbed(p, d);
  const double phi = x(2), dphi = x(3);
  const auto [s, c, inside] = windowed_trig(phi, p.angle_window);
  const double den = m * J - mu * mu * c * c;
  if (!(den > 0)) throw Error(ErrorCode::SingularMass, "mJ − μ²cos²φ must be positive");
  const double force = u(0) + mu * dphi * dphi * s;
  Vector xd(4);
  xd(0) = x(1);
  xd(1) = (J * force - mu * mu * p.gravity * s * c) / den;
  xd(2) = dphi;
  xd(3) = (m * mu * p.gravity * s - mu * c * force) / den;
  return xd;
}

std::pair<Matrix, Matrix> cartpole_rhs_jacobian(const CartPendulumParams& p, const Vector& x, const Vector& u,
                                                const Vector& d) {
  const auto [m, J, mu] = perturbed(p, d);
  const double phi = x(2), dphi = x(3);
  const auto [s, c, inside] = windowed_trig(phi, p.angle_window);
  // outside the window the trig functions are constant zero
  const double ds = inside ? c : 0.0;
  const double dc = inside ? -s : 0.0;
  const double g = p.gravity;

  const double den = m * J - mu * mu * c * c;
  if (!(den > 0)) throw Error(ErrorCode::SingularMass, "mJ − μ²cos²φ must be positive");
  const double dden = -2.0 * mu * mu * c * dc;
  const double force = u(0) + mu * dphi * dphi * s;
  const double dforce_dphi = mu * dphi * dphi * ds;
  const double dforce_ddphi = 2.0 * mu * dphi * s;

  const double num_x = J * force - mu * mu * g * s * c;
  const double num_p = m * mu * g * s - mu * c * force;
  const double dnum_x_dphi = J * dforce_dphi - mu * mu * g * (ds * c + s * dc);
  const double dnum_p_dphi = m * mu * g * ds - mu * (dc * force + c * dforce_dphi);

  Matrix A = Matrix::Zero(4, 4);
  Matrix B = Matrix::Zero(4, 1);
  A(0, 1) = 1.0;
  A(2, 3) = 1.0;
  A(1, 2) = (dnum_x_dphi * den - num_x * dden) / (den * den);
  A(1, 3) = J * dforce_ddphi / den;
  A(3, 2) = (dnum_p_dphi * den - num_p * dden) / (den * den);
  A(3, 3) = -mu * c * dforce_ddphi / den;
  B(1, 0) = J / den;
  B(3, 0) = -mu * c / den;
  return {A, B};
}

PlantDef make_cart_pendulum(const CartPendulumParams& p, JacobianMode mode) {
  p.validate();
  PlantDef plant;
  plant.name = "cart_pendulum";
  plant.n_x = 4;
  plant.n_u = 1;
  plant.n_d = 3;
  plant.n_w = 4;
  plant.dt = p.dt;
  plant.jacobian_mode = mode;
  plant.continuous_rhs = [p](const Vector& x, const Vector& u, const Vector& d) { return cartpole_rhs(p, x, u, d); };
  plant.continuous_jacobian = [p](const Vector& x, const Vector& u, const Vector& d) {
    return cartpole_rhs_jacobian(p, x, u, d);
  };
  plant.outside_smooth_region = [window = p.angle_window](const Vector& x) { return std::abs(x(2)) > window; };
  return plant;
}

PlantDef make_linear_plant(const Matrix& A, const Matrix& B) {
  if (A.rows() != A.cols() || B.rows() != A.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "linear plant needs square A and B with matching rows");
  }
  PlantDef plant;
  plant.name = "linear";
  plant.n_x = static_cast<int>(A.rows());
  plant.n_u = static_cast<int>(B.cols());
  plant.n_d = 0;
  plant.n_w = static_cast<int>(A.rows());
  plant.discrete_map = [A, B](const Vector& x, const Vector& u, const Vector&) -> Vector { return A * x + B * u; };
  plant.discrete_jacobian = [A, B](const Vector&, const Vector&, const Vector&) { return std::make_pair(A, B); };
  return plant;
}

Vector rk4_step(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d) {
  const double h = plant.dt;
  const auto& f = plant.continuous_rhs;
  const Vector k1 = f(x, u, d);
  const Vector k2 = f(x + 0.5 * h * k1, u, d);
  const Vector k3 = f(x + 0.5 * h * k2, u, d);
  const Vector k4 = f(x + h * k3, u, d);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vector plant_step(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d) {
  if (plant.is_continuous()) return rk4_step(plant, x, u, d);
  return plant.discrete_map(x, u, d);
}

namespace {

PlantJacobians rk4_jacobians(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d) {
  const double h = plant.dt;
  const auto& f = plant.continuous_rhs;
  const auto& jac = plant.continuous_jacobian;
  const Index n = x.size();
  const Matrix I = Matrix::Identity(n, n);

  const Vector k1 = f(x, u, d);
  const auto [A1, B1] = jac(x, u, d);
  const Matrix K1x = A1, K1u = B1;

  const Vector x2 = x + 0.5 * h * k1;
  const Vector k2 = f(x2, u, d);
  const auto [A2, B2] = jac(x2, u, d);
  const Matrix K2x = A2 * (I + 0.5 * h * K1x);
  const Matrix K2u = A2 * (0.5 * h * K1u) + B2;

  const Vector x3 = x + 0.5 * h * k2;
  const auto [A3, B3] = jac(x3, u, d);
  const Matrix K3x = A3 * (I + 0.5 * h * K2x);
  const Matrix K3u = A3 * (0.5 * h * K2u) + B3;

  const Vector k3 = f(x3, u, d);
  const Vector x4 = x + h * k3;
  const auto [A4, B4] = jac(x4, u, d);
  const Matrix K4x = A4 * (I + h * K3x);
  const Matrix K4u = A4 * (h * K3u) + B4;

  return {I + (h / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x), (h / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)};
}

PlantJacobians finite_difference_jacobians(const PlantDef& plant, const Vector& x, const Vector& u,
                                           const Vector& d) {
  const double step = 1e-6 * (1.0 + x.norm());
  PlantJacobians out{Matrix(x.size(), x.size()), Matrix(x.size(), u.size())};
  for (Index j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp(j) += step;
    xm(j) -= step;
    out.dfdx.col(j) = (plant_step(plant, xp, u, d) - plant_step(plant, xm, u, d)) / (2.0 * step);
  }
  for (Index j = 0; j < u.size(); ++j) {
    Vector up = u, um = u;
    up(j) += step;
    um(j) -= step;
    out.dfdu.col(j) = (plant_step(plant, x, up, d) - plant_step(plant, x, um, d)) / (2.0 * step);
  }
  return out;
}

}  // namespace

PlantJacobians plant_jacobians(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d,
                               JacobianMode mode) {
  if (mode == JacobianMode::FiniteDifference) return finite_difference_jacobians(plant, x, u, d);
  if (plant.is_continuous()) {
    if (!plant.continuous_jacobian) return finite_difference_jacobians(plant, x, u, d);
    return rk4_jacobians(plant, x, u, d);
  }
  if (!plant.discrete_jacobian) return finite_difference_jacobians(plant, x, u, d);
  auto [A, B] = plant.discrete_jacobian(x, u, d);
  return {std::move(A), std::move(B)};
}

PlantJacobians plant_jacobians(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d) {
  return plant_jacobians(plant, x, u, d, plant.jacobian_mode);
}

void ScenarioSpec::validate() const {
  auto check = [](const std::vector<Interval>& box, const char* what) {
    for (const auto& iv : box) {
      if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.lo > iv.hi) {
        throw Error(ErrorCode::InvalidArgs, std::string(what) + ": intervals must be finite with lo ≤ hi");
      }
    }
  };
  check(noise_box, "noise box");
  check(d_box, "model-parameter box");
  check(x0_perturb, "initial-state box");
  if (x0_perturb.size() != static_cast<std::size_t>(x0_mean.size())) {
    throw Error(ErrorCode::DimensionMismatch, "initial-state box must match the mean state");
  }
  if (T < 0) throw Error(ErrorCode::InvalidArgs, "horizon T must be nonnegative");
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  const std::uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  const std::uint64_t bits = splitmix64(key + counter * 0x9e3779b97f4a7c15ULL);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

Scenario sample_scenario(const ScenarioSpec& spec, std::int64_t id) {
  const auto stream = static_cast<std::uint64_t>(id);
  std::uint64_t counter = 0;
  auto draw = [&](const Interval& iv) {
    const double r = uniform01(spec.seed, stream, counter++);
    return iv.lo == iv.hi ? iv.lo : iv.lo + (iv.hi - iv.lo) * r;
  };
  Scenario s;
  s.id = id;
  s.d.resize(static_cast<Index>(spec.d_box.size()));
  for (Index i = 0; i < s.d.size(); ++i) s.d(i) = draw(spec.d_box[i]);
  s.x0 = spec.x0_mean;
  for (Index i = 0; i < s.x0.size(); ++i) s.x0(i) += draw(spec.x0_perturb[i]);
  const auto n_w = static_cast<Index>(spec.noise_box.size());
  s.w.resize(spec.T, n_w);
  for (Index t = 0; t < spec.T; ++t)
    for (Index i = 0; i < n_w; ++i) s.w(t, i) = draw(spec.noise_box[i]);
  return s;
}

std::vector<Scenario> sample_dataset(const ScenarioSpec& spec, std::int64_t M) {
  if (M < 1) throw Error(ErrorCode::InvalidArgs, "dataset size must be at least 1");
  spec.validate();
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(M));
  for (std::int64_t j = 0; j < M; ++j) out.push_back(sample_scenario(spec, j));
  return out;
}

Scenario nominal_scenario(const ScenarioSpec& spec, int n_d) {
  Scenario s;
  s.id = -1;
  s.d = Vector::Zero(n_d);
  s.x0 = spec.x0_mean;
  s.w = Matrix::Zero(spec.T, static_cast<Index>(spec.noise_box.size()));
  return s;
}

}  // namespace mpctune
