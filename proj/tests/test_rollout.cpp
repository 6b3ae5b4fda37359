#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mpctune/rollout.hpp"

using namespace mpctune;

namespace {

CartPendulumParams test_params() {
  CartPendulumParams cp;
  cp.mass = 0.6;
  cp.inertia = 0.0013333333333333333;
  cp.coupling = 0.01;
  return cp;
}

MPCModel<double> cart_model(const PlantDef& plant) {
  const auto jac = plant_jacobians(plant, Vector::Zero(4), Vector::Zero(1), Vector::Zero(3));
  MPCModel<double> m;
  m.A = jac.dfdx;
  m.B = jac.dfdu;
  m.Q_x = Vector{{1.0, 0.001, 1.0, 0.001}}.asDiagonal();
  m.H_x = Matrix{{0, 0, 1, 0}, {0, 0, -1, 0}, {0, 1, 0, 0}, {0, -1, 0, 0}};
  m.h_x = Vector{{0.2, 0.2, 0.8, 0.8}};
  m.H_u = Matrix{{1}, {-1}};
  m.h_u = Vector{{0.75, 0.75}};
  m.soft_weight_l1 = 1000.0;
  m.soft_weight_l2 = 0.01;
  m.N = 5;
  return m;
}

Scenario cart_scenario(int T, const Vector& x0, std::int64_t id = 0) {
  Scenario s;
  s.id = id;
  s.x0 = x0;
  s.d = Vector::Zero(3);
  s.w = Matrix::Zero(T, 4);
  return s;
}

/// Number of active rows summed over the trajectory if every MPC solve has λ_i > δ or
/// slack_i < −δ on each inequality, −1 otherwise.
int strictly_complementary(const MPCModel<double>& model, const ThetaParams<double>& theta,
                           const TrajectoryBundle& b, double delta) {
  int active = 0;
  for (int t = 0; t < b.horizon(); ++t) {
    const Vector x = b.states.row(t).transpose();
    const auto qp = condense(model, theta, x);
    const auto sol = solve_qp(qp);
    const Vector slack = qp.G * sol.y - qp.g;
    for (Index i = 0; i < slack.size(); ++i) {
      if (!(sol.lambda(i) > delta || slack(i) < -delta)) return -1;
      active += sol.lambda(i) > delta ? 1 : 0;
    }
  }
  return active;
}

ThetaParams<double> perturbed(const ThetaParams<double>& base, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Vector v = base.to_vector();
  for (Index i = 0; i < v.size(); ++i) v(i) += scale * U(rng);
  return ThetaParams<double>::from_vector(base.layout(), v);
}

/// Central differences of the whole state trajectory, one column per θ coordinate.
std::vector<Matrix> fd_states(const MPCModel<double>& model, const ThetaParams<double>& theta, const PlantDef& plant,
                              const Scenario& s, double h) {
  const Vector v = theta.to_vector();
  const int T = static_cast<int>(s.w.rows());
  std::vector<Matrix> out(T + 1, Matrix::Zero(model.n_x(), v.size()));
  for (Index j = 0; j < v.size(); ++j) {
    Vector vp = v, vm = v;
    vp(j) += h;
    vm(j) -= h;
    const auto bp = simulate(model, ThetaParams<double>::from_vector(theta.layout(), vp), plant, s);
    const auto bm = simulate(model, ThetaParams<double>::from_vector(theta.layout(), vm), plant, s);
    for (int t = 0; t <= T; ++t) out[t].col(j) = (bp.states.row(t) - bm.states.row(t)).transpose() / (2 * h);
  }
  return out;
}

}  // namespace

TEST(Rollout, PenaltyGamma) {
  const Matrix H = Matrix::Identity(2, 2);
  EXPECT_EQ(penalty_gamma(H, Vector{{1.0, 1.0}}, Vector{{0.5, -3.0}}), 0.0);
  EXPECT_EQ(penalty_gamma(Matrix::Identity(1, 1), Vector{{1.0}}, Vector{{2.0}}), 1.0);
  EXPECT_NEAR(penalty_gamma(H, Vector{{1.0, 1.0}}, Vector{{1.2, 1.3}}), 0.5, 1e-15);
  EXPECT_EQ(penalty_gamma(Matrix(0, 2), Vector(0), Vector{{5.0, 5.0}}), 0.0);
}

TEST(Rollout, OriginIsFixedPoint) {
  const auto plant = make_cart_pendulum(test_params());
  const auto model = cart_model(plant);
  const auto theta = riccati_theta(model, 1.0);
  const auto b = simulate(model, theta, plant, cart_scenario(15, Vector::Zero(4)));
  EXPECT_EQ(b.states.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(b.stage_costs.sum(), 0.0);
  EXPECT_EQ(b.gammas.sum(), 0.0);
}

TEST(Rollout, HugeInputWeightFollowsOpenLoop) {
  const Matrix A{{0.9, 0.2}, {-0.1, 0.95}};
  const Matrix B{{0.0}, {1.0}};
  const auto plant = make_linear_plant(A, B);
  MPCModel<double> m;
  m.A = A;
  m.B = B;
  m.Q_x = Matrix::Identity(2, 2);
  m.H_x = Matrix{{1, 0}};
  m.h_x = Vector{{10.0}};
  m.H_u = Matrix{{1}, {-1}};
  m.h_u = Vector{{5.0, 5.0}};
  m.N = 4;
  auto theta = ThetaParams<double>::initial(m);
  theta.L_R(0, 0) = 1e4;
  Scenario s;
  s.x0 = Vector{{1.0, -0.5}};
  s.w = Matrix::Zero(12, 2);
  const auto b = simulate(m, theta, plant, s);
  Vector x = s.x0;
  for (int t = 0; t <= 12; ++t) {
    EXPECT_LE((b.states.row(t).transpose() - x).cwiseAbs().maxCoeff(), 1e-6) << "t=" << t;
    x = A * x;
  }
}

TEST(Rollout, StageCostsAndSimulateAgreeWithJacobianRun) {
  const auto plant = make_cart_pendulum(test_params());
  const auto model = cart_model(plant);
  const auto theta = riccati_theta(model, 30.0);
  ScenarioSpec spec;
  spec.noise_box = {{0, 0}, {-0.01, 0.01}, {0, 0}, {-0.1, 0.1}};
  spec.d_box = {{-0.05, 0.05}, {-0.05, 0.05}, {-0.05, 0.05}};
  spec.x0_mean = Vector{{-1.0, 0.0, 0.0, 0.0}};
  spec.x0_perturb = {{0, 0}, {-0.3, 0.3}, {0, 0}, {-0.3, 0.3}};
  spec.T = 20;
  spec.seed = 4;
  const auto s = sample_scenario(spec, 3);
  const auto a = simulate(model, theta, plant, s);
  const auto b = rollout_with_jacobian(model, theta, plant, s);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.states.row(0).transpose(), s.x0);
  EXPECT_EQ(b.jac_states.front().cwiseAbs().maxCoeff(), 0.0);
  for (int t = 0; t <= a.horizon(); ++t) {
    const Vector x = a.states.row(t).transpose();
    EXPECT_NEAR(a.stage_costs(t), x.dot(model.Q_x * x), 1e-14 * (1 + a.stage_costs(t)));
    EXPECT_EQ(a.gammas(t), penalty_gamma(model.H_x, model.h_x, x));
  }
  EXPECT_GT(a.diagnostics.warm_starts, 0);
  EXPECT_LE(a.diagnostics.qp_residuals.maxCoeff(), 1e-9);
  // repeated runs are bitwise identical
  const auto again = simulate(model, theta, plant, s);
  EXPECT_EQ(again.states, a.states);
}

TEST(Rollout, ZeroHorizon) {
  const auto plant = make_cart_pendulum(test_params());
  const auto model = cart_model(plant);
  const auto b = rollout_with_jacobian(model, riccati_theta(model, 1.0), plant, cart_scenario(0, Vector::Ones(4)));
  ASSERT_EQ(b.jac_states.size(), 1u);
  EXPECT_EQ(b.jac_states[0].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(b.jac_states[0].cols(), ThetaLayout::of(model).size());
}

TEST(Rollout, ClosedLoopJacobianMatchesFiniteDifferences) {
  const auto plant = make_cart_pendulum(test_params());
  const auto model = cart_model(plant);
  const auto base = riccati_theta(model, 1.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int checked = 0, with_active = 0;
  for (int trial = 0; trial < 40 && checked < 5; ++trial) {
    const auto theta = perturbed(base, rng, 0.1);
    const Vector x0{{-0.6 + 0.3 * U(rng), 0.2 * U(rng), 0.05 * U(rng), 0.2 * U(rng)}};
    const auto s = cart_scenario(10, x0);
    TrajectoryBundle b;
    try {
      b = rollout_with_jacobian(model, theta, plant, s);
    } catch (const Error&) {
      continue;
    }
    const int active = strictly_complementary(model, theta, b, 1e-5);
    if (active < 0) continue;
    with_active += active > 0 ? 1 : 0;
    const auto fd = fd_states(model, theta, plant, s, 1e-6);
    for (int t = 0; t <= 10; ++t) {
      const double scale = std::max(fd[t].norm(), 1e-8);
      EXPECT_LE((b.jac_states[t] - fd[t]).norm() / scale, 1e-4) << "trial " << trial << " t " << t;
    }
    ++checked;
  }
  EXPECT_GE(checked, 3);
  EXPECT_GE(with_active, 1);
}

TEST(Rollout, NominalLossGradientMatchesFiniteDifferences) {
  const auto plant = make_cart_pendulum(test_params());
  const auto model = cart_model(plant);
  const auto theta = riccati_theta(model, 30.0);
  const auto s = cart_scenario(30, Vector{{-1.5, 0.0, 0.0, 0.0}});
  const auto lg = nominal_loss(rollout_with_jacobian(model, theta, plant, s), model, 40.0);
  const Vector v = theta.to_vector();
  const double h = 1e-6;
  Vector fd(v.size());
  for (Index j = 0; j < v.size(); ++j) {
    auto loss_at = [&](double step) {
      Vector w = v;
      w(j) += step;
      const auto b = simulate(model, ThetaParams<double>::from_vector(theta.layout(), w), plant, s);
      return b.stage_costs.sum() + 40.0 * b.gammas.sum();
    };
    fd(j) = (loss_at(h) - loss_at(-h)) / (2 * h);
  }
  EXPECT_LE((lg.gradient - fd).norm() / fd.norm(), 1e-4);
  EXPECT_GT(fd.norm(), 0.0);
}

TEST(Rollout, LossesOnHandBuiltBundles) {
  MPCModel<double> m;
  m.H_x = Matrix{{1.0}, {-1.0}};
  m.h_x = Vector{{1.0, 2.0}};
  m.Q_x = Matrix::Identity(1, 1);
  m.A = Matrix::Identity(1, 1);
  m.B = Matrix::Identity(1, 1);
  m.H_u = Matrix(0, 1);
  m.h_u = Vector(0);
  m.N = 1;

  auto bundle = [](std::vector<double> xs, std::int64_t id) {
    TrajectoryBundle b;
    b.scenario_id = id;
    b.states.resize(static_cast<Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) b.states(static_cast<Index>(i), 0) = xs[i];
    b.inputs = Matrix::Zero(static_cast<Index>(xs.size()) - 1, 1);
    b.jac_states.assign(xs.size(), Matrix::Ones(1, 2));
    return b;
  };
  // scenario 0 peaks at x = 1.5 (row 0, h = 1); scenario 1 dips to −3 (row 1, h = 2); scenario 2 is clean
  const std::vector<TrajectoryBundle> set{bundle({0.0, 1.5, 1.2}, 0), bundle({-3.0, 0.0, 0.5}, 1),
                                          bundle({0.5, 0.2, -1.0}, 2)};
  const auto vm = violation_metrics(set, m);
  EXPECT_DOUBLE_EQ(vm.ratio, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(vm.total, (0.5 + 1.0) / 3.0);
  EXPECT_DOUBLE_EQ(vm.relative, (0.5 / 1.0 + 1.0 / 2.0) / 2.0);

  const auto clean = violation_metrics(std::span(set).subspan(2), m);
  EXPECT_EQ(clean.ratio, 0.0);
  EXPECT_EQ(clean.total, 0.0);
  EXPECT_EQ(clean.relative, 0.0);

  // single violated row v = 0.5 at one step plus 0.2 at the next, c2 = 0
  const Vector theta{{0.3, -0.1}}, star{{0.0, 0.0}};
  const auto rl = robust_loss(theta, star, std::span(set).first(1), m, 40.0, 0.0);
  EXPECT_NEAR(rl.value, 0.1 + 40.0 * (0.5 + 0.2), 1e-12);
  // J = 1 everywhere, so each violating step contributes c1·H_xᵀ·1 = 40 to both entries
  EXPECT_NEAR(rl.gradient(0), 0.6 + 80.0, 1e-12);
  EXPECT_NEAR(rl.gradient(1), -0.2 + 80.0, 1e-12);
  const auto rl2 = robust_loss(theta, star, std::span(set).first(1), m, 40.0, 10.0);
  EXPECT_NEAR(rl2.value, 0.1 + 40.0 * 0.7 + 10.0 * (0.25 + 0.04), 1e-12);

  EXPECT_TRUE(penalty_subgradient_nonzero(set[0], m));
  EXPECT_FALSE(penalty_subgradient_nonzero(set[2], m));
  // exactly on the boundary: subgradient of max(·,0) at 0 is 0
  EXPECT_FALSE(penalty_subgradient_nonzero(bundle({1.0, -2.0}, 3), m));
  EXPECT_EQ(robust_loss(star, star, std::span(set).subspan(2), m, 40.0, 40.0).value, 0.0);
}
