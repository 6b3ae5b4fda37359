#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "mpctune/plants.hpp"

using namespace mpctune;

namespace {

/// Cart-pendulum from the Lagrangian, solving the 2×2 mass-matrix system directly.
Vector cartpole_oracle(double m, double J, double mu, double g, const Vector& x, double u) {
  const double s = std::sin(x(2)), c = std::cos(x(2));
  Eigen::Matrix2d M;
  M << m, mu * c, mu * c, J;
  const Eigen::Vector2d rhs(u + mu * x(3) * x(3) * s, mu * g * s);
  const Eigen::Vector2d acc = M.partialPivLu().solve(rhs);
  Vector xd(4);
  xd << x(1), acc(0), x(3), acc(1);
  return xd;
}

// Test-only constants; any physically valid triple works for these checks.
CartPendulumParams test_params() {
  CartPendulumParams cp;
  cp.mass = 1.0;
  cp.inertia = 0.025;
  cp.coupling = 0.05;
  return cp;
}

PlantDef scalar_decay() {
  PlantDef p;
  p.name = "decay";
  p.n_x = 1;
  p.n_u = 1;
  p.dt = 0.05;
  p.continuous_rhs = [](const Vector& x, const Vector&, const Vector&) -> Vector { return -x; };
  return p;
}

ScenarioSpec small_spec(std::uint64_t seed) {
  ScenarioSpec s;
  s.noise_box = {{-0.01, 0.01}, {-0.02, 0.02}};
  s.d_box = {{-0.1, 0.1}, {-0.2, 0.2}, {-0.3, 0.3}};
  s.x0_mean = Vector{{0.5, -0.5}};
  s.x0_perturb = {{-0.05, 0.05}, {0.0, 0.0}};
  s.T = 7;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Plants, Rk4ScalarDecay) {
  const auto p = scalar_decay();
  const Vector x1 = rk4_step(p, Vector::Ones(1), Vector::Zero(1), Vector());
  EXPECT_NEAR(x1(0), std::exp(-0.05), 1e-8);
  EXPECT_NEAR(x1(0), 0.951229, 5e-7);
}

TEST(Plants, Rk4IsFourthOrderTaylorOfExpmOnLinearSystems) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> N01;
  Matrix A(3, 3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) A(i, j) = N01(rng);
  PlantDef p;
  p.name = "lti";
  p.n_x = 3;
  p.n_u = 1;
  p.dt = 0.1;
  p.continuous_rhs = [A](const Vector& x, const Vector&, const Vector&) -> Vector { return A * x; };
  const Vector x{{1.0, -2.0, 0.5}};
  Matrix term = Matrix::Identity(3, 3), phi = Matrix::Identity(3, 3);
  for (int k = 1; k <= 4; ++k) {
    term = term * (p.dt * A) / k;
    phi += term;
  }
  EXPECT_LE((rk4_step(p, x, Vector::Zero(1), Vector()) - phi * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Plants, Rk4MatchesMatrixExponential) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    // stable: eigenvalues of −(MᵀM + I)/2 plus a skew part lie in the left half plane
    Matrix M(2, 2), S(2, 2);
    M << U(rng), U(rng), U(rng), U(rng);
    S << 0, U(rng), 0, 0;
    S(1, 0) = -S(0, 1);
    const Matrix A = -0.5 * (M.transpose() * M + Matrix::Identity(2, 2)) + S;
    PlantDef p;
    p.name = "lti";
    p.n_x = 2;
    p.n_u = 1;
    p.dt = 0.05;
    p.continuous_rhs = [A](const Vector& x, const Vector&, const Vector&) -> Vector { return A * x; };
    const Vector x{{U(rng), U(rng)}};
    const Matrix E = (p.dt * A).exp();
    EXPECT_LE((rk4_step(p, x, Vector::Zero(1), Vector()) - E * x).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Plants, CartPendulumMatchesIndependentModel) {
  const auto cp = test_params();
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Vector x{{U(rng), 2 * U(rng), 1.5 * U(rng), 3 * U(rng)}};
    const Vector u{{2 * U(rng)}};
    const Vector d{{0.1 * U(rng), 0.1 * U(rng), 0.1 * U(rng)}};
    const Vector ref = cartpole_oracle(cp.mass * (1 + d(0)), cp.inertia * (1 + d(1)), cp.coupling * (1 + d(2)),
                                       cp.gravity, x, u(0));
    const Vector got = cartpole_rhs(cp, x, u, d);
    EXPECT_LE((got - ref).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + ref.cwiseAbs().maxCoeff())) << i;
  }
}

TEST(Plants, CartPendulumEquilibriumIsExact) {
  const auto cp = test_params();
  const Vector zero = Vector::Zero(4);
  const Vector xd = cartpole_rhs(cp, zero, Vector::Zero(1), Vector::Zero(3));
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(xd(i), 0.0);
  const auto plant = make_cart_pendulum(cp);
  const Vector next = plant_step(plant, zero, Vector::Zero(1), Vector::Zero(3));
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(next(i), 0.0);
}

TEST(Plants, InputResponseAtOrigin) {
  const auto cp = test_params();
  const double den = cp.mass * cp.inertia - cp.coupling * cp.coupling;
  const Vector xd = cartpole_rhs(cp, Vector::Zero(4), Vector::Constant(1, 0.3), Vector::Zero(3));
  EXPECT_DOUBLE_EQ(xd(1), cp.inertia * 0.3 / den);
  EXPECT_DOUBLE_EQ(xd(3), -cp.coupling * 0.3 / den);
}

TEST(Plants, KinematicConsistency) {
  const auto plant = make_cart_pendulum(test_params());
  const Vector x{{0.2, 1.0, 0.05, -1.0}};
  const Vector next = plant_step(plant, x, Vector::Constant(1, 0.1), Vector::Zero(3));
  EXPECT_NEAR(next(0), x(0) + plant.dt * x(1), 1e-3);
}

TEST(Plants, JacobiansDependOnModelParameters) {
  const auto plant = make_cart_pendulum(test_params());
  const Vector x{{0.0, 0.1, 0.1, 0.2}};
  const Vector u{{0.2}};
  const auto j0 = plant_jacobians(plant, x, u, Vector::Zero(3));
  const auto j1 = plant_jacobians(plant, x, u, Vector::Constant(3, 0.05));
  EXPECT_GT((j0.dfdx - j1.dfdx).norm(), 0.0);
}

TEST(Plants, TrigTermsVanishOutsideWindow) {
  const auto cp = test_params();
  const Vector x{{0.0, 0.0, 2.0, 1.0}};
  const Vector xd = cartpole_rhs(cp, x, Vector::Constant(1, 1.0), Vector::Zero(3));
  EXPECT_DOUBLE_EQ(xd(1), 1.0 / cp.mass);
  EXPECT_EQ(xd(3), 0.0);
  EXPECT_TRUE(make_cart_pendulum(cp).outside_smooth_region(x));
}

TEST(Plants, SingularMassIsReported) {
  auto cp = test_params();
  cp.inertia = 1e-4;  // mJ < μ²
  try {
    cartpole_rhs(cp, Vector::Zero(4), Vector::Zero(1), Vector::Zero(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularMass);
  }
  EXPECT_THROW(make_cart_pendulum(cp), Error);
  EXPECT_THROW(make_cart_pendulum(CartPendulumParams{}), Error);
}

TEST(Plants, ContinuousJacobianMatchesFiniteDifferences) {
  const auto cp = test_params();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vector x{{U(rng), U(rng), 1.2 * U(rng), 2 * U(rng)}};
    const Vector u{{U(rng)}};
    const Vector d{{0.1 * U(rng), 0.1 * U(rng), 0.1 * U(rng)}};
    const auto [A, B] = cartpole_rhs_jacobian(cp, x, u, d);
    const double h = 1e-6;
    for (Index j = 0; j < 4; ++j) {
      Vector xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const Vector col = (cartpole_rhs(cp, xp, u, d) - cartpole_rhs(cp, xm, u, d)) / (2 * h);
      EXPECT_LE((A.col(j) - col).cwiseAbs().maxCoeff(), 1e-6 * (1 + col.cwiseAbs().maxCoeff()));
    }
    const Vector bcol = (cartpole_rhs(cp, x, u + Vector::Constant(1, h), d) -
                         cartpole_rhs(cp, x, u - Vector::Constant(1, h), d)) / (2 * h);
    EXPECT_LE((B.col(0) - bcol).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Plants, DiscreteJacobiansAgreeAcrossModes) {
  const auto plant = make_cart_pendulum(test_params());
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vector x{{U(rng), U(rng), U(rng), U(rng)}};
    const Vector u{{U(rng)}};
    const Vector d = Vector::Zero(3);
    const auto an = plant_jacobians(plant, x, u, d, JacobianMode::Analytic);
    const auto fd = plant_jacobians(plant, x, u, d, JacobianMode::FiniteDifference);
    EXPECT_LE((an.dfdx - fd.dfdx).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE((an.dfdu - fd.dfdu).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Plants, LinearPlant) {
  const Matrix A{{1, 1}, {0, 1}};
  const Matrix B{{0.5}, {1}};
  const auto p = make_linear_plant(A, B);
  const Vector x{{1, 2}};
  EXPECT_EQ(plant_step(p, x, Vector::Constant(1, 1.0), Vector()), Vector({{3.5, 3.0}}));
  EXPECT_THROW(make_linear_plant(A, Matrix::Zero(3, 1)), Error);
}

TEST(Sampling, ScenariosAreCounterBased) {
  const auto spec = small_spec(17);
  const auto data = sample_dataset(spec, 20);
  const auto again = sample_dataset(spec, 20);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(data[i].w, again[i].w);
    EXPECT_EQ(data[i].d, again[i].d);
    EXPECT_EQ(data[i].x0, again[i].x0);
  }
  // scenario 13 does not depend on how many were drawn before it
  const auto s13 = sample_scenario(spec, 13);
  EXPECT_EQ(s13.w, data[13].w);
  EXPECT_EQ(s13.d, data[13].d);
  EXPECT_EQ(s13.x0(1), -0.5);  // degenerate interval
  EXPECT_NE(sample_scenario(small_spec(18), 13).w, s13.w);
}

TEST(Sampling, DrawsStayInBoxes) {
  const auto spec = small_spec(5);
  for (const auto& s : sample_dataset(spec, 200)) {
    for (Index i = 0; i < 3; ++i) {
      EXPECT_GE(s.d(i), spec.d_box[i].lo);
      EXPECT_LE(s.d(i), spec.d_box[i].hi);
    }
    EXPECT_LE(s.w.col(1).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_EQ(s.w.rows(), 7);
  }
}

TEST(Sampling, SampleMeansFollowCentralLimit) {
  // mean of n uniforms on [0,1): 1/2 ± sqrt(1/(12 n))
  const int n = 200000;
  for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = uniform01(seed, static_cast<std::uint64_t>(i % 97), static_cast<std::uint64_t>(i / 97));
      ASSERT_GE(r, 0.0);
      ASSERT_LT(r, 1.0);
      sum += r;
      sum2 += r * r;
    }
    const double mean = sum / n;
    EXPECT_LE(std::abs(mean - 0.5), 5.0 * std::sqrt(1.0 / (12.0 * n)));
    EXPECT_NEAR(sum2 / n - mean * mean, 1.0 / 12.0, 2e-3);
  }
}

TEST(Sampling, RejectsEmptyDataset) {
  EXPECT_THROW(sample_dataset(small_spec(1), 0), Error);
  auto bad = small_spec(1);
  bad.d_box[0] = {1.0, -1.0};
  EXPECT_THROW(sample_dataset(bad, 3), Error);
}

TEST(Sampling, NominalScenarioIsNoiseFree) {
  const auto s = nominal_scenario(small_spec(3), 3);
  EXPECT_EQ(s.id, -1);
  EXPECT_EQ(s.w.rows(), 7);
  EXPECT_EQ(s.w.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.d, Vector::Zero(3));
  EXPECT_EQ(s.x0, small_spec(3).x0_mean);
}
