#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mpctune/tuning.hpp"

using namespace mpctune;

namespace {

// Double integrator with |x2| ≤ 1, |u| ≤ 1; the MPC model equals the plant.
struct Instance {
  PlantDef plant;
  MPCModel<double> model;
  ThetaParams<double> theta_star;
};

Instance double_integrator() {
  const Matrix A{{1, 1}, {0, 1}}, B{{0.5}, {1}};
  Instance in;
  in.plant = make_linear_plant(A, B);
  in.model.A = A;
  in.model.B = B;
  in.model.Q_x = Matrix::Identity(2, 2);
  in.model.H_x = Matrix{{0, 1}, {0, -1}};
  in.model.h_x = Vector{{1.0, 1.0}};
  in.model.H_u = Matrix{{1}, {-1}};
  in.model.h_u = Vector{{1.0, 1.0}};
  in.model.N = 5;
  in.theta_star = riccati_theta(in.model, 1.0);
  // tightenings start away from 0, where d(h − η²)/dη vanishes
  in.theta_star.eta_x.setConstant(0.1);
  return in;
}

/// Start at x1 = start; a constant push w on the velocity each step.
Scenario drift(std::int64_t id, double w, double start = -6.0, int T = 15) {
  Scenario s;
  s.id = id;
  s.x0 = Vector{{start, 0.0}};
  s.w = Matrix::Zero(T, 2);
  s.w.col(1).setConstant(w);
  return s;
}

TuneConfig small_cfg() {
  TuneConfig cfg;
  cfg.c = 0.01;
  cfg.max_it = 50;
  return cfg;
}

double gamma_sum(const Instance& in, const ThetaParams<double>& theta, const Scenario& s) {
  return simulate(in.model, theta, in.plant, s).gammas.sum();
}

}  // namespace

TEST(Tuning, StepSizes) {
  TuneConfig cfg;
  EXPECT_DOUBLE_EQ(step_size(1, cfg), 0.1);
  TuneConfig unit;
  unit.c = 1.0;
  unit.zeta = 1.0;
  EXPECT_DOUBLE_EQ(step_size(4, unit), 0.25);
  EXPECT_THROW(step_size(0, cfg), Error);

  // Σ α_k² ≤ c² (1 + 1/(2ζ − 1)) and the tail beyond K₀ is at most c² K₀^{1−2ζ}/(2ζ − 1)
  double s5 = 0.0, s6 = 0.0;
  for (int k = 1; k <= 1000000; ++k) {
    const double a = step_size(k, cfg);
    s6 += a * a;
    if (k == 100000) s5 = s6;
  }
  const double bound = cfg.c * cfg.c * (1.0 + 1.0 / (2 * cfg.zeta - 1));
  EXPECT_LE(s6, bound);
  EXPECT_GT(s6, s5);
  EXPECT_LE(s6 - s5, cfg.c * cfg.c * std::pow(1e5, 1 - 2 * cfg.zeta) / (2 * cfg.zeta - 1));
}

TEST(Tuning, ConfigValidation) {
  TuneConfig cfg;
  cfg.zeta = 0.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.c2 = -1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.tol = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(TuneConfig{}.validate());
}

TEST(Tuning, NominalFixedPointAtOrigin) {
  const auto in = double_integrator();
  Scenario origin;
  origin.x0 = Vector::Zero(2);
  origin.w = Matrix::Zero(10, 2);
  const auto res = tune_nominal(in.theta_star, in.model, in.plant, origin, small_cfg());
  EXPECT_EQ(res.theta.to_vector(), in.theta_star.to_vector());
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 1);
  EXPECT_EQ(res.loss_history.back(), 0.0);
}

TEST(Tuning, NominalSingleStepContract) {
  const auto in = double_integrator();
  auto cfg = small_cfg();
  cfg.tol = std::numeric_limits<double>::infinity();
  const auto s = drift(0, 0.0);
  const auto res = tune_nominal(in.theta_star, in.model, in.plant, s, cfg);
  EXPECT_EQ(res.iterations, 1);
  const auto lg = nominal_loss(rollout_with_jacobian(in.model, in.theta_star, in.plant, s), in.model, cfg.c1);
  const Vector expected =
      project_theta(in.model, Vector(in.theta_star.to_vector() - step_size(1, cfg) * lg.gradient), cfg.theta_box);
  EXPECT_EQ(res.theta.to_vector(), expected);
  EXPECT_EQ(res.loss_history.front(), lg.value);
  EXPECT_EQ(res.loss_history.size(), 2u);

  cfg.nominal_max_it = 0;
  EXPECT_EQ(tune_nominal(in.theta_star, in.model, in.plant, s, cfg).theta.to_vector(), in.theta_star.to_vector());
}

TEST(Tuning, PenalizedSolveContracts) {
  const auto in = double_integrator();
  auto cfg = small_cfg();
  const std::vector<Scenario> clean{drift(0, -0.02), drift(1, -0.01)};
  EXPECT_EQ(solve_penalized(in.theta_star, in.theta_star, clean, in.model, in.plant, cfg).to_vector(),
            in.theta_star.to_vector());

  cfg.max_it = 0;
  auto other = in.theta_star;
  other.L_R(0, 0) = 2.0;
  EXPECT_EQ(solve_penalized(other, in.theta_star, clean, in.model, in.plant, cfg).to_vector(), other.to_vector());

  // single violating scenario with a heavy penalty: the violation shrinks
  cfg = small_cfg();
  cfg.c1 = 400;
  const std::vector<Scenario> bad{drift(2, 0.05)};
  std::vector<double> history;
  const auto tuned = solve_penalized(in.theta_star, in.theta_star, bad, in.model, in.plant, cfg, &history);
  EXPECT_LT(gamma_sum(in, tuned, bad[0]), gamma_sum(in, in.theta_star, bad[0]));
  EXPECT_EQ(history.size(), 50u);

  // iterates stay in the box
  cfg.theta_box = 1.2;
  const Vector v = solve_penalized(in.theta_star, in.theta_star, bad, in.model, in.plant, cfg).to_vector();
  EXPECT_LE(v.cwiseAbs().maxCoeff(), 1.2);
}

TEST(Tuning, PickToLearnImmediateConvergence) {
  const auto in = double_integrator();
  const std::vector<Scenario> data{drift(0, -0.02), drift(1, -0.01), drift(2, -0.03)};
  const auto res = pick2learn(in.theta_star, data, in.model, in.plant, small_cfg());
  EXPECT_TRUE(res.support.empty());
  EXPECT_EQ(res.iterations, 0);
  EXPECT_TRUE(res.certifiable);
  EXPECT_EQ(res.theta_tilde.to_vector(), in.theta_star.to_vector());
}

TEST(Tuning, PickToLearnSingleViolatingScenario) {
  const auto in = double_integrator();
  const std::vector<Scenario> data{drift(0, -0.02), drift(1, -0.01), drift(7, 0.05), drift(3, -0.03), drift(4, 0.0)};
  std::vector<std::vector<std::int64_t>> trace;
  P2LOptions opts;
  opts.on_iteration = [&](const P2LState& s) { trace.push_back(s.training); };
  const auto res = pick2learn(in.theta_star, data, in.model, in.plant, small_cfg(), opts);
  ASSERT_EQ(res.support.size(), 1u);
  EXPECT_EQ(res.support[0], 7);
  EXPECT_TRUE(res.certifiable);
  EXPECT_TRUE(res.infeasible_ids.empty());
  // one selection, then the converged pass
  ASSERT_EQ(trace.size(), 2u);
  EXPECT_EQ(trace[0], std::vector<std::int64_t>{7});
  for (const auto& s : data) EXPECT_EQ(gamma_sum(in, res.theta_tilde, s), 0.0) << "scenario " << s.id;
}

TEST(Tuning, PickToLearnTieBreaksByLowestId) {
  const auto in = double_integrator();
  // identical violating scenarios: the lower id is picked first
  const std::vector<Scenario> data{drift(9, 0.05), drift(5, 0.05), drift(6, -0.02)};
  const auto res = pick2learn(in.theta_star, data, in.model, in.plant, small_cfg());
  ASSERT_FALSE(res.support.empty());
  EXPECT_EQ(res.support[0], 5);
}

TEST(Tuning, PickToLearnDeterminismSupportAndResume) {
  const auto in = double_integrator();
  std::vector<Scenario> data;
  // even ids approach from the left and load the upper speed bound, odd ids the lower one
  const double pushes[] = {0.02, -0.01, 0.08, -0.06, 0.05, 0.02, 0.11, -0.03};
  for (int i = 0; i < 8; ++i) data.push_back(drift(i, pushes[i], i % 2 == 0 ? -6.0 : 6.0));
  auto cfg = small_cfg();
  cfg.c1 = 200;

  std::vector<P2LState> states;
  P2LOptions opts;
  opts.on_iteration = [&](const P2LState& s) { states.push_back(s); };
  const auto a = pick2learn(in.theta_star, data, in.model, in.plant, cfg, opts);
  const auto b = pick2learn(in.theta_star, data, in.model, in.plant, cfg);
  EXPECT_EQ(a.support, b.support);
  EXPECT_EQ(a.theta_tilde.to_vector(), b.theta_tilde.to_vector());
  ASSERT_GE(a.support.size(), 2u);
  EXPECT_LT(a.support.size(), data.size());
  EXPECT_EQ(a.support[0], 6);  // largest push violates most

  // the support subsample alone reproduces the result bitwise
  std::vector<Scenario> sub;
  for (auto id : a.support) sub.push_back(data[static_cast<std::size_t>(id)]);
  const auto c = pick2learn(in.theta_star, sub, in.model, in.plant, cfg);
  EXPECT_EQ(c.support, a.support);
  EXPECT_EQ(c.theta_tilde.to_vector(), a.theta_tilde.to_vector());

  // resuming from the first checkpoint ends in the same place
  P2LOptions resume;
  resume.resume = states.front();
  const auto d = pick2learn(in.theta_star, data, in.model, in.plant, cfg, resume);
  EXPECT_EQ(d.support, a.support);
  EXPECT_EQ(d.theta_tilde.to_vector(), a.theta_tilde.to_vector());
  EXPECT_EQ(d.loss_history, a.loss_history);

  // the training set grows by one per outer iteration
  for (std::size_t k = 0; k + 1 < states.size(); ++k) EXPECT_EQ(states[k].training.size(), k + 1);
}

TEST(Tuning, PickToLearnRejectsBadInput) {
  const auto in = double_integrator();
  EXPECT_THROW(pick2learn(in.theta_star, std::vector<Scenario>{}, in.model, in.plant, small_cfg()), Error);
  const std::vector<Scenario> dup{drift(1, 0.0), drift(1, 0.01)};
  EXPECT_THROW(pick2learn(in.theta_star, dup, in.model, in.plant, small_cfg()), Error);
  P2LOptions opts;
  P2LState st;
  st.theta = in.theta_star;
  st.training = {42};
  opts.resume = st;
  EXPECT_THROW(pick2learn(in.theta_star, std::vector<Scenario>{drift(0, 0.0)}, in.model, in.plant, small_cfg(), opts),
               Error);
}
