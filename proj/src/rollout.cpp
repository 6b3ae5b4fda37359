#include "mpctune/rollout.hpp"

#include <cmath>
#include <string>

#include "mpctune/errors.hpp"

namespace mpctune {

double penalty_gamma(const Matrix& H_x, const Vector& h_x, const Vector& x) {
  if (H_x.rows() == 0) return 0.0;
  return (H_x * x - h_x).cwiseMax(0.0).sum();
}

namespace {

void check_scenario(const MPCModel<double>& model, const PlantDef& plant, const Scenario& s) {
  if (s.x0.size() != model.n_x() || plant.n_x != model.n_x() || plant.n_u != model.n_u()) {
    throw Error(ErrorCode::DimensionMismatch, "scenario, plant and MPC model disagree on dimensions");
  }
  if (s.w.rows() > 0 && s.w.cols() != model.n_x()) {
    throw Error(ErrorCode::DimensionMismatch, "additive noise must have n_x columns");
  }
}

TrajectoryBundle run(const MPCModel<double>& model, const ThetaParams<double>& theta, const PlantDef& plant,
                     const Scenario& scenario, bool with_jacobian) {
  check_scenario(model, plant, scenario);
  const int T = static_cast<int>(scenario.w.rows());
  const Index nx = model.n_x();
  const Index nth = theta.size();

  TrajectoryBundle b;
  b.scenario_id = scenario.id;
  b.states.resize(T + 1, nx);
  b.inputs.resize(T, model.n_u());
  b.stage_costs.resize(T + 1);
  b.gammas.resize(T + 1);
  b.diagnostics.qp_residuals.resize(T);
  b.diagnostics.slack_usage.resize(T);
  if (with_jacobian) b.jac_states.assign(1, Matrix::Zero(nx, nth));

  const MPCLayout layout = MPCLayout::of(model);
  const Index slack_begin = layout.s(1);
  const Index slack_count = layout.N * layout.n_cx;

  Vector x = scenario.x0;
  std::vector<Index> warm;
  for (int t = 0; t < T; ++t) {
    b.states.row(t) = x.transpose();
    b.stage_costs(t) = x.dot(model.Q_x * x);
    b.gammas(t) = penalty_gamma(model.H_x, model.h_x, x);
    if (plant.outside_smooth_region && plant.outside_smooth_region(x)) b.diagnostics.nonsmooth_steps.push_back(t);
    try {
      const MPCResult<double> res = mpc_solve(model, theta, x, warm);
      warm = res.sol.working_set;
      b.diagnostics.warm_starts += res.sol.warm_started ? 1 : 0;
      b.diagnostics.qp_residuals(t) = res.sol.kkt_residual;
      b.diagnostics.slack_usage(t) = res.sol.y.segment(slack_begin, slack_count).sum();
      b.inputs.row(t) = res.u.transpose();

      if (with_jacobian) {
        const MPCJacobians<double> jm = mpc_jacobians(model, theta, x, res.sol);
        const PlantJacobians jf = plant_jacobians(plant, x, res.u, scenario.d);
        const Matrix& Jt = b.jac_states.back();
        b.jac_states.push_back(jf.dfdu * (jm.J_x * Jt + jm.J_theta) + jf.dfdx * Jt);
      }
      x = plant_step(plant, x, res.u, scenario.d);
      if (scenario.w.rows() > 0) x += scenario.w.row(t).transpose();
    } catch (const Error& e) {
      throw e.with_context("closed loop, step " + std::to_string(t));
    }
    if (!x.allFinite()) throw Error(ErrorCode::NumericFailure, "state diverged at step " + std::to_string(t + 1));
  }
  b.states.row(T) = x.transpose();
  b.stage_costs(T) = x.dot(model.Q_x * x);
  b.gammas(T) = penalty_gamma(model.H_x, model.h_x, x);
  if (plant.outside_smooth_region && plant.outside_smooth_region(x)) b.diagnostics.nonsmooth_steps.push_back(T);
  return b;
}

void require_jacobians(const TrajectoryBundle& b) {
  if (static_cast<int>(b.jac_states.size()) != b.horizon() + 1) {
    throw Error(ErrorCode::InvalidArgs, "trajectory bundle carries no Jacobians");
  }
}

}  // namespace

TrajectoryBundle simulate(const MPCModel<double>& model, const ThetaParams<double>& theta, const PlantDef& plant,
                          const Scenario& scenario) {
  return run(model, theta, plant, scenario, false);
}

TrajectoryBundle rollout_with_jacobian(const MPCModel<double>& model, const ThetaParams<double>& theta,
                                       const PlantDef& plant, const Scenario& scenario) {
  return run(model, theta, plant, scenario, true);
}

LossGradient nominal_loss(const TrajectoryBundle& b, const MPCModel<double>& model, double c1) {
  require_jacobians(b);
  LossGradient out;
  out.gradient = Vector::Zero(b.jac_states.front().cols());
  for (int t = 0; t <= b.horizon(); ++t) {
    const Vector x = b.states.row(t).transpose();
    out.value += b.stage_costs(t) + c1 * b.gammas(t);
    Vector dx = 2.0 * (model.Q_x * x);
    if (model.n_cx() > 0) {
      const Vector active = ((model.H_x * x - model.h_x).array() > 0.0).cast<double>().matrix();
      dx += c1 * (model.H_x.transpose() * active);
    }
    out.gradient.noalias() += b.jac_states[t].transpose() * dx;
  }
  return out;
}

LossGradient penalty_loss(const TrajectoryBundle& b, const MPCModel<double>& model, double c1, double c2) {
  require_jacobians(b);
  LossGradient out;
  out.gradient = Vector::Zero(b.jac_states.front().cols());
  if (model.n_cx() == 0) return out;
  for (int t = 0; t <= b.horizon(); ++t) {
    const Vector viol = (model.H_x * b.states.row(t).transpose() - model.h_x).cwiseMax(0.0);
    if (!(viol.maxCoeff() > 0.0)) continue;
    out.value += c1 * viol.sum() + c2 * viol.squaredNorm();
    const Vector active = (viol.array() > 0.0).cast<double>().matrix();
    const Vector dx = model.H_x.transpose() * (c1 * active + 2.0 * c2 * viol);
    out.gradient.noalias() += b.jac_states[t].transpose() * dx;
  }
  return out;
}

LossGradient robust_loss(const Vector& theta, const Vector& theta_star, std::span<const TrajectoryBundle> bundles,
                         const MPCModel<double>& model, double c1, double c2) {
  if (theta.size() != theta_star.size()) throw Error(ErrorCode::DimensionMismatch, "theta sizes differ");
  LossGradient out;
  const Vector diff = theta - theta_star;
  out.value = diff.squaredNorm();
  out.gradient = 2.0 * diff;
  for (const auto& b : bundles) {
    const LossGradient p = penalty_loss(b, model, c1, c2);
    out.value += p.value;
    out.gradient += p.gradient;
  }
  return out;
}

bool penalty_subgradient_nonzero(const TrajectoryBundle& b, const MPCModel<double>& model) {
  if (model.n_cx() == 0) return false;
  Vector total = Vector::Zero(model.n_x());
  for (int t = 0; t <= b.horizon(); ++t) {
    const Vector r = model.H_x * b.states.row(t).transpose() - model.h_x;
    // subgradient selection of max(r_i, 0): 1 if r_i > 0, 0 otherwise (including r_i = 0)
    const Vector sel = (r.array() > 0.0).cast<double>().matrix();
    total += model.H_x.transpose() * sel;
  }
  return total.cwiseAbs().maxCoeff() > 0.0;
}

ViolationMetrics violation_metrics(std::span<const TrajectoryBundle> bundles, const MPCModel<double>& model) {
  ViolationMetrics m;
  if (bundles.empty() || model.n_cx() == 0) return m;
  int violating = 0;
  double relative_sum = 0.0;
  for (const auto& b : bundles) {
    double worst = 0.0;
    Index worst_row = -1;
    for (Index t = 0; t < b.states.rows(); ++t) {
      const Vector r = model.H_x * b.states.row(t).transpose() - model.h_x;
      for (Index i = 0; i < r.size(); ++i) {
        if (r(i) > worst) {
          worst = r(i);
          worst_row = i;
        }
      }
    }
    if (worst_row >= 0) {
      ++violating;
      m.total += worst;
      const double scale = std::abs(model.h_x(worst_row));
      relative_sum += scale > 0.0 ? worst / scale : 0.0;
    }
  }
  const double n = static_cast<double>(bundles.size());
  m.ratio = violating / n;
  m.total /= n;
  m.relative = violating > 0 ? relative_sum / violating : 0.0;
  return m;
}

}  // namespace mpctune
