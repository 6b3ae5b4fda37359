#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "mpctune/mpc.hpp"
#include "mpctune/plants.hpp"

namespace mpctune {

struct RolloutDiagnostics {
  Vector qp_residuals;  // T, KKT residual of each MPC solve
  Vector slack_usage;   // T, Σ s of each MPC plan
  int warm_starts{0};
  /// Steps whose state left the region where the plant is smooth.
  std::vector<int> nonsmooth_steps;
};

/// Closed loop x_{t+1} = f(x_t, MPC(x_t, θ), d) + w_t over t = 0..T.
struct TrajectoryBundle {
  std::int64_t scenario_id{0};
  Matrix states;       // (T+1) × n_x
  Matrix inputs;       // T × n_u
  Vector stage_costs;  // T+1, ‖x_t‖²_{Q_x}
  Vector gammas;       // T+1, ‖max(H_x x_t − h_x, 0)‖₁
  /// J_{x_t}(θ), n_x × dim θ each; empty when Jacobians were not requested.
  std::vector<Matrix> jac_states;
  RolloutDiagnostics diagnostics;

  int horizon() const { return static_cast<int>(inputs.rows()); }
  bool has_jacobians() const { return !jac_states.empty(); }
  double total_cost() const { return stage_costs.sum(); }
};

double penalty_gamma(const Matrix& H_x, const Vector& h_x, const Vector& x);

TrajectoryBundle simulate(const MPCModel<double>& model, const ThetaParams<double>& theta, const PlantDef& plant,
                          const Scenario& scenario);

/// Simulation plus the forward Jacobian recursion
///   J_{t+1} = f_u (J_MPC,x J_t + J_MPC,θ) + f_x J_t,   J_0 = 0.
TrajectoryBundle rollout_with_jacobian(const MPCModel<double>& model, const ThetaParams<double>& theta,
                                       const PlantDef& plant, const Scenario& scenario);

struct LossGradient {
  double value{0.0};
  Vector gradient;
};

/// ℓ = Σ_t ‖x_t‖²_{Q_x} + c₁ γ(x_t) with its θ-gradient (∂max(·,0) taken as 0 at 0).
LossGradient nominal_loss(const TrajectoryBundle& bundle, const MPCModel<double>& model, double c1);

/// Σ_t c₁ γ(x_t) + c₂ ‖max(H_x x_t − h_x, 0)‖² for one scenario, with its θ-gradient.
LossGradient penalty_loss(const TrajectoryBundle& bundle, const MPCModel<double>& model, double c1, double c2);

/// ‖θ − θ*‖² + Σ_δ penalty_loss(δ).
LossGradient robust_loss(const Vector& theta, const Vector& theta_star, std::span<const TrajectoryBundle> bundles,
                         const MPCModel<double>& model, double c1, double c2);

/// Whether the selected subgradient of Σ_t γ(x_t) with respect to the states is nonzero.
bool penalty_subgradient_nonzero(const TrajectoryBundle& bundle, const MPCModel<double>& model);

/**
 * ratio: fraction of scenarios with any violation.
 * total: mean over all scenarios of the largest single-row violation along the trajectory.
 * relative: mean over violating scenarios of that violation divided by |h_x| of its row.
 */
struct ViolationMetrics {
  double ratio{0.0};
  double total{0.0};
  double relative{0.0};
};

ViolationMetrics violation_metrics(std::span<const TrajectoryBundle> bundles, const MPCModel<double>& model);

}  // namespace mpctune
