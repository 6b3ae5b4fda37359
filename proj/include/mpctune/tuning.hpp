#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mpctune/mpc.hpp"
#include "mpctune/plants.hpp"
#include "mpctune/rollout.hpp"

namespace mpctune {

struct TuneConfig {
  double c{0.1};
  double zeta{0.6};
  double c1{40.0};
  double c2{40.0};
  /// Gradient steps per penalized solve (inner loop of the robust tuner).
  int max_it{1000};
  /// Iteration cap of the nominal tuner.
  int nominal_max_it{1000};
  double tol{1e-6};
  /// Every raw θ entry is projected to [−theta_box, theta_box].
  double theta_box{1e3};
  int threads{1};

  void validate() const;
};

/// α_k = c / k^ζ, k ≥ 1.
double step_size(int k, const TuneConfig& cfg);

struct NominalTuneResult {
  ThetaParams<double> theta;
  /// Loss at every visited iterate, including the returned one.
  std::vector<double> loss_history;
  int iterations{0};
  bool converged{false};
};

/// Projected subgradient descent on the nominal closed-loop loss of `nominal`.
NominalTuneResult tune_nominal(const ThetaParams<double>& theta0, const MPCModel<double>& model,
                               const PlantDef& plant, const Scenario& nominal, const TuneConfig& cfg);

/// `max_it` projected steps on ‖θ − θ*‖² + Σ_δ penalty(δ) over `training`, starting at `theta_init`.
ThetaParams<double> solve_penalized(const ThetaParams<double>& theta_init, const ThetaParams<double>& theta_star,
                                    std::span<const Scenario> training, const MPCModel<double>& model,
                                    const PlantDef& plant, const TuneConfig& cfg,
                                    std::vector<double>* loss_history = nullptr);

/// Outer-loop state of the sample-selection tuner; serializable for checkpoints.
struct P2LState {
  int k{0};
  /// Scenario ids moved to the training set, in selection order.
  std::vector<std::int64_t> training;
  ThetaParams<double> theta;
  bool converged{false};
  /// Final robust loss of each penalized solve.
  std::vector<double> loss_history;
};

struct P2LResult {
  ThetaParams<double> theta_tilde;
  /// Support subsample, in selection order.
  std::vector<std::int64_t> support;
  int iterations{0};
  /// Every scenario of the dataset satisfies H_x x_t ≤ h_x in closed loop under `theta_tilde`.
  bool certifiable{false};
  std::vector<std::int64_t> infeasible_ids;
  std::vector<double> loss_history;
};

struct P2LOptions {
  std::optional<P2LState> resume;
  std::function<void(const P2LState&)> on_iteration;
};

/// Greedy worst-sample selection: move the most violating scenario into the training set and
/// re-solve the penalized problem from the current iterate, until no scenario violates.
P2LResult pick2learn(const ThetaParams<double>& theta_star, std::span<const Scenario> dataset,
                     const MPCModel<double>& model, const PlantDef& plant, const TuneConfig& cfg,
                     const P2LOptions& options = {});

}  // namespace mpctune
