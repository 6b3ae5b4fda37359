#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mpctune/mpc.hpp"
#include "mpctune/plants.hpp"
#include "mpctune/rollout.hpp"

namespace mpctune {

/// ln C(M, k), accurate to a few ulps of the result for every 0 ≤ k ≤ M ≤ 2^53.
double log_binomial(std::int64_t M, std::int64_t k);

/// ε(k) = 1 − [β / (M·C(M,k))]^{1/(M−k)} for k < M, and ε(M) = 1.
double epsilon_of_k(std::int64_t k, std::int64_t M, double beta);

/// Scenario bound: with confidence at least 1 − β over the draw of the M samples, the
/// violation probability of the tuned policy does not exceed ε(k*).
struct Certificate {
  std::int64_t M{0};
  std::int64_t k_star{0};
  double beta{0.0};
  double epsilon{1.0};
  bool vacuous{false};

  std::string statement() const;
};

/// `assumption_holds` is the training-set feasibility result of the tuner.
Certificate certify(std::int64_t k_star, std::int64_t M, double beta, bool assumption_holds = true);

struct ValidationReport {
  std::int64_t count{0};
  /// Fraction of scenarios with H_x x_t > h_x at some t.
  double violation_fraction{0.0};
  ViolationMetrics metrics;
  double mean_cost{0.0};
};

ValidationReport validate_empirical(const ThetaParams<double>& theta, std::span<const Scenario> fresh,
                                    const MPCModel<double>& model, const PlantDef& plant, int threads = 1);

/// Same report from already simulated trajectories.
ValidationReport summarize(std::span<const TrajectoryBundle> runs, const MPCModel<double>& model);

}  // namespace mpctune
