#include "mpctune/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>

#include "mpctune/errors.hpp"
#include "mpctune/parallel.hpp"

namespace mpctune {

void TuneConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgs, "tuning config: " + m); };
  if (!(c > 0)) fail("c must be positive");
  if (!(zeta > 0.5 && zeta <= 1.0)) fail("zeta must lie in (0.5, 1]");
  if (!(c1 > 0)) fail("c1 must be positive");
  if (!(c2 >= 0)) fail("c2 must be nonnegative");
  if (!(tol > 0)) fail("tol must be positive");
  if (max_it < 0 || nominal_max_it < 0) fail("iteration counts must be nonnegative");
  if (!(theta_box > 0)) fail("theta_box must be positive");
}

double step_size(int k, const TuneConfig& cfg) {
  if (k < 1) throw Error(ErrorCode::InvalidArgs, "step index starts at 1");
  return cfg.c / std::pow(static_cast<double>(k), cfg.zeta);
}

namespace {

void check_finite(const Vector& g, const std::string& where) {
  if (!g.allFinite()) throw Error(ErrorCode::NumericFailure, "non-finite gradient at " + where);
}

}  // namespace

NominalTuneResult tune_nominal(const ThetaParams<double>& theta0, const MPCModel<double>& model,
                               const PlantDef& plant, const Scenario& nominal, const TuneConfig& cfg) {
  cfg.validate();
  const ThetaLayout layout = theta0.layout();
  NominalTuneResult out;
  Vector theta = theta0.to_vector();

  for (int k = 0; k < cfg.nominal_max_it; ++k) {
    const auto params = ThetaParams<double>::from_vector(layout, theta);
    LossGradient lg;
    try {
      lg = nominal_loss(rollout_with_jacobian(model, params, plant, nominal), model, cfg.c1);
    } catch (const Error& e) {
      throw e.with_context("nominal tuning, iteration " + std::to_string(k));
    }
    check_finite(lg.gradient, "nominal tuning iteration " + std::to_string(k));
    out.loss_history.push_back(lg.value);
    const Vector next = project_theta(model, Vector(theta - step_size(k + 1, cfg) * lg.gradient), cfg.theta_box);
    const double moved = (next - theta).norm();
    theta = next;
    out.iterations = k + 1;
    if (moved < cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = ThetaParams<double>::from_vector(layout, theta);
  const TrajectoryBundle final_run = simulate(model, out.theta, plant, nominal);
  out.loss_history.push_back(final_run.stage_costs.sum() + cfg.c1 * final_run.gammas.sum());
  return out;
}

ThetaParams<double> solve_penalized(const ThetaParams<double>& theta_init, const ThetaParams<double>& theta_star,
                                    std::span<const Scenario> training, const MPCModel<double>& model,
                                    const PlantDef& plant, const TuneConfig& cfg, std::vector<double>* loss_history) {
  cfg.validate();
  const ThetaLayout layout = theta_init.layout();
  const Vector star = theta_star.to_vector();
  Vector theta = theta_init.to_vector();

  for (int j = 0; j < cfg.max_it; ++j) {
    const auto params = ThetaParams<double>::from_vector(layout, theta);
    std::vector<TrajectoryBundle> bundles;
    try {
      bundles = parallel_map(training.size(), cfg.threads, [&](std::size_t i) {
        return rollout_with_jacobian(model, params, plant, training[i]);
      });
    } catch (const Error& e) {
      throw e.with_context("penalized solve, iteration " + std::to_string(j));
    }
    const LossGradient lg = robust_loss(theta, star, bundles, model, cfg.c1, cfg.c2);
    check_finite(lg.gradient, "penalized solve iteration " + std::to_string(j));
    if (loss_history) loss_history->push_back(lg.value);
    theta = project_theta(model, Vector(theta - step_size(j + 1, cfg) * lg.gradient), cfg.theta_box);
  }
  return ThetaParams<double>::from_vector(layout, theta);
}

P2LResult pick2learn(const ThetaParams<double>& theta_star, std::span<const Scenario> dataset,
                     const MPCModel<double>& model, const PlantDef& plant, const TuneConfig& cfg,
                     const P2LOptions& options) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorCode::InvalidArgs, "dataset must not be empty");

  std::unordered_map<std::int64_t, std::size_t> position;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!position.emplace(dataset[i].id, i).second) {
      throw Error(ErrorCode::InvalidArgs, "duplicate scenario id " + std::to_string(dataset[i].id));
    }
  }

  P2LState state;
  if (options.resume) {
    state = *options.resume;
    for (auto id : state.training) {
      if (!position.count(id)) throw Error(ErrorCode::InvalidArgs, "checkpoint references unknown scenario id");
    }
  } else {
    state.theta = theta_star;
  }

  while (!state.converged) {
    std::vector<char> in_training(dataset.size(), 0);
    for (auto id : state.training) in_training[position.at(id)] = 1;
    std::vector<std::size_t> evaluation;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (!in_training[i]) evaluation.push_back(i);
    }

    std::vector<TrajectoryBundle> runs;
    try {
      runs = parallel_map(evaluation.size(), cfg.threads,
                          [&](std::size_t i) { return simulate(model, state.theta, plant, dataset[evaluation[i]]); });
    } catch (const Error& e) {
      throw e.with_context("sample selection, outer iteration " + std::to_string(state.k));
    }

    std::int64_t pick = -1;
    double worst = 0.0;
    for (std::size_t i = 0; i < evaluation.size(); ++i) {
      const double g = runs[i].gammas.sum();
      const std::int64_t id = dataset[evaluation[i]].id;
      if (g > 0.0 && (pick < 0 || g > worst || (g == worst && id < pick))) {
        pick = id;
        worst = g;
      }
    }
    if (pick < 0) {
      // no violation: fall back to a scenario whose selected penalty subgradient is nonzero
      for (std::size_t i = 0; i < evaluation.size(); ++i) {
        const std::int64_t id = dataset[evaluation[i]].id;
        if (penalty_subgradient_nonzero(runs[i], model) && (pick < 0 || id < pick)) pick = id;
      }
    }
    if (pick < 0) {
      state.converged = true;
      if (options.on_iteration) options.on_iteration(state);
      break;
    }

    state.training.push_back(pick);
    std::vector<Scenario> training;
    training.reserve(state.training.size());
    for (auto id : state.training) training.push_back(dataset[position.at(id)]);
    std::vector<double> history;
    try {
      state.theta = solve_penalized(state.theta, theta_star, training, model, plant, cfg, &history);
    } catch (const Error& e) {
      throw e.with_context("sample selection, outer iteration " + std::to_string(state.k));
    }
    state.loss_history.push_back(history.empty() ? std::numeric_limits<double>::quiet_NaN() : history.back());
    ++state.k;
    if (options.on_iteration) options.on_iteration(state);
  }

  P2LResult out;
  out.theta_tilde = state.theta;
  out.support = state.training;
  out.iterations = state.k;
  out.loss_history = state.loss_history;

  const auto final_runs = parallel_map(dataset.size(), cfg.threads,
                                       [&](std::size_t i) { return simulate(model, state.theta, plant, dataset[i]); });
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (final_runs[i].gammas.maxCoeff() > 0.0) out.infeasible_ids.push_back(dataset[i].id);
  }
  out.certifiable = out.infeasible_ids.empty();
  return out;
}

}  // namespace mpctune
