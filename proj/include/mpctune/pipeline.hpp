#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpctune/certificate.hpp"
#include "mpctune/config.hpp"
#include "mpctune/tuning.hpp"

namespace mpctune {

/// File names inside the output directory.
struct ArtifactPaths {
  std::filesystem::path dir;

  std::filesystem::path theta_star() const { return dir / "theta_star.json"; }
  std::filesystem::path nominal_loss() const { return dir / "nominal_loss.csv"; }
  std::filesystem::path nominal_trajectory() const { return dir / "nominal_trajectory.csv"; }
  std::filesystem::path dataset() const { return dir / "dataset.txt"; }
  std::filesystem::path checkpoint() const { return dir / "p2l_checkpoint.json"; }
  std::filesystem::path theta_tilde() const { return dir / "theta_tilde.json"; }
  std::filesystem::path support() const { return dir / "support.json"; }
  std::filesystem::path certificate() const { return dir / "certificate.txt"; }
  std::filesystem::path table() const { return dir / "table_violation.csv"; }
  std::filesystem::path quantiles() const { return dir / "trajectory_quantiles.csv"; }
  std::filesystem::path quantiles_nominal() const { return dir / "trajectory_quantiles_nominal.csv"; }
  std::filesystem::path validation() const { return dir / "validation.json"; }
};

using Logger = std::function<void(std::string_view)>;

struct StageContext {
  ExperimentConfig cfg;
  ArtifactPaths paths;
  Logger log;
};

NominalTuneResult stage_tune_nominal(const StageContext& ctx);

/// Needs theta_star.json. Samples and writes the training set, then runs the selection loop
/// with a checkpoint after every outer iteration; `resume` continues from an existing one.
P2LResult stage_tune_robust(const StageContext& ctx, bool resume = false);

/// Needs support.json and dataset.txt; throws AssumptionViolated if the tuned policy was not
/// feasible on every training scenario.
Certificate stage_certify(const StageContext& ctx, std::string_view timestamp);

struct ValidationSummary {
  ValidationReport tuned;
  ValidationReport nominal;
  std::optional<double> epsilon;
};

/// Closed-loop evaluation of θ̃* and θ* on `dataset`, or on a fresh set drawn with the
/// validation seed when `dataset` is empty.
ValidationSummary stage_validate(const StageContext& ctx, const std::optional<std::filesystem::path>& dataset = {},
                                 const std::optional<std::filesystem::path>& theta_file = {});

std::vector<Scenario> stage_sample_data(const StageContext& ctx, std::optional<std::int64_t> M = {});

/// Simulate the given scenario ids (drawn from the training stream) and write their trajectories.
std::filesystem::path stage_simulate(const StageContext& ctx, const std::filesystem::path& theta_file,
                                     const std::vector<std::int64_t>& ids);

struct PipelineResult {
  NominalTuneResult nominal;
  P2LResult robust;
  std::optional<Certificate> certificate;
  ValidationSummary validation;
};

/// tune-nominal → tune-robust → certify → validate. A stage failure is rethrown with the
/// stage name; the robust stage leaves a checkpoint behind.
PipelineResult run_pipeline(const StageContext& ctx, bool resume = false);

std::string utc_timestamp();

}  // namespace mpctune
