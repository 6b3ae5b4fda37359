#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpctune/io.hpp"
#include "mpctune/mpc.hpp"
#include "mpctune/plants.hpp"
#include "mpctune/tuning.hpp"

namespace mpctune {

enum class PlantKind { CartPendulum, Linear };

/// Everything one experiment needs, loaded from a single YAML file.
struct ExperimentConfig {
  std::string source;  // file name used in error messages
  std::uint64_t hash{0};

  PlantKind plant_kind{PlantKind::CartPendulum};
  CartPendulumParams cart;
  JacobianMode jacobian_mode{JacobianMode::Analytic};
  Matrix plant_A, plant_B;  // linear plants only

  MPCModel<double> model;
  ScenarioSpec scenarios;  // scenarios.seed is the training-set seed
  TuneConfig tuning;
  /// Starting point of nominal tuning: L_P = chol(Q_x) or the Riccati factor, L_R = √w·I,
  /// every raw tightening set to eta. At η = 0 the tightening gradient 2η vanishes.
  bool init_riccati{false};
  std::optional<double> init_input_weight;
  double init_eta_x{0.0};
  double init_eta_u{0.0};

  std::int64_t M{0};
  double beta{1e-6};
  std::int64_t validation_samples{0};
  std::uint64_t validation_seed{0};

  std::filesystem::path output_dir;
  std::vector<int> quantile_coords;

  PlantDef make_plant() const;
  ThetaParams<double> initial_theta() const;
  RunStamp stamp() const { return {hash, scenarios.seed}; }
  /// Replace the training seed, re-checking that it differs from the validation seed.
  void override_seed(std::uint64_t seed);
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mpctune
