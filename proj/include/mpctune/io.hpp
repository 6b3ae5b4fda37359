#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpctune/certificate.hpp"
#include "mpctune/mpc.hpp"
#include "mpctune/plants.hpp"
#include "mpctune/rollout.hpp"
#include "mpctune/tuning.hpp"

namespace mpctune {

/// Provenance stamped into every artifact.
struct RunStamp {
  std::uint64_t config_hash{0};
  std::uint64_t seed{0};
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and a rename, so readers never see half a file.
void write_text(const std::filesystem::path& path, std::string_view text);

/**
 * Dataset table. Header lines start with '#' and record the generating spec and seed; each
 * data row is  id, d[n_d], x0[n_x], w[T×n_w] row-major, comma separated.
 */
std::string serialize_dataset(const ScenarioSpec& spec, std::span<const Scenario> data, const RunStamp& stamp);
std::vector<Scenario> parse_dataset(std::string_view text);

void write_dataset(const std::filesystem::path& path, const ScenarioSpec& spec, std::span<const Scenario> data,
                   const RunStamp& stamp);
std::vector<Scenario> read_dataset(const std::filesystem::path& path);

std::string theta_to_json(const ThetaParams<double>& theta, const RunStamp& stamp, std::string_view label);
ThetaParams<double> theta_from_json(std::string_view text);

std::string checkpoint_to_json(const P2LState& state, const RunStamp& stamp);
P2LState checkpoint_from_json(std::string_view text);

std::string support_to_json(const P2LResult& result, std::int64_t M, const RunStamp& stamp);

std::string certificate_record(const Certificate& cert, std::uint64_t dataset_hash, const RunStamp& stamp,
                               std::string_view timestamp);

/// CSV with columns scenario_id, t, x0..x{n−1}, u0..u{m−1}, gamma, stage_cost (inputs empty at t = T).
std::string trajectories_csv(std::span<const TrajectoryBundle> runs, const RunStamp& stamp);

/// Rows t, coord, mean, lo, hi: mean and range over scenarios of each selected state coordinate.
std::string quantiles_csv(std::span<const TrajectoryBundle> runs, std::span<const int> coords, const RunStamp& stamp);

struct PolicyRow {
  std::string policy;
  ValidationReport report;
};
/// Columns policy, avg_cost, ratio, total, relative.
std::string violation_table_csv(std::span<const PolicyRow> rows, const RunStamp& stamp);

}  // namespace mpctune
