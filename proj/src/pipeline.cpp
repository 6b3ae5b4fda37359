#include "mpctune/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>

#include "json.hpp"
#include "mpctune/errors.hpp"
#include "mpctune/io.hpp"
#include "mpctune/parallel.hpp"

namespace mpctune {

namespace {

void say(const StageContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

template <typename F>
auto in_stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw e.with_context(std::string("stage ") + name);
  }
}

ThetaParams<double> load_theta(const std::filesystem::path& path, const MPCModel<double>& model) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::Io, path.string() + " not found; run the earlier stage first");
  }
  auto theta = theta_from_json(read_text(path));
  if (theta.size() != ThetaLayout::of(model).size() || theta.L_P.rows() != model.n_x()) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + " does not match the configured MPC model");
  }
  return theta;
}

std::vector<Scenario> training_set(const StageContext& ctx) {
  return sample_dataset(ctx.cfg.scenarios, ctx.cfg.M);
}

std::vector<TrajectoryBundle> simulate_all(const StageContext& ctx, const ThetaParams<double>& theta,
                                           const PlantDef& plant, const std::vector<Scenario>& data) {
  return parallel_map(data.size(), ctx.cfg.tuning.threads,
                      [&](std::size_t i) { return simulate(ctx.cfg.model, theta, plant, data[i]); });
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

NominalTuneResult stage_tune_nominal(const StageContext& ctx) {
  return in_stage("tune-nominal", [&] {
    const auto& cfg = ctx.cfg;
    const PlantDef plant = cfg.make_plant();
    const Scenario nominal = nominal_scenario(cfg.scenarios, plant.n_d);
    say(ctx, "tune-nominal: " + std::to_string(cfg.tuning.nominal_max_it) + " iterations at most");
    const auto res = tune_nominal(cfg.initial_theta(), cfg.model, plant, nominal, cfg.tuning);
    say(ctx, "tune-nominal: loss " + format_double(res.loss_history.front()) + " -> " +
                 format_double(res.loss_history.back()) + " after " + std::to_string(res.iterations) + " iterations");

    const RunStamp stamp = cfg.stamp();
    write_text(ctx.paths.theta_star(), theta_to_json(res.theta, stamp, "theta_star"));
    std::string loss = "# config_hash " + hex64(stamp.config_hash) + "\n# seed " + std::to_string(stamp.seed) +
                       "\niteration,loss\n";
    for (std::size_t k = 0; k < res.loss_history.size(); ++k) {
      loss += std::to_string(k) + "," + format_double(res.loss_history[k]) + "\n";
    }
    write_text(ctx.paths.nominal_loss(), loss);
    const TrajectoryBundle run = simulate(cfg.model, res.theta, plant, nominal);
    write_text(ctx.paths.nominal_trajectory(), trajectories_csv(std::span(&run, 1), stamp));
    return res;
  });
}

std::vector<Scenario> stage_sample_data(const StageContext& ctx, std::optional<std::int64_t> M) {
  return in_stage("sample-data", [&] {
    const auto data = sample_dataset(ctx.cfg.scenarios, M.value_or(ctx.cfg.M));
    write_dataset(ctx.paths.dataset(), ctx.cfg.scenarios, data, ctx.cfg.stamp());
    say(ctx, "sample-data: wrote " + std::to_string(data.size()) + " scenarios to " + ctx.paths.dataset().string());
    return data;
  });
}

P2LResult stage_tune_robust(const StageContext& ctx, bool resume) {
  return in_stage("tune-robust", [&] {
    const auto& cfg = ctx.cfg;
    const RunStamp stamp = cfg.stamp();
    const PlantDef plant = cfg.make_plant();
    const auto theta_star = load_theta(ctx.paths.theta_star(), cfg.model);
    const auto data = training_set(ctx);
    write_dataset(ctx.paths.dataset(), cfg.scenarios, data, stamp);

    P2LOptions opts;
    if (resume && std::filesystem::exists(ctx.paths.checkpoint())) {
      const std::string text = read_text(ctx.paths.checkpoint());
      const auto j = nlohmann::json::parse(text);
      if (j.value("config_hash", std::string()) != hex64(stamp.config_hash) ||
          j.value("seed", std::uint64_t{0}) != stamp.seed) {
        throw Error(ErrorCode::Config, "checkpoint was written by a different config or seed");
      }
      opts.resume = checkpoint_from_json(text);
      say(ctx, "tune-robust: resuming at outer iteration " + std::to_string(opts.resume->k));
    }
    opts.on_iteration = [&](const P2LState& s) {
      write_text(ctx.paths.checkpoint(), checkpoint_to_json(s, stamp));
      if (!s.converged) {
        say(ctx, "tune-robust: outer iteration " + std::to_string(s.k) + ", picked scenario " +
                     std::to_string(s.training.back()) + ", loss " + format_double(s.loss_history.back()));
      }
    };
    const auto res = pick2learn(theta_star, data, cfg.model, plant, cfg.tuning, opts);
    say(ctx, "tune-robust: |T*| = " + std::to_string(res.support.size()) + " of " + std::to_string(cfg.M) +
                 (res.certifiable ? ", feasible on every training scenario"
                                  : ", infeasible on " + std::to_string(res.infeasible_ids.size()) + " training scenarios"));
    write_text(ctx.paths.theta_tilde(), theta_to_json(res.theta_tilde, stamp, "theta_tilde"));
    write_text(ctx.paths.support(), support_to_json(res, cfg.M, stamp));
    return res;
  });
}

Certificate stage_certify(const StageContext& ctx, std::string_view timestamp) {
  return in_stage("certify", [&] {
    const auto& cfg = ctx.cfg;
    if (!std::filesystem::exists(ctx.paths.support())) {
      throw Error(ErrorCode::Io, ctx.paths.support().string() + " not found; run tune-robust first");
    }
    const auto j = nlohmann::json::parse(read_text(ctx.paths.support()));
    const auto k_star = j.at("k_star").get<std::int64_t>();
    const auto M = j.at("M").get<std::int64_t>();
    const bool ok = j.at("certifiable").get<bool>();
    const Certificate cert = certify(k_star, M, cfg.beta, ok);
    const std::uint64_t dataset_hash = fnv1a64(read_text(ctx.paths.dataset()));
    write_text(ctx.paths.certificate(), certificate_record(cert, dataset_hash, cfg.stamp(), timestamp));
    say(ctx, "certify: " + cert.statement());
    return cert;
  });
}

ValidationSummary stage_validate(const StageContext& ctx, const std::optional<std::filesystem::path>& dataset,
                                 const std::optional<std::filesystem::path>& theta_file) {
  return in_stage("validate", [&] {
    const auto& cfg = ctx.cfg;
    const RunStamp stamp = cfg.stamp();
    const PlantDef plant = cfg.make_plant();
    const auto theta_tilde = load_theta(theta_file.value_or(ctx.paths.theta_tilde()), cfg.model);
    const auto theta_star = load_theta(ctx.paths.theta_star(), cfg.model);

    std::vector<Scenario> data;
    if (dataset) {
      data = read_dataset(*dataset);
    } else {
      ScenarioSpec fresh = cfg.scenarios;
      fresh.seed = cfg.validation_seed;
      data = sample_dataset(fresh, cfg.validation_samples);
    }
    const auto tuned_runs = simulate_all(ctx, theta_tilde, plant, data);
    const auto nominal_runs = simulate_all(ctx, theta_star, plant, data);

    ValidationSummary out;
    out.tuned = summarize(tuned_runs, cfg.model);
    out.nominal = summarize(nominal_runs, cfg.model);
    if (std::filesystem::exists(ctx.paths.certificate())) {
      const auto support = nlohmann::json::parse(read_text(ctx.paths.support()));
      out.epsilon = epsilon_of_k(support.at("k_star").get<std::int64_t>(), support.at("M").get<std::int64_t>(), cfg.beta);
    }

    const std::vector<PolicyRow> rows{{"tuned", out.tuned}, {"nominal", out.nominal}};
    write_text(ctx.paths.table(), violation_table_csv(rows, stamp));
    write_text(ctx.paths.quantiles(), quantiles_csv(tuned_runs, cfg.quantile_coords, stamp));
    write_text(ctx.paths.quantiles_nominal(), quantiles_csv(nominal_runs, cfg.quantile_coords, stamp));

    nlohmann::json j{{"config_hash", hex64(stamp.config_hash)},
                     {"seed", stamp.seed},
                     {"source", dataset ? dataset->string() : std::string("fresh")},
                     {"validation_seed", cfg.validation_seed},
                     {"samples", data.size()},
                     {"tuned_violation_fraction", out.tuned.violation_fraction},
                     {"nominal_violation_fraction", out.nominal.violation_fraction},
                     {"tuned_mean_cost", out.tuned.mean_cost},
                     {"nominal_mean_cost", out.nominal.mean_cost}};
    if (out.epsilon) j["epsilon"] = *out.epsilon;
    write_text(ctx.paths.validation(), j.dump(2) + "\n");
    say(ctx, "validate: tuned violation fraction " + format_double(out.tuned.violation_fraction) + ", mean cost " +
                 format_double(out.tuned.mean_cost) + "; nominal " + format_double(out.nominal.violation_fraction) +
                 ", " + format_double(out.nominal.mean_cost));
    return out;
  });
}

std::filesystem::path stage_simulate(const StageContext& ctx, const std::filesystem::path& theta_file,
                                     const std::vector<std::int64_t>& ids) {
  return in_stage("simulate", [&] {
    const auto& cfg = ctx.cfg;
    const PlantDef plant = cfg.make_plant();
    const auto theta = load_theta(theta_file, cfg.model);
    std::vector<Scenario> data;
    for (auto id : ids) {
      if (id < 0) {
        data.push_back(nominal_scenario(cfg.scenarios, plant.n_d));
      } else {
        data.push_back(sample_scenario(cfg.scenarios, id));
      }
    }
    const auto runs = simulate_all(ctx, theta, plant, data);
    const auto path = ctx.paths.dir / "simulated_trajectories.csv";
    write_text(path, trajectories_csv(runs, cfg.stamp()));
    return path;
  });
}

PipelineResult run_pipeline(const StageContext& ctx, bool resume) {
  PipelineResult r;
  r.nominal = stage_tune_nominal(ctx);
  r.robust = stage_tune_robust(ctx, resume);
  if (r.robust.certifiable) {
    r.certificate = stage_certify(ctx, utc_timestamp());
  } else {
    say(ctx, "certify: skipped, the tuned policy is infeasible on some training scenario");
    std::filesystem::remove(ctx.paths.certificate());
  }
  r.validation = stage_validate(ctx);
  return r;
}

}  // namespace mpctune
