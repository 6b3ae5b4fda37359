// mpctune: batch front-end for tuning, certifying and validating MPC policies.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpctune/certificate.hpp"
#include "mpctune/config.hpp"
#include "mpctune/errors.hpp"
#include "mpctune/io.hpp"
#include "mpctune/pipeline.hpp"

namespace {

constexpr int kExitOther = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitNoCertificate = 4;

constexpr const char* kSchemas = R"(
Output files (all begin with '# config_hash <hex>' and '# seed <n>' comment lines or fields):
  theta_star.json, theta_tilde.json   raw theta vector plus P, R, eta_x, eta_u
  nominal_loss.csv                    iteration,loss
  nominal_trajectory.csv              scenario_id,t,x0..,u0..,gamma,stage_cost
  simulated_trajectories.csv          same columns as nominal_trajectory.csv
  dataset.txt                         '#' header with spec; rows id,d..,x0..,w (T x n_w, row-major)
  p2l_checkpoint.json                 k, training_ids, theta, loss_history (resumable)
  support.json                        k_star, support_ids, certifiable, infeasible_ids
  certificate.txt                     M, k_star, beta, epsilon, dataset_hash, timestamp
  table_violation.csv                 policy,avg_cost,ratio,total,relative
  trajectory_quantiles.csv            t,coord,mean,lo,hi   (tuned policy; lo/hi = min/max)
  trajectory_quantiles_nominal.csv    t,coord,mean,lo,hi   (nominal policy)
  validation.json                     violation fractions and mean costs
Exit codes: 0 ok, 1 other failure, 2 usage or config error, 3 numeric failure,
            4 no certificate (tuned policy infeasible on the training set).
The thread count may be overridden with MPCTUNE_THREADS; results do not depend on it.)";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads{0};
};

void add_common(CLI::App* sub, Common& c, bool config_required = true) {
  auto* opt = sub->add_option("--config", c.config, "experiment YAML file");
  if (config_required) opt->required();
  sub->add_option("--seed", c.seed, "training-set seed (overrides seeds.dataset)");
  sub->add_option("--out", c.out, "output directory (overrides output.directory)");
  sub->add_option("--threads", c.threads, "worker threads for scenario-level parallelism")->check(CLI::PositiveNumber);
}

mpctune::StageContext make_context(const Common& c) {
  mpctune::StageContext ctx;
  ctx.cfg = mpctune::load_config(c.config);
  if (c.seed) ctx.cfg.override_seed(*c.seed);
  if (!c.out.empty()) ctx.cfg.output_dir = c.out;
  if (c.threads > 0) ctx.cfg.tuning.threads = c.threads;
  if (const char* env = std::getenv("MPCTUNE_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t < 1) throw std::invalid_argument("nonpositive");
      ctx.cfg.tuning.threads = t;
    } catch (const std::exception&) {
      throw mpctune::Error(mpctune::ErrorCode::Config, "MPCTUNE_THREADS must be a positive integer");
    }
  }
  ctx.paths.dir = ctx.cfg.output_dir;
  ctx.log = [](std::string_view msg) { std::cerr << msg << "\n"; };
  return ctx;
}

int exit_code_for(const mpctune::Error& e) {
  if (e.code() == mpctune::ErrorCode::AssumptionViolated) return kExitNoCertificate;
  if (e.is_numeric()) return kExitNumeric;
  if (e.code() == mpctune::ErrorCode::Config || e.code() == mpctune::ErrorCode::InvalidArgs) return kExitUsage;
  return kExitOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tune MPC cost and constraint tightenings by backpropagation through the closed loop,\n"
               "then certify out-of-sample constraint satisfaction with the scenario approach."};
  app.footer(kSchemas);
  app.require_subcommand(1);

  Common c;
  bool resume = false;
  std::optional<std::int64_t> cert_m, cert_k;
  std::optional<double> cert_beta;
  std::optional<std::int64_t> sample_m;
  std::string theta_file, dataset_file;
  std::vector<std::int64_t> ids;

  auto* nominal = app.add_subcommand("tune-nominal", "nominal tuning; writes theta_star.json and the nominal trajectory");
  add_common(nominal, c);

  auto* robust = app.add_subcommand("tune-robust", "robust tuning from theta_star.json; writes theta_tilde.json, support.json");
  add_common(robust, c);
  robust->add_flag("--resume", resume, "continue from p2l_checkpoint.json");

  auto* cert = app.add_subcommand("certify", "scenario certificate from support.json, or a direct bound with --m --k");
  add_common(cert, c, false);
  cert->add_option("--m", cert_m, "number of scenarios M");
  cert->add_option("--k", cert_k, "support subsample size k");
  cert->add_option("--beta", cert_beta, "confidence parameter beta");

  auto* validate = app.add_subcommand("validate", "closed-loop evaluation of theta_tilde and theta_star");
  add_common(validate, c);
  validate->add_option("--dataset", dataset_file, "dataset file to evaluate on (default: fresh validation samples)");
  validate->add_option("--theta", theta_file, "tuned theta file (default: <out>/theta_tilde.json)");

  auto* sim = app.add_subcommand("simulate", "simulate selected scenarios under a given theta");
  add_common(sim, c);
  sim->add_option("--theta", theta_file, "theta JSON file")->required();
  sim->add_option("--ids", ids, "scenario ids of the training stream (-1: nominal scenario)")->required();

  auto* sample = app.add_subcommand("sample-data", "draw the training set and write dataset.txt");
  add_common(sample, c);
  sample->add_option("--m", sample_m, "number of scenarios (default: certificate.M)");

  auto* run = app.add_subcommand("run", "full pipeline: tune-nominal, tune-robust, certify, validate");
  add_common(run, c);
  run->add_flag("--resume", resume, "continue the robust stage from its checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*cert && cert_m && cert_k) {
      const double beta = cert_beta.value_or(1e-6);
      const auto certificate = mpctune::certify(*cert_k, *cert_m, beta);
      std::cout << "epsilon " << mpctune::format_double(certificate.epsilon) << "\n";
      std::cout << certificate.statement() << "\n";
      return 0;
    }
    if (*cert && c.config.empty()) {
      std::cerr << "certify: give either --m and --k, or --config\n";
      return kExitUsage;
    }

    auto ctx = make_context(c);
    if (*cert && cert_beta) ctx.cfg.beta = *cert_beta;

    if (*nominal) {
      mpctune::stage_tune_nominal(ctx);
    } else if (*robust) {
      const auto res = mpctune::stage_tune_robust(ctx, resume);
      std::cout << "k_star " << res.support.size() << "\ncertifiable " << (res.certifiable ? "true" : "false") << "\n";
    } else if (*cert) {
      const auto certificate = mpctune::stage_certify(ctx, mpctune::utc_timestamp());
      std::cout << "epsilon " << mpctune::format_double(certificate.epsilon) << "\n";
    } else if (*validate) {
      std::optional<std::filesystem::path> ds, th;
      if (!dataset_file.empty()) ds = dataset_file;
      if (!theta_file.empty()) th = theta_file;
      const auto v = mpctune::stage_validate(ctx, ds, th);
      std::cout << "violation_fraction " << mpctune::format_double(v.tuned.violation_fraction) << "\n";
    } else if (*sim) {
      std::cout << mpctune::stage_simulate(ctx, theta_file, ids).string() << "\n";
    } else if (*sample) {
      mpctune::stage_sample_data(ctx, sample_m);
    } else if (*run) {
      const auto r = mpctune::run_pipeline(ctx, resume);
      std::cout << "k_star " << r.robust.support.size() << "\n";
      if (r.certificate) std::cout << "epsilon " << mpctune::format_double(r.certificate->epsilon) << "\n";
      std::cout << "violation_fraction " << mpctune::format_double(r.validation.tuned.violation_fraction) << "\n";
      if (!r.certificate) return kExitNoCertificate;
    }
  } catch (const mpctune::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return 0;
}
