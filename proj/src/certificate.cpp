#include "mpctune/certificate.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <string>

#include "mpctune/errors.hpp"
#include "mpctune/parallel.hpp"

namespace mpctune {

double log_binomial(std::int64_t M, std::int64_t k) {
  if (M < 0 || k < 0 || k > M) throw Error(ErrorCode::InvalidArgs, "log_binomial needs 0 <= k <= M");
  const std::int64_t j = std::min(k, M - k);
  if (j <= 4096) {
    // Σ_{i=1..j} ln((M − j + i) / i), Kahan-compensated
    double sum = 0.0, comp = 0.0;
    for (std::int64_t i = 1; i <= j; ++i) {
      const double term = std::log1p(static_cast<double>(M - j) / static_cast<double>(i));
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    return sum;
  }
  const double m = static_cast<double>(M);
  return std::lgamma(m + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(M - k) + 1.0);
}

double epsilon_of_k(std::int64_t k, std::int64_t M, double beta) {
  if (M < 1) throw Error(ErrorCode::InvalidArgs, "M must be at least 1");
  if (k < 0 || k > M) throw Error(ErrorCode::InvalidArgs, "k must lie in [0, M]");
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorCode::InvalidArgs, "beta must lie in (0, 1)");
  if (k == M) return 1.0;
  const double expo = (std::log(beta) - std::log(static_cast<double>(M)) - log_binomial(M, k)) /
                      static_cast<double>(M - k);
  return std::clamp(-std::expm1(expo), 0.0, 1.0);
}

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string Certificate::statement() const {
  return "P[V(theta_tilde) > " + shortest(epsilon) + "] <= " + shortest(beta) + "  (M=" + std::to_string(M) +
         ", k*=" + std::to_string(k_star) + ")" + (vacuous ? "  [vacuous]" : "");
}

Certificate certify(std::int64_t k_star, std::int64_t M, double beta, bool assumption_holds) {
  if (!assumption_holds) {
    throw Error(ErrorCode::AssumptionViolated,
                "tuned policy violates the state constraints on a training scenario; no certificate issued");
  }
  Certificate c;
  c.M = M;
  c.k_star = k_star;
  c.beta = beta;
  c.epsilon = epsilon_of_k(k_star, M, beta);
  c.vacuous = c.epsilon >= 1.0;
  return c;
}

ValidationReport summarize(std::span<const TrajectoryBundle> runs, const MPCModel<double>& model) {
  ValidationReport r;
  r.count = static_cast<std::int64_t>(runs.size());
  if (runs.empty()) return r;
  r.metrics = violation_metrics(runs, model);
  r.violation_fraction = r.metrics.ratio;
  double cost = 0.0;
  for (const auto& b : runs) cost += b.total_cost();
  r.mean_cost = cost / static_cast<double>(runs.size());
  return r;
}

ValidationReport validate_empirical(const ThetaParams<double>& theta, std::span<const Scenario> fresh,
                                    const MPCModel<double>& model, const PlantDef& plant, int threads) {
  const auto runs =
      parallel_map(fresh.size(), threads, [&](std::size_t i) { return simulate(model, theta, plant, fresh[i]); });
  return summarize(runs, model);
}

}  // namespace mpctune
