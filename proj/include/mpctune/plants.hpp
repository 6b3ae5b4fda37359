#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpctune/qp.hpp"

namespace mpctune {

enum class JacobianMode { Analytic, FiniteDifference };

using StateMap = std::function<Vector(const Vector& x, const Vector& u, const Vector& d)>;
using StateJacobian = std::function<std::pair<Matrix, Matrix>(const Vector& x, const Vector& u, const Vector& d)>;

/**
 * True system dynamics x⁺ = f(x, u, d) (before additive noise). Exactly one of
 * `continuous_rhs` (integrated with RK4 over `dt`) and `discrete_map` is set; the matching
 * `*_jacobian` is used in analytic mode.
 */
struct PlantDef {
  std::string name;
  int n_x{0}, n_u{0}, n_d{0}, n_w{0};
  StateMap continuous_rhs;
  StateJacobian continuous_jacobian;
  StateMap discrete_map;
  StateJacobian discrete_jacobian;
  double dt{0.0};
  JacobianMode jacobian_mode{JacobianMode::Analytic};
  /// Optional predicate flagging states where the dynamics switch (diagnostics only).
  std::function<bool(const Vector& x)> outside_smooth_region;

  bool is_continuous() const { return static_cast<bool>(continuous_rhs); }
  void validate() const;
};

/// Nominal physical constants have no defaults; they come from the experiment config.
struct CartPendulumParams {
  double mass{std::numeric_limits<double>::quiet_NaN()};      // m̄, total moving mass
  double inertia{std::numeric_limits<double>::quiet_NaN()};   // J̄
  double coupling{std::numeric_limits<double>::quiet_NaN()};  // μ̄
  double gravity{9.81};
  double angle_window{1.5707963267948966};  // trig terms are zero for |φ| beyond this
  double dt{0.05};

  void validate() const;
};

/// State (position, velocity, angle, angular velocity); d scales (m, J, μ) by (1 + d_i).
Vector cartpole_rhs(const CartPendulumParams& p, const Vector& x, const Vector& u, const Vector& d);
std::pair<Matrix, Matrix> cartpole_rhs_jacobian(const CartPendulumParams& p, const Vector& x, const Vector& u,
                                                const Vector& d);
PlantDef make_cart_pendulum(const CartPendulumParams& p, JacobianMode mode = JacobianMode::Analytic);

/// x⁺ = A x + B u; d is ignored.
PlantDef make_linear_plant(const Matrix& A, const Matrix& B);

/// Classical RK4 with zero-order hold on u and constant d.
Vector rk4_step(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d);

/// One step of the discrete-time plant (RK4 for continuous plants), without noise.
Vector plant_step(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d);

struct PlantJacobians {
  Matrix dfdx;
  Matrix dfdu;
};

/// Jacobians of the discrete map; finite-difference mode uses central differences with step
/// 1e−6·(1 + ‖x‖).
PlantJacobians plant_jacobians(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d);
PlantJacobians plant_jacobians(const PlantDef& plant, const Vector& x, const Vector& u, const Vector& d,
                               JacobianMode mode);

struct Interval {
  double lo{0.0};
  double hi{0.0};
};

struct ScenarioSpec {
  std::vector<Interval> noise_box;   // n_w
  std::vector<Interval> d_box;       // n_d
  Vector x0_mean;                    // n_x
  std::vector<Interval> x0_perturb;  // n_x
  int T{0};
  std::uint64_t seed{0};

  void validate() const;
};

struct Scenario {
  Matrix w;  // T × n_w
  Vector d;
  Vector x0;
  std::int64_t id{0};
};

/// Counter-based stream: draw `counter` of stream (seed, index). Independent of how many
/// scenarios are drawn and in which order.
double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

Scenario sample_scenario(const ScenarioSpec& spec, std::int64_t id);
std::vector<Scenario> sample_dataset(const ScenarioSpec& spec, std::int64_t M);

/// w = 0, d = 0, x0 = mean.
Scenario nominal_scenario(const ScenarioSpec& spec, int n_d);

}  // namespace mpctune
