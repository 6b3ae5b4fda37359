#include "mpctune/config.hpp"

#include <cmath>
#include <string>

#include <yaml-cpp/yaml.h>

#include "mpctune/errors.hpp"

namespace mpctune {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    const auto mark = node.Mark();
    std::string where = source_;
    if (mark.line >= 0) where += ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
    throw Error(ErrorCode::Config, where + ": " + msg);
  }

  YAML::Node child(const YAML::Node& map, const std::string& key, const std::string& path) const {
    if (!map.IsMap()) fail(map, path + " must be a mapping");
    const YAML::Node n = map[key];
    if (!n) fail(map, "missing key '" + join(path, key) + "'");
    return n;
  }

  YAML::Node optional(const YAML::Node& map, const std::string& key) const {
    if (!map.IsMap()) fail(map, "expected a mapping");
    return map[key];
  }

  double scalar(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + " must be a number");
    try {
      const double v = n.as<double>();
      if (!std::isfinite(v)) fail(n, what + " must be finite");
      return v;
    } catch (const YAML::Exception&) {
      fail(n, what + " must be a number, got '" + n.Scalar() + "'");
    }
  }

  std::int64_t integer(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + " must be an integer");
    try {
      return n.as<std::int64_t>();
    } catch (const YAML::Exception&) {
      fail(n, what + " must be an integer, got '" + n.Scalar() + "'");
    }
  }

  bool boolean(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, what + " must be true or false");
    }
  }

  std::string text(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + " must be a string");
    return n.Scalar();
  }

  Vector vector(const YAML::Node& n, const std::string& what) const {
    if (!n.IsSequence()) fail(n, what + " must be a list of numbers");
    Vector v(static_cast<Index>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) v(static_cast<Index>(i)) = scalar(n[i], what);
    return v;
  }

  /// Either a list of rows, or {diag: [...]}.
  Matrix matrix(const YAML::Node& n, const std::string& what) const {
    if (n.IsMap()) {
      const Vector d = vector(child(n, "diag", what), what + ".diag");
      return d.asDiagonal();
    }
    if (!n.IsSequence()) fail(n, what + " must be a list of rows");
    if (n.size() == 0) return Matrix(0, 0);
    const std::size_t cols = n[0].IsSequence() ? n[0].size() : 0;
    Matrix m(static_cast<Index>(n.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (!n[i].IsSequence() || n[i].size() != cols) fail(n[i], what + ": every row needs " + std::to_string(cols) + " entries");
      for (std::size_t j = 0; j < cols; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = scalar(n[i][j], what);
    }
    return m;
  }

  std::vector<Interval> intervals(const YAML::Node& n, const std::string& what) const {
    if (!n.IsSequence()) fail(n, what + " must be a list of [lo, hi] pairs");
    std::vector<Interval> out;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const YAML::Node& e = n[i];
      Interval iv;
      if (e.IsScalar()) {
        iv.lo = iv.hi = scalar(e, what);
      } else if (e.IsSequence() && e.size() == 2) {
        iv.lo = scalar(e[0], what);
        iv.hi = scalar(e[1], what);
      } else {
        fail(e, what + ": entry must be a number or [lo, hi]");
      }
      if (iv.lo > iv.hi) fail(e, what + ": lo must not exceed hi");
      out.push_back(iv);
    }
    return out;
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  std::string source_;
};

void check(bool ok, const Reader& r, const YAML::Node& node, const std::string& msg) {
  if (!ok) r.fail(node, msg);
}

}  // namespace

PlantDef ExperimentConfig::make_plant() const {
  if (plant_kind == PlantKind::Linear) return make_linear_plant(plant_A, plant_B);
  return make_cart_pendulum(cart, jacobian_mode);
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  if (seed == validation_seed) {
    throw Error(ErrorCode::Config, source + ": training seed must differ from seeds.validation");
  }
  scenarios.seed = seed;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  Reader r(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::Config, source + ":" + std::to_string(e.mark.line + 1) + ":" +
                                       std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw Error(ErrorCode::Config, source + ": top level must be a mapping");

  ExperimentConfig cfg;
  cfg.source = source;
  cfg.hash = fnv1a64(text);

  // plant
  const YAML::Node plant = r.child(root, "plant", "");
  const std::string type = r.text(r.child(plant, "type", "plant"), "plant.type");
  if (type == "cart_pendulum") {
    cfg.plant_kind = PlantKind::CartPendulum;
    cfg.cart.mass = r.scalar(r.child(plant, "mass_kg", "plant"), "plant.mass_kg");
    cfg.cart.inertia = r.scalar(r.child(plant, "inertia_kg_m2", "plant"), "plant.inertia_kg_m2");
    cfg.cart.coupling = r.scalar(r.child(plant, "coupling_kg_m", "plant"), "plant.coupling_kg_m");
    if (auto n = r.optional(plant, "gravity_m_s2")) cfg.cart.gravity = r.scalar(n, "plant.gravity_m_s2");
    if (auto n = r.optional(plant, "angle_window_rad")) cfg.cart.angle_window = r.scalar(n, "plant.angle_window_rad");
    if (auto n = r.optional(plant, "dt_s")) cfg.cart.dt = r.scalar(n, "plant.dt_s");
    try {
      cfg.cart.validate();
    } catch (const Error& e) {
      r.fail(plant, e.message());
    }
  } else if (type == "linear") {
    cfg.plant_kind = PlantKind::Linear;
    cfg.plant_A = r.matrix(r.child(plant, "A", "plant"), "plant.A");
    cfg.plant_B = r.matrix(r.child(plant, "B", "plant"), "plant.B");
    check(cfg.plant_A.rows() > 0 && cfg.plant_A.rows() == cfg.plant_A.cols(), r, plant["A"], "plant.A must be square");
    check(cfg.plant_B.rows() == cfg.plant_A.rows() && cfg.plant_B.cols() > 0, r, plant["B"],
          "plant.B must have as many rows as plant.A");
  } else {
    r.fail(plant["type"], "plant.type must be 'cart_pendulum' or 'linear'");
  }
  if (auto n = r.optional(plant, "jacobian")) {
    const std::string mode = r.text(n, "plant.jacobian");
    if (mode == "analytic") {
      cfg.jacobian_mode = JacobianMode::Analytic;
    } else if (mode == "finite_difference") {
      cfg.jacobian_mode = JacobianMode::FiniteDifference;
    } else {
      r.fail(n, "plant.jacobian must be 'analytic' or 'finite_difference'");
    }
  }
  const PlantDef plant_def = cfg.make_plant();
  const Index n_x = plant_def.n_x;
  const Index n_u = plant_def.n_u;

  // mpc
  const YAML::Node mpc = r.child(root, "mpc", "");
  auto& m = cfg.model;
  const YAML::Node horizon = r.child(mpc, "horizon_steps", "mpc");
  m.N = static_cast<int>(r.integer(horizon, "mpc.horizon_steps"));
  check(m.N >= 1, r, horizon, "mpc.horizon_steps must be at least 1");
  const YAML::Node prediction = r.child(mpc, "prediction_model", "mpc");
  if (prediction.IsScalar() && prediction.Scalar() == "linearize") {
    const auto jac = plant_jacobians(plant_def, Vector::Zero(n_x), Vector::Zero(n_u), Vector::Zero(plant_def.n_d),
                                     JacobianMode::Analytic);
    m.A = jac.dfdx;
    m.B = jac.dfdu;
  } else if (prediction.IsScalar() && prediction.Scalar() == "plant" && cfg.plant_kind == PlantKind::Linear) {
    m.A = cfg.plant_A;
    m.B = cfg.plant_B;
  } else if (prediction.IsMap()) {
    m.A = r.matrix(r.child(prediction, "A", "mpc.prediction_model"), "mpc.prediction_model.A");
    m.B = r.matrix(r.child(prediction, "B", "mpc.prediction_model"), "mpc.prediction_model.B");
    check(m.A.rows() == n_x && m.A.cols() == n_x, r, prediction, "prediction A must be n_x × n_x");
    check(m.B.rows() == n_x && m.B.cols() == n_u, r, prediction, "prediction B must be n_x × n_u");
  } else {
    r.fail(prediction, "mpc.prediction_model must be 'linearize', 'plant' (linear plants) or {A, B}");
  }
  const YAML::Node qx = r.child(mpc, "Q_x", "mpc");
  m.Q_x = r.matrix(qx, "mpc.Q_x");
  check(m.Q_x.rows() == n_x && m.Q_x.cols() == n_x, r, qx, "mpc.Q_x must be " + std::to_string(n_x) + "×" + std::to_string(n_x));
  check(Eigen::LLT<Matrix>(m.Q_x).info() == Eigen::Success && m.Q_x.isApprox(m.Q_x.transpose()), r, qx,
        "mpc.Q_x must be symmetric positive definite");
  const YAML::Node sc = r.child(mpc, "state_constraints", "mpc");
  m.H_x = r.matrix(r.child(sc, "H", "mpc.state_constraints"), "mpc.state_constraints.H");
  m.h_x = r.vector(r.child(sc, "h", "mpc.state_constraints"), "mpc.state_constraints.h");
  if (m.H_x.size() == 0) m.H_x.resize(0, n_x);
  check(m.H_x.cols() == n_x && m.H_x.rows() == m.h_x.size(), r, sc,
        "state constraints need H with " + std::to_string(n_x) + " columns and one bound per row");
  const YAML::Node ic = r.child(mpc, "input_constraints", "mpc");
  m.H_u = r.matrix(r.child(ic, "H", "mpc.input_constraints"), "mpc.input_constraints.H");
  m.h_u = r.vector(r.child(ic, "h", "mpc.input_constraints"), "mpc.input_constraints.h");
  if (m.H_u.size() == 0) m.H_u.resize(0, n_u);
  check(m.H_u.cols() == n_u && m.H_u.rows() == m.h_u.size(), r, ic,
        "input constraints need H with " + std::to_string(n_u) + " columns and one bound per row");
  check(m.h_x.size() == 0 || m.h_x.minCoeff() >= 0, r, sc, "state bounds must be nonnegative (origin feasible)");
  check(m.h_u.size() == 0 || m.h_u.minCoeff() >= 0, r, ic, "input bounds must be nonnegative (origin feasible)");
  if (auto n = r.optional(mpc, "soft_weight_l1")) m.soft_weight_l1 = r.scalar(n, "mpc.soft_weight_l1");
  if (auto n = r.optional(mpc, "soft_weight_l2")) m.soft_weight_l2 = r.scalar(n, "mpc.soft_weight_l2");
  if (auto n = r.optional(mpc, "tighten_terminal")) m.tighten_terminal = r.boolean(n, "mpc.tighten_terminal");
  try {
    m.validate();
  } catch (const Error& e) {
    r.fail(mpc, e.message());
  }

  // scenarios
  const YAML::Node scen = r.child(root, "scenarios", "");
  auto& s = cfg.scenarios;
  const YAML::Node T = r.child(scen, "T_steps", "scenarios");
  s.T = static_cast<int>(r.integer(T, "scenarios.T_steps"));
  check(s.T >= 1, r, T, "scenarios.T_steps must be at least 1");
  const YAML::Node xm = r.child(scen, "x0_mean", "scenarios");
  s.x0_mean = r.vector(xm, "scenarios.x0_mean");
  check(s.x0_mean.size() == n_x, r, xm, "scenarios.x0_mean needs " + std::to_string(n_x) + " entries");
  const YAML::Node xp = r.child(scen, "x0_perturb", "scenarios");
  s.x0_perturb = r.intervals(xp, "scenarios.x0_perturb");
  check(static_cast<Index>(s.x0_perturb.size()) == n_x, r, xp, "scenarios.x0_perturb needs " + std::to_string(n_x) + " entries");
  const YAML::Node nb = r.child(scen, "noise_box", "scenarios");
  s.noise_box = r.intervals(nb, "scenarios.noise_box");
  check(static_cast<Index>(s.noise_box.size()) == n_x, r, nb,
        "scenarios.noise_box needs " + std::to_string(n_x) + " entries (noise is additive on the state)");
  if (auto db = r.optional(scen, "d_box")) s.d_box = r.intervals(db, "scenarios.d_box");
  check(static_cast<int>(s.d_box.size()) == plant_def.n_d, r, scen,
        "scenarios.d_box needs " + std::to_string(plant_def.n_d) + " entries for this plant");

  // tuning
  const YAML::Node tun = r.child(root, "tuning", "");
  auto& t = cfg.tuning;
  if (auto n = r.optional(tun, "c")) t.c = r.scalar(n, "tuning.c");
  if (auto n = r.optional(tun, "zeta")) t.zeta = r.scalar(n, "tuning.zeta");
  if (auto n = r.optional(tun, "c1")) t.c1 = r.scalar(n, "tuning.c1");
  if (auto n = r.optional(tun, "c2")) t.c2 = r.scalar(n, "tuning.c2");
  if (auto n = r.optional(tun, "max_it")) t.max_it = static_cast<int>(r.integer(n, "tuning.max_it"));
  if (auto n = r.optional(tun, "nominal_max_it")) t.nominal_max_it = static_cast<int>(r.integer(n, "tuning.nominal_max_it"));
  if (auto n = r.optional(tun, "tol")) t.tol = r.scalar(n, "tuning.tol");
  if (auto n = r.optional(tun, "theta_box")) t.theta_box = r.scalar(n, "tuning.theta_box");
  try {
    t.validate();
  } catch (const Error& e) {
    r.fail(tun, e.message());
  }
  if (auto init = r.optional(tun, "initial_theta")) {
    if (auto n = r.optional(init, "terminal_cost")) {
      const std::string kind = r.text(n, "tuning.initial_theta.terminal_cost");
      if (kind == "riccati") {
        cfg.init_riccati = true;
      } else if (kind != "stage") {
        r.fail(n, "tuning.initial_theta.terminal_cost must be 'stage' or 'riccati'");
      }
    }
    if (auto n = r.optional(init, "eta_x")) cfg.init_eta_x = r.scalar(n, "tuning.initial_theta.eta_x");
    if (auto n = r.optional(init, "eta_u")) cfg.init_eta_u = r.scalar(n, "tuning.initial_theta.eta_u");
    if (auto n = r.optional(init, "input_weight")) {
      cfg.init_input_weight = r.scalar(n, "tuning.initial_theta.input_weight");
      check(*cfg.init_input_weight > 0, r, n, "tuning.initial_theta.input_weight must be positive");
    }
  }

  // certificate and validation
  const YAML::Node cert = r.child(root, "certificate", "");
  const YAML::Node Mn = r.child(cert, "M", "certificate");
  cfg.M = r.integer(Mn, "certificate.M");
  check(cfg.M >= 1, r, Mn, "certificate.M must be at least 1");
  const YAML::Node bn = r.child(cert, "beta", "certificate");
  cfg.beta = r.scalar(bn, "certificate.beta");
  check(cfg.beta > 0 && cfg.beta < 1, r, bn, "certificate.beta must lie in (0, 1)");
  const YAML::Node val = r.child(root, "validation", "");
  const YAML::Node vs = r.child(val, "samples", "validation");
  cfg.validation_samples = r.integer(vs, "validation.samples");
  check(cfg.validation_samples >= 1, r, vs, "validation.samples must be at least 1");

  const YAML::Node seeds = r.child(root, "seeds", "");
  const YAML::Node ds = r.child(seeds, "dataset", "seeds");
  const YAML::Node vsd = r.child(seeds, "validation", "seeds");
  s.seed = static_cast<std::uint64_t>(r.integer(ds, "seeds.dataset"));
  cfg.validation_seed = static_cast<std::uint64_t>(r.integer(vsd, "seeds.validation"));
  check(s.seed != cfg.validation_seed, r, vsd, "seeds.validation must differ from seeds.dataset");

  if (auto out = r.optional(root, "output")) {
    if (auto n = r.optional(out, "directory")) cfg.output_dir = r.text(n, "output.directory");
    if (auto n = r.optional(out, "quantile_coords")) {
      const Vector c = r.vector(n, "output.quantile_coords");
      for (Index i = 0; i < c.size(); ++i) {
        const int ci = static_cast<int>(c(i));
        check(ci >= 0 && ci < n_x && ci == c(i), r, n, "output.quantile_coords must be state indices");
        cfg.quantile_coords.push_back(ci);
      }
    }
  }
  if (cfg.output_dir.empty()) cfg.output_dir = "out";
  if (cfg.quantile_coords.empty()) {
    for (int i = 0; i < n_x; ++i) cfg.quantile_coords.push_back(i);
  }
  if (auto n = r.optional(root, "threads")) {
    t.threads = static_cast<int>(r.integer(n, "threads"));
    check(t.threads >= 1, r, n, "threads must be at least 1");
  }
  return cfg;
}

ThetaParams<double> ExperimentConfig::initial_theta() const {
  ThetaParams<double> t = init_riccati ? riccati_theta(model, init_input_weight.value_or(0.01))
                                        : ThetaParams<double>::initial(model);
  if (!init_riccati && init_input_weight) {
    t.L_R = std::sqrt(*init_input_weight) * Matrix::Identity(model.n_u(), model.n_u());
  }
  if (init_eta_x == 0.0 && init_eta_u == 0.0) return t;
  t.eta_x.setConstant(init_eta_x);
  t.eta_u.setConstant(init_eta_u);
  // keep the tightened sets nonempty
  return ThetaParams<double>::from_vector(t.layout(), project_theta(model, t.to_vector(), tuning.theta_box));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

}  // namespace mpctune
