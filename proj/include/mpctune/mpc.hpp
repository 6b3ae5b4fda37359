#pragma once

/**
 * @file
 * @brief Parameterized linear MPC policy as a standard-form QP, and its sensitivities.
 *
 * Decision vector y = (z_1, …, z_N, v_0, …, v_{N−1}, s_1, …, s_N) with predicted states z_k,
 * inputs v_k and nonnegative slacks s_k on the state constraints. The policy applies v_0.
 *
 *   min  Σ_{k<N} ‖z_k‖²_{Q_x} + ‖v_k‖²_R + ‖z_N‖²_P + w₁·1ᵀs + w₂·‖s‖²
 *   s.t. z_{k+1} = A z_k + B v_k,  z_0 = x_t
 *        H_x z_k ≤ h_x − η²_{x,k} + s_k   (k = 1..N)
 *        H_u v_k ≤ h_u − η²_{u,k}         (k = 0..N−1)
 *        s ≥ 0
 *
 * with P = L_P L_Pᵀ + ε I and R = L_R L_Rᵀ + ε I.
 */

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

#include "mpctune/errors.hpp"
#include "mpctune/qp.hpp"
#include "mpctune/qp_diff.hpp"

namespace mpctune {

template <typename Scalar>
struct MPCModel {
  MatrixX<Scalar> A;
  MatrixX<Scalar> B;
  MatrixX<Scalar> H_x;
  VectorX<Scalar> h_x;
  MatrixX<Scalar> H_u;
  VectorX<Scalar> h_u;
  MatrixX<Scalar> Q_x;
  int N{1};
  Scalar soft_weight_l1{1e3};
  Scalar soft_weight_l2{1e-2};
  /// Tighten the terminal state constraint with the last row of η_x (otherwise z_N uses h_x).
  bool tighten_terminal{true};

  Index n_x() const { return A.rows(); }
  Index n_u() const { return B.cols(); }
  Index n_cx() const { return H_x.rows(); }
  Index n_cu() const { return H_u.rows(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgs, "MPC model: " + m); };
    if (A.cols() != A.rows()) fail("A must be square");
    if (B.rows() != A.rows()) fail("B must have n_x rows");
    if (H_x.rows() != h_x.size() || (H_x.rows() > 0 && H_x.cols() != n_x())) fail("H_x/h_x dimensions");
    if (H_u.rows() != h_u.size() || (H_u.rows() > 0 && H_u.cols() != n_u())) fail("H_u/h_u dimensions");
    if (Q_x.rows() != n_x() || Q_x.cols() != n_x()) fail("Q_x must be n_x × n_x");
    if (N < 1) fail("horizon N must be at least 1");
    if (!(soft_weight_l1 > 0) || !(soft_weight_l2 > 0)) fail("soft weights must be positive");
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(Q_x, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0)) fail("Q_x must be positive definite");
  }
};

/// Index bookkeeping of the raw parameter vector θ = (vech L_P, vech L_R, vec η_x, vec η_u).
/// Lower-triangular factors are stored row by row; η matrices row-major.
struct ThetaLayout {
  Index n_x{0}, n_u{0}, N{0}, n_cx{0}, n_cu{0};

  template <typename Scalar>
  static ThetaLayout of(const MPCModel<Scalar>& m) {
    return {m.n_x(), m.n_u(), m.N, m.n_cx(), m.n_cu()};
  }

  static Index tri(Index n) { return n * (n + 1) / 2; }
  Index offset_LP() const { return 0; }
  Index offset_LR() const { return tri(n_x); }
  Index offset_eta_x() const { return tri(n_x) + tri(n_u); }
  Index offset_eta_u() const { return offset_eta_x() + N * n_cx; }
  Index size() const { return offset_eta_u() + N * n_cu; }
  /// Position of L(i, j), j ≤ i, inside its factor block.
  static Index tri_index(Index i, Index j) { return i * (i + 1) / 2 + j; }
};

template <typename Scalar>
struct ThetaParams {
  static constexpr double eps_pd = 1e-6;

  MatrixX<Scalar> L_P;
  MatrixX<Scalar> L_R;
  MatrixX<Scalar> eta_x;  // N × n_cx
  MatrixX<Scalar> eta_u;  // N × n_cu

  MatrixX<Scalar> P() const {
    return L_P * L_P.transpose() + Scalar(eps_pd) * MatrixX<Scalar>::Identity(L_P.rows(), L_P.rows());
  }
  MatrixX<Scalar> R() const {
    return L_R * L_R.transpose() + Scalar(eps_pd) * MatrixX<Scalar>::Identity(L_R.rows(), L_R.rows());
  }

  ThetaLayout layout() const { return {L_P.rows(), L_R.rows(), eta_x.rows(), eta_x.cols(), eta_u.cols()}; }
  Index size() const { return layout().size(); }

  VectorX<Scalar> to_vector() const {
    const ThetaLayout lay = layout();
    VectorX<Scalar> v(lay.size());
    for (Index i = 0; i < lay.n_x; ++i)
      for (Index j = 0; j <= i; ++j) v(lay.offset_LP() + ThetaLayout::tri_index(i, j)) = L_P(i, j);
    for (Index i = 0; i < lay.n_u; ++i)
      for (Index j = 0; j <= i; ++j) v(lay.offset_LR() + ThetaLayout::tri_index(i, j)) = L_R(i, j);
    for (Index k = 0; k < lay.N; ++k) {
      for (Index r = 0; r < lay.n_cx; ++r) v(lay.offset_eta_x() + k * lay.n_cx + r) = eta_x(k, r);
      for (Index r = 0; r < lay.n_cu; ++r) v(lay.offset_eta_u() + k * lay.n_cu + r) = eta_u(k, r);
    }
    return v;
  }

  static ThetaParams from_vector(const ThetaLayout& lay, const VectorX<Scalar>& v) {
    if (v.size() != lay.size()) {
      throw Error(ErrorCode::DimensionMismatch, "theta vector has " + std::to_string(v.size()) +
                                                    " entries, expected " + std::to_string(lay.size()));
    }
    ThetaParams t;
    t.L_P = MatrixX<Scalar>::Zero(lay.n_x, lay.n_x);
    t.L_R = MatrixX<Scalar>::Zero(lay.n_u, lay.n_u);
    t.eta_x.resize(lay.N, lay.n_cx);
    t.eta_u.resize(lay.N, lay.n_cu);
    for (Index i = 0; i < lay.n_x; ++i)
      for (Index j = 0; j <= i; ++j) t.L_P(i, j) = v(lay.offset_LP() + ThetaLayout::tri_index(i, j));
    for (Index i = 0; i < lay.n_u; ++i)
      for (Index j = 0; j <= i; ++j) t.L_R(i, j) = v(lay.offset_LR() + ThetaLayout::tri_index(i, j));
    for (Index k = 0; k < lay.N; ++k) {
      for (Index r = 0; r < lay.n_cx; ++r) t.eta_x(k, r) = v(lay.offset_eta_x() + k * lay.n_cx + r);
      for (Index r = 0; r < lay.n_cu; ++r) t.eta_u(k, r) = v(lay.offset_eta_u() + k * lay.n_cu + r);
    }
    return t;
  }

  /// L_P = chol(Q_x), L_R = 0.1·I, η = 0: a plain nominal MPC.
  static ThetaParams initial(const MPCModel<Scalar>& model) {
    ThetaParams t;
    t.L_P = Eigen::LLT<MatrixX<Scalar>>(model.Q_x).matrixL();
    t.L_R = Scalar(0.1) * MatrixX<Scalar>::Identity(model.n_u(), model.n_u());
    t.eta_x = MatrixX<Scalar>::Zero(model.N, model.n_cx());
    t.eta_u = MatrixX<Scalar>::Zero(model.N, model.n_cu());
    return t;
  }
};

/// Clamp every raw entry to [−box, box] and every tightening to η² ≤ h (nonempty sets at 0).
template <typename Scalar>
VectorX<Scalar> project_theta(const MPCModel<Scalar>& model, const VectorX<Scalar>& theta, Scalar box) {
  using std::sqrt;
  const ThetaLayout lay = ThetaLayout::of(model);
  VectorX<Scalar> out = theta.cwiseMax(-box).cwiseMin(box);
  for (Index k = 0; k < lay.N; ++k) {
    for (Index r = 0; r < lay.n_cx; ++r) {
      const Scalar lim = sqrt(std::max(model.h_x(r), Scalar(0)));
      Scalar& e = out(lay.offset_eta_x() + k * lay.n_cx + r);
      e = std::min(std::max(e, -lim), lim);
    }
    for (Index r = 0; r < lay.n_cu; ++r) {
      const Scalar lim = sqrt(std::max(model.h_u(r), Scalar(0)));
      Scalar& e = out(lay.offset_eta_u() + k * lay.n_cu + r);
      e = std::min(std::max(e, -lim), lim);
    }
  }
  return out;
}

/// Offsets of the blocks of y and of the constraint rows in the condensed QP.
struct MPCLayout {
  Index n_x, n_u, N, n_cx, n_cu;

  template <typename Scalar>
  static MPCLayout of(const MPCModel<Scalar>& m) {
    return {m.n_x(), m.n_u(), m.N, m.n_cx(), m.n_cu()};
  }

  Index z(Index k) const { return (k - 1) * n_x; }              // k = 1..N
  Index v(Index k) const { return N * n_x + k * n_u; }          // k = 0..N−1
  Index s(Index k) const { return N * (n_x + n_u) + (k - 1) * n_cx; }  // k = 1..N
  Index num_variables() const { return N * (n_x + n_u + n_cx); }

  Index state_row(Index k) const { return (k - 1) * n_cx; }
  Index input_row(Index k) const { return N * n_cx + k * n_cu; }
  Index slack_row(Index k) const { return N * (n_cx + n_cu) + (k - 1) * n_cx; }
  Index num_inequalities() const { return N * (2 * n_cx + n_cu); }
  Index num_equalities() const { return N * n_x; }
};

template <typename Scalar>
StandardQP<Scalar> condense(const MPCModel<Scalar>& model, const ThetaParams<Scalar>& theta,
                            const VectorX<Scalar>& x_t) {
  const MPCLayout L = MPCLayout::of(model);
  if (x_t.size() != L.n_x) throw Error(ErrorCode::DimensionMismatch, "state has the wrong dimension");
  if (theta.layout().size() != ThetaLayout::of(model).size() || theta.L_P.rows() != L.n_x ||
      theta.eta_x.rows() != L.N || theta.eta_u.rows() != L.N) {
    throw Error(ErrorCode::DimensionMismatch, "theta does not match the MPC model");
  }
  const Index n = L.num_variables();
  StandardQP<Scalar> qp;
  qp.Q = MatrixX<Scalar>::Zero(n, n);
  qp.q = VectorX<Scalar>::Zero(n);
  const MatrixX<Scalar> P = theta.P();
  const MatrixX<Scalar> R = theta.R();
  for (Index k = 1; k < L.N; ++k) qp.Q.block(L.z(k), L.z(k), L.n_x, L.n_x) = Scalar(2) * model.Q_x;
  qp.Q.block(L.z(L.N), L.z(L.N), L.n_x, L.n_x) = Scalar(2) * P;
  for (Index k = 0; k < L.N; ++k) qp.Q.block(L.v(k), L.v(k), L.n_u, L.n_u) = Scalar(2) * R;
  for (Index k = 1; k <= L.N; ++k) {
    for (Index r = 0; r < L.n_cx; ++r) {
      qp.Q(L.s(k) + r, L.s(k) + r) = Scalar(2) * model.soft_weight_l2;
      qp.q(L.s(k) + r) = model.soft_weight_l1;
    }
  }

  qp.G = MatrixX<Scalar>::Zero(L.num_inequalities(), n);
  qp.g = VectorX<Scalar>::Zero(L.num_inequalities());
  for (Index k = 1; k <= L.N; ++k) {
    const Index row = L.state_row(k);
    qp.G.block(row, L.z(k), L.n_cx, L.n_x) = model.H_x;
    qp.G.block(row, L.s(k), L.n_cx, L.n_cx) = -MatrixX<Scalar>::Identity(L.n_cx, L.n_cx);
    const bool tightened = k < L.N || model.tighten_terminal;
    for (Index r = 0; r < L.n_cx; ++r) {
      const Scalar e = theta.eta_x(k - 1, r);
      qp.g(row + r) = model.h_x(r) - (tightened ? e * e : Scalar(0));
    }
    qp.G.block(L.slack_row(k), L.s(k), L.n_cx, L.n_cx) = -MatrixX<Scalar>::Identity(L.n_cx, L.n_cx);
  }
  for (Index k = 0; k < L.N; ++k) {
    const Index row = L.input_row(k);
    qp.G.block(row, L.v(k), L.n_cu, L.n_u) = model.H_u;
    for (Index r = 0; r < L.n_cu; ++r) {
      const Scalar e = theta.eta_u(k, r);
      qp.g(row + r) = model.h_u(r) - e * e;
    }
  }

  qp.F = MatrixX<Scalar>::Zero(L.num_equalities(), n);
  qp.phi = VectorX<Scalar>::Zero(L.num_equalities());
  const MatrixX<Scalar> I = MatrixX<Scalar>::Identity(L.n_x, L.n_x);
  for (Index k = 0; k < L.N; ++k) {
    const Index row = k * L.n_x;
    qp.F.block(row, L.z(k + 1), L.n_x, L.n_x) = I;
    qp.F.block(row, L.v(k), L.n_x, L.n_u) = -model.B;
    if (k == 0) {
      qp.phi.segment(row, L.n_x) = model.A * x_t;
    } else {
      qp.F.block(row, L.z(k), L.n_x, L.n_x) = -model.A;
    }
  }
  return qp;
}

/**
 * Closed-form derivatives of the condensed QP data with respect to p̄ = (x_t, θ): x_t enters φ,
 * the cost factors enter Q, the tightenings enter g through −2η. G and F are constant.
 */
template <typename Scalar>
QPDataDerivatives<Scalar> condense_derivatives(const MPCModel<Scalar>& model, const ThetaParams<Scalar>& theta,
                                               const StandardQP<Scalar>& qp) {
  const MPCLayout L = MPCLayout::of(model);
  const ThetaLayout TL = ThetaLayout::of(model);
  const Index nth = TL.size();
  auto dd = QPDataDerivatives<Scalar>::zeros(qp, L.n_x + nth);
  const Index n = qp.num_variables();

  for (Index j = 0; j < L.n_x; ++j) dd.dphi.block(0, j, L.n_x, 1) = model.A.col(j);

  // d(LLᵀ)/dL_ij = E_ij Lᵀ + L E_ji
  auto dfactor = [](const MatrixX<Scalar>& Lf, Index i, Index j) {
    MatrixX<Scalar> d = MatrixX<Scalar>::Zero(Lf.rows(), Lf.rows());
    d.row(i) += Lf.col(j).transpose();
    d.col(i) += Lf.col(j);
    return d;
  };
  for (Index i = 0; i < L.n_x; ++i) {
    for (Index j = 0; j <= i; ++j) {
      MatrixX<Scalar> dQ = MatrixX<Scalar>::Zero(n, n);
      dQ.block(L.z(L.N), L.z(L.N), L.n_x, L.n_x) = Scalar(2) * dfactor(theta.L_P, i, j);
      dd.dQ[L.n_x + TL.offset_LP() + ThetaLayout::tri_index(i, j)] = std::move(dQ);
    }
  }
  for (Index i = 0; i < L.n_u; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const MatrixX<Scalar> dR = Scalar(2) * dfactor(theta.L_R, i, j);
      MatrixX<Scalar> dQ = MatrixX<Scalar>::Zero(n, n);
      for (Index k = 0; k < L.N; ++k) dQ.block(L.v(k), L.v(k), L.n_u, L.n_u) = dR;
      dd.dQ[L.n_x + TL.offset_LR() + ThetaLayout::tri_index(i, j)] = std::move(dQ);
    }
  }
  for (Index k = 1; k <= L.N; ++k) {
    if (k == L.N && !model.tighten_terminal) continue;
    for (Index r = 0; r < L.n_cx; ++r) {
      dd.dg(L.state_row(k) + r, L.n_x + TL.offset_eta_x() + (k - 1) * L.n_cx + r) =
          -Scalar(2) * theta.eta_x(k - 1, r);
    }
  }
  for (Index k = 0; k < L.N; ++k) {
    for (Index r = 0; r < L.n_cu; ++r) {
      dd.dg(L.input_row(k) + r, L.n_x + TL.offset_eta_u() + k * L.n_cu + r) = -Scalar(2) * theta.eta_u(k, r);
    }
  }
  return dd;
}

template <typename Scalar>
struct MPCResult {
  VectorX<Scalar> u;
  PrimalDualSolution<Scalar> sol;
};

template <typename Scalar>
struct MPCJacobians {
  MatrixX<Scalar> J_x;      // n_u × n_x
  MatrixX<Scalar> J_theta;  // n_u × dim θ
};

/// Apply v_0 of the optimal plan. `warm_start` is a guess of active inequality rows.
template <typename Scalar>
MPCResult<Scalar> mpc_solve(const MPCModel<Scalar>& model, const ThetaParams<Scalar>& theta,
                            const VectorX<Scalar>& x_t, std::span<const Index> warm_start = {},
                            Scalar tol = Scalar(1e-9)) {
  const StandardQP<Scalar> qp = condense(model, theta, x_t);
  MPCResult<Scalar> out;
  out.sol = solve_qp(qp, tol, warm_start);
  out.u = out.sol.y.segment(MPCLayout::of(model).v(0), model.n_u());
  return out;
}

template <typename Scalar>
MPCJacobians<Scalar> mpc_jacobians(const MPCModel<Scalar>& model, const ThetaParams<Scalar>& theta,
                                   const VectorX<Scalar>& x_t, const PrimalDualSolution<Scalar>& sol) {
  const StandardQP<Scalar> qp = condense(model, theta, x_t);
  const LagrangeDual<Scalar> dual = make_dual(qp);
  const QPDataDerivatives<Scalar> dd = condense_derivatives(model, theta, qp);
  const ParamJacobians<Scalar> pj = param_jacobians(qp, sol, dd, dual, default_gamma(dual.H));
  const MatrixX<Scalar> Jz = dual_jacobian(qp, sol, pj, dual);
  const Index v0 = MPCLayout::of(model).v(0);
  const Index nu = model.n_u();
  // only the v_0 rows of J_y = W − Q⁻¹Cᵀ J_z are needed
  const MatrixX<Scalar> Jv0 =
      pj.W.middleRows(v0, nu) - dual.Qinv.middleRows(v0, nu) * (dual.C.transpose() * Jz);
  MPCJacobians<Scalar> out;
  out.J_x = Jv0.leftCols(model.n_x());
  out.J_theta = Jv0.rightCols(Jv0.cols() - model.n_x());
  return out;
}

/// Stabilizing solution of P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA by Riccati recursion from P = Q.
/// Throws NumericFailure if the recursion does not settle (no stabilizing solution).
Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R);

/// L_P = chol(P_∞) for the prediction model with input weight r·I, L_R = √r·I, η = 0. Without
/// active constraints the MPC then applies the infinite-horizon LQR gain.
ThetaParams<double> riccati_theta(const MPCModel<double>& model, double r);

extern template struct MPCModel<double>;
extern template struct ThetaParams<double>;
extern template StandardQP<double> condense(const MPCModel<double>&, const ThetaParams<double>&, const Vector&);
extern template MPCResult<double> mpc_solve(const MPCModel<double>&, const ThetaParams<double>&, const Vector&,
                                            std::span<const Index>, double);
extern template MPCJacobians<double> mpc_jacobians(const MPCModel<double>&, const ThetaParams<double>&,
                                                   const Vector&, const PrimalDualSolution<double>&);

}  // namespace mpctune
