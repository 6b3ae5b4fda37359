#pragma once

/**
 * @file
 * @brief Conservative Jacobians of QP solutions with respect to problem parameters.
 *
 * The dual optimizer is the fixed point z = Π(z − γ(Hz + h)) of a projected gradient step,
 * with Π the projection onto {λ ≥ 0}. Differentiating it with the selection
 * T = diag(sign(λ), 1, …, 1) gives
 *
 *   (T(I − γH) − I) J_z = γ T (A z + B),
 *
 * i.e. J_z = −U⁻¹V with U = T(I − γH) − I and V = −γT(Az + B). The primal Jacobian then
 * follows from the recovery map y = −Q⁻¹(Cᵀz + q): J_y = W − Q⁻¹Cᵀ J_z.
 */

#include <Eigen/Dense>

#include <vector>

#include "mpctune/errors.hpp"
#include "mpctune/qp.hpp"

namespace mpctune {

/// Diagonal of T: sign(λ_i) with sign(0) = 0 (activity-thresholded), then ones for equalities.
template <typename Scalar>
struct SignSelector {
  VectorX<Scalar> diag;

  static SignSelector from_solution(const PrimalDualSolution<Scalar>& sol) {
    SignSelector s;
    s.diag = VectorX<Scalar>::Ones(sol.lambda.size() + sol.mu.size());
    s.diag.head(sol.lambda.size()).setZero();
    for (Index i : sol.active_set) s.diag(i) = Scalar(1);
    return s;
  }
};

/**
 * Parameter Jacobians of the dual problem data at the solution. Columns are indexed by the
 * parameter vector p̄. The H-Jacobian is stored already contracted with the dual solution:
 * column j of `Az` is (∂H/∂p̄_j)·z.
 */
template <typename Scalar>
struct ParamJacobians {
  MatrixX<Scalar> Az;
  MatrixX<Scalar> B;
  MatrixX<Scalar> W;
  Scalar gamma{0};

  Index num_params() const { return B.cols(); }
};

/// Derivatives of (Q, q, G, g, F, φ) with respect to each parameter. Empty entries in the
/// per-parameter matrix stacks mean "does not depend on this parameter".
template <typename Scalar>
struct QPDataDerivatives {
  Index num_params{0};
  std::vector<MatrixX<Scalar>> dQ;
  std::vector<MatrixX<Scalar>> dG;
  std::vector<MatrixX<Scalar>> dF;
  MatrixX<Scalar> dq;    // n_y × n_p
  MatrixX<Scalar> dg;    // n_in × n_p
  MatrixX<Scalar> dphi;  // n_eq × n_p

  static QPDataDerivatives zeros(const StandardQP<Scalar>& qp, Index num_params) {
    QPDataDerivatives d;
    d.num_params = num_params;
    d.dQ.resize(num_params);
    d.dG.resize(num_params);
    d.dF.resize(num_params);
    d.dq = MatrixX<Scalar>::Zero(qp.num_variables(), num_params);
    d.dg = MatrixX<Scalar>::Zero(qp.num_inequalities(), num_params);
    d.dphi = MatrixX<Scalar>::Zero(qp.num_equalities(), num_params);
    return d;
  }
};

/// Contract an explicit stack {∂H/∂p̄_j} with z into the `Az` layout.
template <typename Scalar>
MatrixX<Scalar> contract_stack(const std::vector<MatrixX<Scalar>>& stack, const VectorX<Scalar>& z) {
  MatrixX<Scalar> out(z.size(), static_cast<Index>(stack.size()));
  for (Index j = 0; j < static_cast<Index>(stack.size()); ++j) {
    if (stack[j].size() == 0) {
      out.col(j).setZero();
    } else {
      out.col(j) = stack[j] * z;
    }
  }
  return out;
}

/// γ = 1 / (‖H‖₂ + 1).
template <typename Scalar>
Scalar default_gamma(const MatrixX<Scalar>& H) {
  if (H.size() == 0) return Scalar(1);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(H, Eigen::EigenvaluesOnly);
  const Scalar norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  return Scalar(1) / (norm + Scalar(1));
}

/// Assemble A·z, B and W in closed form from derivatives of the QP data.
template <typename Scalar>
ParamJacobians<Scalar> param_jacobians(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol,
                                       const QPDataDerivatives<Scalar>& dd, const LagrangeDual<Scalar>& dual,
                                       Scalar gamma) {
  const Index n = qp.num_variables();
  const Index n_in = qp.num_inequalities();
  const Index n_eq = qp.num_equalities();
  const Index np = dd.num_params;
  if (dd.dq.rows() != n || dd.dg.rows() != n_in || dd.dphi.rows() != n_eq || dd.dq.cols() != np ||
      dd.dg.cols() != np || dd.dphi.cols() != np || static_cast<Index>(dd.dQ.size()) != np ||
      static_cast<Index>(dd.dG.size()) != np || static_cast<Index>(dd.dF.size()) != np) {
    throw Error(ErrorCode::DimensionMismatch, "QP data derivatives do not match the QP");
  }
  const VectorX<Scalar> z = sol.z();
  const VectorX<Scalar> u = dual.y_unconstrained - sol.y;  // Q⁻¹Cᵀz

  ParamJacobians<Scalar> pj;
  pj.gamma = gamma;
  pj.W.resize(n, np);
  pj.Az.resize(n_in + n_eq, np);
  pj.B.resize(n_in + n_eq, np);

  for (Index j = 0; j < np; ++j) {
    // dC, dC y, dCᵀz and dQ-terms for this direction
    VectorX<Scalar> dCy = VectorX<Scalar>::Zero(n_in + n_eq);
    VectorX<Scalar> dCu = VectorX<Scalar>::Zero(n_in + n_eq);
    VectorX<Scalar> dCyu = VectorX<Scalar>::Zero(n_in + n_eq);
    VectorX<Scalar> dCtz = VectorX<Scalar>::Zero(n);
    if (dd.dG[j].size() != 0) {
      dCy.head(n_in) = dd.dG[j] * sol.y;
      dCu.head(n_in) = dd.dG[j] * u;
      dCyu.head(n_in) = dd.dG[j] * dual.y_unconstrained;
      dCtz += dd.dG[j].transpose() * sol.lambda;
    }
    if (dd.dF[j].size() != 0) {
      dCy.tail(n_eq) = dd.dF[j] * sol.y;
      dCu.tail(n_eq) = dd.dF[j] * u;
      dCyu.tail(n_eq) = dd.dF[j] * dual.y_unconstrained;
      dCtz += dd.dF[j].transpose() * sol.mu;
    }
    VectorX<Scalar> dQy = VectorX<Scalar>::Zero(n);
    VectorX<Scalar> dQu = VectorX<Scalar>::Zero(n);
    VectorX<Scalar> dQyu = VectorX<Scalar>::Zero(n);
    if (dd.dQ[j].size() != 0) {
      dQy = dd.dQ[j] * sol.y;
      dQu = dd.dQ[j] * u;
      dQyu = dd.dQ[j] * dual.y_unconstrained;
    }
    VectorX<Scalar> dc(n_in + n_eq);
    dc << dd.dg.col(j), dd.dphi.col(j);

    pj.W.col(j) = -(dual.Qinv * (dQy + dCtz + dd.dq.col(j)));
    pj.Az.col(j) = dCu + dual.C * (dual.Qinv * (dCtz - dQu));
    pj.B.col(j) = dc - dCyu + dual.C * (dual.Qinv * (dQyu + dd.dq.col(j)));
  }
  return pj;
}

template <typename Scalar>
ParamJacobians<Scalar> param_jacobians(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol,
                                       const QPDataDerivatives<Scalar>& dd) {
  const LagrangeDual<Scalar> dual = make_dual(qp);
  return param_jacobians(qp, sol, dd, dual, default_gamma(dual.H));
}

/// Rows of the dual Jacobian J_z = −U⁻¹V; throws SingularU if U is numerically singular.
template <typename Scalar>
MatrixX<Scalar> dual_jacobian(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol,
                              const ParamJacobians<Scalar>& pj, const LagrangeDual<Scalar>& dual) {
  const Index nz = qp.num_constraints();
  if (pj.Az.rows() != nz || pj.B.rows() != nz || pj.Az.cols() != pj.B.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter Jacobians do not match the QP");
  }
  if (!(pj.gamma > Scalar(0))) throw Error(ErrorCode::InvalidArgs, "gamma must be positive");
  const VectorX<Scalar> T = SignSelector<Scalar>::from_solution(sol).diag;

  const MatrixX<Scalar> U =
      T.asDiagonal() * (MatrixX<Scalar>::Identity(nz, nz) - pj.gamma * dual.H) - MatrixX<Scalar>::Identity(nz, nz);
  const MatrixX<Scalar> V = -pj.gamma * (T.asDiagonal() * (pj.Az + pj.B));
  if (nz == 0) return MatrixX<Scalar>::Zero(0, pj.B.cols());

  Eigen::FullPivLU<MatrixX<Scalar>> lu(U);
  const Scalar rcond = lu.rcond();
  if (!(rcond * Scalar(1e12) >= Scalar(1))) {
    throw Error(ErrorCode::SingularU, "fixed-point system is singular (weakly active or degenerate solution)");
  }
  MatrixX<Scalar> Jz = -lu.solve(V);
  // inactive rows are exactly zero
  for (Index i = 0; i < nz; ++i) {
    if (T(i) == Scalar(0)) Jz.row(i).setZero();
  }
  return Jz;
}

template <typename Scalar>
MatrixX<Scalar> dual_jacobian(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol,
                              const ParamJacobians<Scalar>& pj) {
  return dual_jacobian(qp, sol, pj, make_dual(qp));
}

/// J_y = W − Q⁻¹[Gᵀ Fᵀ] J_z.
template <typename Scalar>
MatrixX<Scalar> primal_jacobian(const StandardQP<Scalar>& qp, const ParamJacobians<Scalar>& pj,
                                const MatrixX<Scalar>& Jz, const LagrangeDual<Scalar>& dual) {
  if (Jz.rows() != qp.num_constraints() || Jz.cols() != pj.W.cols() || pj.W.rows() != qp.num_variables()) {
    throw Error(ErrorCode::DimensionMismatch, "dual Jacobian does not match the QP");
  }
  return pj.W - dual.Qinv * (dual.C.transpose() * Jz);
}

template <typename Scalar>
MatrixX<Scalar> primal_jacobian(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>&,
                                const ParamJacobians<Scalar>& pj, const MatrixX<Scalar>& Jz) {
  return primal_jacobian(qp, pj, Jz, make_dual(qp));
}

/// max |T(I − γH)J_z − J_z − γT(Az + B)|, the fixed-point consistency residual.
template <typename Scalar>
Scalar fixed_point_residual(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol,
                            const ParamJacobians<Scalar>& pj, const MatrixX<Scalar>& Jz) {
  const LagrangeDual<Scalar> dual = make_dual(qp);
  const Index nz = qp.num_constraints();
  if (nz == 0) return Scalar(0);
  const VectorX<Scalar> T = SignSelector<Scalar>::from_solution(sol).diag;
  const MatrixX<Scalar> lhs = T.asDiagonal() * ((MatrixX<Scalar>::Identity(nz, nz) - pj.gamma * dual.H) * Jz) - Jz -
                              pj.gamma * (T.asDiagonal() * (pj.Az + pj.B));
  return lhs.cwiseAbs().maxCoeff();
}

extern template struct ParamJacobians<double>;
extern template MatrixX<double> dual_jacobian(const StandardQP<double>&, const PrimalDualSolution<double>&,
                                              const ParamJacobians<double>&, const LagrangeDual<double>&);

}  // namespace mpctune
