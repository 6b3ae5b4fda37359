#pragma once

/**
 * @file
 * @brief Dense strongly convex quadratic programs with exact active sets.
 *
 * The problem is
 *
 *   minimize    ½ yᵀQy + qᵀy
 *   subject to  Gy ≤ g,  Fy = φ
 *
 * and its Lagrange dual over z = (λ, μ), λ ≥ 0, is
 *
 *   minimize    ½ zᵀHz + hᵀz,   H = C Q⁻¹ Cᵀ,  h = C Q⁻¹ q + c,
 *
 * with C = [G; F] and c = (g, φ). The primal is recovered from any dual point through
 * y = −Q⁻¹(Cᵀz + q).
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mpctune/errors.hpp"

namespace mpctune {

using Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Scalar>
struct StandardQP {
  MatrixX<Scalar> Q;
  VectorX<Scalar> q;
  MatrixX<Scalar> G;
  VectorX<Scalar> g;
  MatrixX<Scalar> F;
  VectorX<Scalar> phi;

  Index num_variables() const { return Q.rows(); }
  Index num_inequalities() const { return G.rows(); }
  Index num_equalities() const { return F.rows(); }
  Index num_constraints() const { return G.rows() + F.rows(); }
};

template <typename Scalar>
struct PrimalDualSolution {
  VectorX<Scalar> y;
  VectorX<Scalar> lambda;
  VectorX<Scalar> mu;
  Scalar kkt_residual{0};
  /// Inequalities whose multiplier exceeds the activity tolerance, ascending.
  std::vector<Index> active_set;
  /// Inequalities in the final working set (a superset of `active_set`), ascending.
  std::vector<Index> working_set;
  int iterations{0};
  bool warm_started{false};

  /// Stacked dual variable z = (λ, μ).
  VectorX<Scalar> z() const {
    VectorX<Scalar> out(lambda.size() + mu.size());
    out << lambda, mu;
    return out;
  }
};

/// Dual data shared by the solver and the sensitivity code.
template <typename Scalar>
struct LagrangeDual {
  MatrixX<Scalar> C;     // [G; F]
  VectorX<Scalar> c;     // (g, φ)
  MatrixX<Scalar> Qinv;
  MatrixX<Scalar> H;     // C Q⁻¹ Cᵀ
  VectorX<Scalar> h;     // C Q⁻¹ q + c
  VectorX<Scalar> y_unconstrained;  // −Q⁻¹ q
};

namespace detail {

template <typename Scalar>
Scalar inf_norm(const VectorX<Scalar>& v) {
  return v.size() == 0 ? Scalar(0) : v.cwiseAbs().maxCoeff();
}

}  // namespace detail

template <typename Scalar>
void check_dimensions(const StandardQP<Scalar>& qp) {
  const Index n = qp.Q.rows();
  auto fail = [](const std::string& what) { throw Error(ErrorCode::DimensionMismatch, what); };
  if (qp.Q.cols() != n) fail("Q must be square");
  if (qp.q.size() != n) fail("q has " + std::to_string(qp.q.size()) + " entries, expected " + std::to_string(n));
  if (qp.G.rows() != qp.g.size()) fail("G and g disagree on the number of inequalities");
  if (qp.G.rows() > 0 && qp.G.cols() != n) fail("G has the wrong number of columns");
  if (qp.F.rows() != qp.phi.size()) fail("F and phi disagree on the number of equalities");
  if (qp.F.rows() > 0 && qp.F.cols() != n) fail("F has the wrong number of columns");
}

/// Throws NotStronglyConvex unless Q is symmetric and numerically positive definite,
/// λ_min(Q) > n·eps·‖Q‖₂.
template <typename Scalar>
void check_strong_convexity(const MatrixX<Scalar>& Q) {
  using std::abs;
  const Scalar scale = Scalar(1) + Q.cwiseAbs().maxCoeff();
  if (!((Q - Q.transpose()).cwiseAbs().maxCoeff() <= Scalar(1e-12) * scale)) {
    throw Error(ErrorCode::NotStronglyConvex, "Q is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(Q, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const Scalar norm = std::max(abs(ev(0)), abs(ev(ev.size() - 1)));
  const Scalar floor = Scalar(Q.rows()) * Scalar(std::numeric_limits<double>::epsilon()) * norm;
  if (!(ev(0) > floor)) {
    throw Error(ErrorCode::NotStronglyConvex, "minimum eigenvalue of Q is too small");
  }
}

/// Throws DegenerateConstraints if two inequality rows of G coincide.
template <typename Scalar>
void check_distinct_rows(const MatrixX<Scalar>& G) {
  for (Index i = 0; i < G.rows(); ++i) {
    const Scalar scale = Scalar(1) + G.row(i).cwiseAbs().maxCoeff();
    for (Index j = i + 1; j < G.rows(); ++j) {
      if ((G.row(i) - G.row(j)).cwiseAbs().maxCoeff() <= Scalar(1e-12) * scale) {
        throw Error(ErrorCode::DegenerateConstraints,
                    "inequality rows " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
    }
  }
}

template <typename Scalar>
LagrangeDual<Scalar> make_dual(const StandardQP<Scalar>& qp) {
  const Index n = qp.num_variables();
  LagrangeDual<Scalar> d;
  d.C.resize(qp.num_constraints(), n);
  d.c.resize(qp.num_constraints());
  if (qp.num_inequalities() > 0) {
    d.C.topRows(qp.num_inequalities()) = qp.G;
    d.c.head(qp.num_inequalities()) = qp.g;
  }
  if (qp.num_equalities() > 0) {
    d.C.bottomRows(qp.num_equalities()) = qp.F;
    d.c.tail(qp.num_equalities()) = qp.phi;
  }
  Eigen::LLT<MatrixX<Scalar>> llt(qp.Q);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotStronglyConvex, "Cholesky of Q failed");
  d.Qinv = llt.solve(MatrixX<Scalar>::Identity(n, n));
  d.Qinv = Scalar(0.5) * (d.Qinv + d.Qinv.transpose()).eval();
  d.y_unconstrained = -(d.Qinv * qp.q);
  const MatrixX<Scalar> QinvCt = d.Qinv * d.C.transpose();
  d.H = d.C * QinvCt;
  d.h = d.c - d.C * d.y_unconstrained;
  return d;
}

/// Primal recovery map y = −Q⁻¹(Cᵀz + q).
template <typename Scalar>
VectorX<Scalar> recover_primal(const LagrangeDual<Scalar>& dual, const VectorX<Scalar>& z) {
  return dual.y_unconstrained - dual.Qinv * (dual.C.transpose() * z);
}

/// Scaled ∞-norm KKT residual: stationarity, primal and dual feasibility and complementarity,
/// each divided by 1 + the magnitude of the data or multipliers it is measured against.
template <typename Scalar>
Scalar kkt_residuals(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol) {
  check_dimensions(qp);
  if (sol.y.size() != qp.num_variables() || sol.lambda.size() != qp.num_inequalities() ||
      sol.mu.size() != qp.num_equalities()) {
    throw Error(ErrorCode::DimensionMismatch, "solution does not match the QP dimensions");
  }
  using detail::inf_norm;
  const Scalar lam_scale = Scalar(1) + inf_norm<Scalar>(sol.lambda) + inf_norm<Scalar>(sol.mu);
  VectorX<Scalar> stat = qp.Q * sol.y + qp.q;
  if (qp.num_inequalities() > 0) stat += qp.G.transpose() * sol.lambda;
  if (qp.num_equalities() > 0) stat += qp.F.transpose() * sol.mu;
  Scalar r = inf_norm<Scalar>(stat) / (Scalar(1) + inf_norm<Scalar>(qp.q) + lam_scale);
  if (qp.num_inequalities() > 0) {
    const VectorX<Scalar> slack = qp.G * sol.y - qp.g;
    r = std::max(r, inf_norm<Scalar>(slack.cwiseMax(Scalar(0))) / (Scalar(1) + inf_norm<Scalar>(qp.g)));
    r = std::max(r, inf_norm<Scalar>(sol.lambda.cwiseMin(Scalar(0))) / lam_scale);
    r = std::max(r, inf_norm<Scalar>(sol.lambda.cwiseProduct(slack)) / lam_scale);
  }
  if (qp.num_equalities() > 0) {
    r = std::max(r, inf_norm<Scalar>(qp.F * sol.y - qp.phi) / (Scalar(1) + inf_norm<Scalar>(qp.phi)));
  }
  return r;
}

/// Activity tolerance: λ_i > 1e−7·(1 + ‖λ‖∞).
template <typename Scalar>
Scalar activity_threshold(const VectorX<Scalar>& lambda) {
  return Scalar(1e-7) * (Scalar(1) + detail::inf_norm<Scalar>(lambda));
}

/// Linear independence of the equality rows together with the active inequality rows.
template <typename Scalar>
bool licq_holds(const StandardQP<Scalar>& qp, const PrimalDualSolution<Scalar>& sol) {
  const Index rows = qp.num_equalities() + static_cast<Index>(sol.active_set.size());
  if (rows == 0) return true;
  if (rows > qp.num_variables()) return false;
  MatrixX<Scalar> A(rows, qp.num_variables());
  Index r = 0;
  for (Index i : sol.active_set) A.row(r++) = qp.G.row(i);
  if (qp.num_equalities() > 0) A.bottomRows(qp.num_equalities()) = qp.F;
  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(A.transpose());
  qr.setThreshold(Scalar(1e-10));
  return qr.rank() == rows;
}

namespace detail {

/// Dual active-set iteration working on H = C Q⁻¹ Cᵀ. Every working set keeps the
/// constraint rows linearly independent, so H restricted to it is positive definite.
template <typename Scalar>
class ActiveSetSolver {
 public:
  ActiveSetSolver(const StandardQP<Scalar>& qp, const LagrangeDual<Scalar>& dual, Scalar tol)
      : qp_(qp), d_(dual), tol_(tol), n_in_(qp.num_inequalities()), n_eq_(qp.num_equalities()) {}

  /// Multipliers on `work` from the dual KKT system H_WW ν = −h_W. Returns false if H_WW is
  /// not numerically positive definite.
  bool solve_working_set(const std::vector<Index>& work, VectorX<Scalar>& nu) const {
    const Index m = static_cast<Index>(work.size());
    nu.resize(m);
    if (m == 0) return true;
    const MatrixX<Scalar> Hww = d_.H(work, work);
    Eigen::LDLT<MatrixX<Scalar>> ldlt(Hww);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    const auto diag = ldlt.vectorD();
    const Scalar dmax = diag.cwiseAbs().maxCoeff();
    if (!(diag.minCoeff() > Scalar(1e-13) * dmax)) return false;
    const VectorX<Scalar> hw = d_.h(work);
    nu = -ldlt.solve(hw);
    return true;
  }

  VectorX<Scalar> primal_from(const std::vector<Index>& work, const VectorX<Scalar>& nu) const {
    VectorX<Scalar> y = d_.y_unconstrained;
    for (Index k = 0; k < static_cast<Index>(work.size()); ++k) {
      y.noalias() -= nu(k) * (d_.Qinv * d_.C.row(work[k]).transpose());
    }
    return y;
  }

  Scalar add_threshold(Index i, const VectorX<Scalar>& y) const {
    using std::abs;
    return Scalar(1e-3) * tol_ *
           (Scalar(1) + abs(d_.c(i)) + d_.C.row(i).cwiseAbs().maxCoeff() * inf_norm<Scalar>(y));
  }

  /// Most violated inequality not in the working set; lowest index wins ties. −1 if none.
  Index most_violated(const VectorX<Scalar>& y, const std::vector<char>& in_work) const {
    Index best = -1;
    Scalar best_viol = Scalar(0);
    for (Index i = 0; i < n_in_; ++i) {
      if (in_work[i]) continue;
      const Scalar viol = d_.C.row(i).dot(y) - d_.c(i);
      if (viol > add_threshold(i, y) && (best < 0 || viol > best_viol)) {
        best = i;
        best_viol = viol;
      }
    }
    return best;
  }

  bool try_warm_start(std::span<const Index> guess, std::vector<Index>& work) const {
    work.clear();
    for (Index j = 0; j < n_eq_; ++j) work.push_back(n_in_ + j);
    std::vector<char> in_work(n_in_, 0);
    for (Index i : guess) {
      if (i >= 0 && i < n_in_ && !in_work[i]) in_work[i] = 1;
    }
    for (Index i = 0; i < n_in_; ++i) {
      if (in_work[i]) work.push_back(i);
    }
    VectorX<Scalar> nu;
    if (!solve_working_set(work, nu)) return false;
    for (Index k = n_eq_; k < static_cast<Index>(work.size()); ++k) {
      if (nu(k) < -Scalar(1e-3) * tol_) return false;
    }
    const VectorX<Scalar> y = primal_from(work, nu);
    return most_violated(y, in_work) < 0;
  }

  /// Goldfarb–Idnani style iteration from the equality-constrained minimizer.
  int cold_start(std::vector<Index>& work, int max_iter) const {
    work.clear();
    for (Index j = 0; j < n_eq_; ++j) work.push_back(n_in_ + j);
    VectorX<Scalar> nu;
    if (!solve_working_set(work, nu)) {
      throw Error(ErrorCode::DegenerateConstraints, "equality constraints are rank deficient");
    }
    VectorX<Scalar> y = primal_from(work, nu);
    std::vector<char> in_work(n_in_, 0);
    int iter = 0;

    for (;;) {
      const Index p = most_violated(y, in_work);
      if (p < 0) return iter;
      Scalar lambda_p(0);

      for (;;) {
        if (++iter > max_iter) throw Error(ErrorCode::MaxIterations, "active-set iteration limit reached");
        const Index m = static_cast<Index>(work.size());
        // Unit increase of λ_p: multipliers on the working set move by r, the primal by dy.
        VectorX<Scalar> r(m);
        if (m > 0) {
          Eigen::LDLT<MatrixX<Scalar>> ldlt(d_.H(work, work));
          VectorX<Scalar> Hwp(m);
          for (Index k = 0; k < m; ++k) Hwp(k) = d_.H(work[k], p);
          r = -ldlt.solve(Hwp);
        }
        Scalar schur = d_.H(p, p);
        for (Index k = 0; k < m; ++k) schur += d_.H(p, work[k]) * r(k);
        const bool dependent = !(schur > Scalar(1e-11) * d_.H(p, p));

        Index block = -1;
        Scalar t_block = std::numeric_limits<Scalar>::infinity();
        for (Index k = n_eq_; k < m; ++k) {
          if (r(k) < Scalar(0)) {
            const Scalar t = -nu(k) / r(k);
            if (t < t_block || (t == t_block && work[k] < work[block])) {
              t_block = t;
              block = k;
            }
          }
        }

        if (dependent) {
          if (block < 0) throw Error(ErrorCode::Infeasible, "no point satisfies the constraints");
          nu += t_block * r;
          lambda_p += t_block;
          drop(work, nu, in_work, block);
          continue;
        }

        VectorX<Scalar> dy = d_.Qinv * d_.C.row(p).transpose();
        for (Index k = 0; k < m; ++k) dy.noalias() += r(k) * (d_.Qinv * d_.C.row(work[k]).transpose());
        dy = -dy;
        const Scalar viol = d_.C.row(p).dot(y) - d_.c(p);
        const Scalar t_full = std::max(viol / schur, Scalar(0));

        if (t_full <= t_block) {
          y += t_full * dy;
          nu += t_full * r;
          lambda_p += t_full;
          work.push_back(p);
          nu.conservativeResize(m + 1);
          nu(m) = lambda_p;
          in_work[p] = 1;
          break;
        }
        y += t_block * dy;
        nu += t_block * r;
        lambda_p += t_block;
        drop(work, nu, in_work, block);
      }
    }
  }

 private:
  void drop(std::vector<Index>& work, VectorX<Scalar>& nu, std::vector<char>& in_work, Index k) const {
    in_work[work[k]] = 0;
    work.erase(work.begin() + k);
    const Index m = nu.size();
    VectorX<Scalar> next(m - 1);
    next << nu.head(k), nu.tail(m - k - 1);
    nu = std::move(next);
  }

  const StandardQP<Scalar>& qp_;
  const LagrangeDual<Scalar>& d_;
  Scalar tol_;
  Index n_in_;
  Index n_eq_;
};

}  // namespace detail

/**
 * @brief Solve a dense strongly convex QP.
 *
 * Dual active-set method: starts from the equality-constrained minimizer and adds the most
 * violated inequality (lowest index on ties) until primal feasible. The final working set is
 * re-solved once through the full KKT system, so the output depends only on that set.
 *
 * @param warm_start inequality indices guessed to be active. The guess is accepted only if it
 *        satisfies the KKT conditions; otherwise the solver starts cold.
 */
template <typename Scalar>
PrimalDualSolution<Scalar> solve_qp(const StandardQP<Scalar>& qp, Scalar tol = Scalar(1e-9),
                                    std::span<const Index> warm_start = {}) {
  if (!(tol > Scalar(0))) throw Error(ErrorCode::InvalidArgs, "tolerance must be positive");
  check_dimensions(qp);
  check_strong_convexity(qp.Q);
  check_distinct_rows(qp.G);

  const Index n_in = qp.num_inequalities();
  const Index n_eq = qp.num_equalities();
  const LagrangeDual<Scalar> dual = make_dual(qp);
  detail::ActiveSetSolver<Scalar> solver(qp, dual, tol);

  PrimalDualSolution<Scalar> sol;
  std::vector<Index> work;
  if (!warm_start.empty() && solver.try_warm_start(warm_start, work)) {
    sol.warm_started = true;
  } else {
    const int max_iter = static_cast<int>(10 * (n_in + qp.num_variables()) + 100);
    sol.iterations = solver.cold_start(work, max_iter);
  }

  std::sort(work.begin(), work.end(), [n_in](Index a, Index b) {
    // equalities first, then inequalities ascending
    const bool ea = a >= n_in, eb = b >= n_in;
    if (ea != eb) return ea;
    return a < b;
  });
  VectorX<Scalar> nu;
  if (!solver.solve_working_set(work, nu)) {
    throw Error(ErrorCode::DegenerateConstraints, "final working set is linearly dependent");
  }
  // Full KKT system on the working set, LU plus one refinement step; avoids the error of Q⁻¹.
  const Index n = qp.num_variables();
  const Index m = static_cast<Index>(work.size());
  MatrixX<Scalar> K = MatrixX<Scalar>::Zero(n + m, n + m);
  VectorX<Scalar> rhs(n + m);
  K.topLeftCorner(n, n) = qp.Q;
  rhs.head(n) = -qp.q;
  for (Index k = 0; k < m; ++k) {
    K.block(n + k, 0, 1, n) = dual.C.row(work[k]);
    K.block(0, n + k, n, 1) = dual.C.row(work[k]).transpose();
    rhs(n + k) = dual.c(work[k]);
  }
  Eigen::PartialPivLU<MatrixX<Scalar>> lu(K);
  VectorX<Scalar> kkt = lu.solve(rhs);
  kkt += lu.solve(VectorX<Scalar>(rhs - K * kkt));
  nu = kkt.tail(m);

  sol.lambda = VectorX<Scalar>::Zero(n_in);
  sol.mu = VectorX<Scalar>::Zero(n_eq);
  for (Index k = 0; k < static_cast<Index>(work.size()); ++k) {
    if (work[k] >= n_in) {
      sol.mu(work[k] - n_in) = nu(k);
    } else {
      sol.lambda(work[k]) = std::max(nu(k), Scalar(0));
      sol.working_set.push_back(work[k]);
    }
  }
  sol.y = kkt.head(n);

  const Scalar act = activity_threshold<Scalar>(sol.lambda);
  for (Index i = 0; i < n_in; ++i) {
    if (sol.lambda(i) > act) sol.active_set.push_back(i);
  }
  sol.kkt_residual = kkt_residuals(qp, sol);
  if (!(sol.kkt_residual <= tol)) {
    throw Error(ErrorCode::MaxIterations, "KKT residual above tolerance after active-set solve");
  }
  return sol;
}

extern template struct StandardQP<double>;
extern template struct PrimalDualSolution<double>;
extern template PrimalDualSolution<double> solve_qp(const StandardQP<double>&, double, std::span<const Index>);
extern template double kkt_residuals(const StandardQP<double>&, const PrimalDualSolution<double>&);
extern template LagrangeDual<double> make_dual(const StandardQP<double>&);

}  // namespace mpctune
