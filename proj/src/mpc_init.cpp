#include <cmath>
#include <string>

#include "mpctune/errors.hpp"
#include "mpctune/mpc.hpp"

namespace mpctune {

Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  Matrix P = Q;
  for (int it = 0; it < 100000; ++it) {
    const Matrix BtP = B.transpose() * P;
    const Matrix K = (R + BtP * B).ldlt().solve(BtP * A);
    Matrix next = Q + A.transpose() * P * (A - B * K);
    next = 0.5 * (next + next.transpose()).eval();
    if (!next.allFinite()) break;
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= 1e-13 * (1.0 + P.cwiseAbs().maxCoeff())) return P;
  }
  throw Error(ErrorCode::NumericFailure, "Riccati recursion did not converge; is (A, B) stabilizable?");
}

ThetaParams<double> riccati_theta(const MPCModel<double>& model, double r) {
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgs, "input weight must be positive");
  model.validate();
  const Index nu = model.n_u();
  const double eps = ThetaParams<double>::eps_pd;
  // P() and R() add ε_pd·I to the factor products
  const Matrix P = solve_dare(model.A, model.B, model.Q_x, (r + eps) * Matrix::Identity(nu, nu));
  Eigen::LLT<Matrix> llt(Matrix(P - eps * Matrix::Identity(P.rows(), P.cols())));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NumericFailure, "Riccati solution is not positive definite");
  ThetaParams<double> t = ThetaParams<double>::initial(model);
  t.L_P = llt.matrixL();
  t.L_R = std::sqrt(r) * Matrix::Identity(nu, nu);
  return t;
}

}  // namespace mpctune
