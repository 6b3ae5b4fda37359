#include "mpctune/mpc.hpp"
#include "mpctune/qp.hpp"
#include "mpctune/qp_diff.hpp"

namespace mpctune {

template struct StandardQP<double>;
template struct PrimalDualSolution<double>;
template PrimalDualSolution<double> solve_qp(const StandardQP<double>&, double, std::span<const Index>);
template double kkt_residuals(const StandardQP<double>&, const PrimalDualSolution<double>&);
template LagrangeDual<double> make_dual(const StandardQP<double>&);

template struct ParamJacobians<double>;
template MatrixX<double> dual_jacobian(const StandardQP<double>&, const PrimalDualSolution<double>&,
                                       const ParamJacobians<double>&, const LagrangeDual<double>&);

template struct MPCModel<double>;
template struct ThetaParams<double>;
template StandardQP<double> condense(const MPCModel<double>&, const ThetaParams<double>&, const Vector&);
template MPCResult<double> mpc_solve(const MPCModel<double>&, const ThetaParams<double>&, const Vector&,
                                     std::span<const Index>, double);
template MPCJacobians<double> mpc_jacobians(const MPCModel<double>&, const ThetaParams<double>&,
                                            const Vector&, const PrimalDualSolution<double>&);

}  // namespace mpctune
