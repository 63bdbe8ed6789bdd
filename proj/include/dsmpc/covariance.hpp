#pragma once

// Covariance dynamics of the error system. The successor covariance obeys
//   S+ = A_K Sh A_K' + C_K Sh C_K' + g g',   g = C z + D v,
// with A_K = A + B K, C_K = C + D K over the neighborhood and Sh the
// block-diagonal bound on the neighborhood covariance. For optimization the
// equation is relaxed to an inequality (S+ at least the right-hand side) and
// written as one positive semidefinite block via the Schur complement.

#include <vector>

#include <Eigen/Dense>

#include "dsmpc/conic.hpp"
#include "dsmpc/model.hpp"

namespace dsmpc {

using conic::ExprMatrix;
using conic::Problem;

// Exact propagation; result symmetrized.
Eigen::MatrixXd propagate_direct(const LocalMaps& m, const Eigen::MatrixXd& K,
                                 const Eigen::VectorXd& z_nbhd, const Eigen::VectorXd& v,
                                 const Eigen::MatrixXd& Sigma_nbhd);

// Numeric inequality block for fixed data. block_dims partitions the
// neighborhood coordinates; diagonal blocks of Sigma_nbhd that are exactly
// zero are dropped (their Schur pivots are absent), so the block shrinks to
// [[S+, g],[g', 1]] when every block vanishes. Feasibility of the returned
// matrix (check_psd) is equivalent to S+ dominating the propagated value.
Eigen::MatrixXd propagation_lmi_block(const LocalMaps& m, const Eigen::MatrixXd& K,
                                      const Eigen::VectorXd& z_nbhd, const Eigen::VectorXd& v,
                                      const Eigen::MatrixXd& Sigma_nbhd,
                                      const Eigen::MatrixXd& Sigma_next,
                                      const std::vector<int>& block_dims);

struct PropagationLmi {
    int first_row = -1;       // standard-form row of the block's (0,0) entry
    int dim = 0;              // side length of the emitted PSD block
    std::vector<int> kept;    // retained neighborhood coordinates
};

// Decision-variable form. z_nbhd (d x 1), v (m x 1), Sigma_next (n x n) and
// the per-neighbor covariance blocks are affine expressions; a block with
// rows() == 0 is pinned to zero and dropped (pass ExprMatrix(0, d) so its
// width is still known). The substitution U = K Sh makes the off-diagonal
// corners (A+BK) Sh and (C+DK) Sh, linear in Sh.
PropagationLmi propagation_lmi(Problem& prob, const LocalMaps& m, const Eigen::MatrixXd& K,
                               const ExprMatrix& z_nbhd, const ExprMatrix& v,
                               const std::vector<ExprMatrix>& Sigma_blocks,
                               const ExprMatrix& Sigma_next);

}  // namespace dsmpc
