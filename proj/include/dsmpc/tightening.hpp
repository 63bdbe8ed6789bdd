#pragma once

// Deterministic surrogates of the probabilistic half-space constraints.
// A chance constraint P(H y <= h) >= p on a variable with mean y_m and
// covariance S is implied by  H y_m + f * sqrt(H S H') <= h  with a
// distribution-free quantile factor f = sqrt(p/(1-p)). The square root is
// linearized around eps*h, giving the affine-in-(mean, S) form
//   H y_m + eta * H S H' <= (1 - eps/2) * h,   eta = f^2 / (2 eps h),
// which is an inner approximation of the square-root form for any S.

#include <vector>

#include <Eigen/Dense>

#include "dsmpc/errors.hpp"
#include "dsmpc/model.hpp"

namespace dsmpc {

// sqrt(p/(1-p)); throws OutOfRangeProbability unless p in (0,1)
double cantelli_factor(double p);

struct RowTightening {
    Eigen::RowVectorXd H;
    double h = 0.0;
    double f = 0.0;       // quantile factor actually in effect
    double eta = 0.0;     // f^2 / (2 eps h)
    double margin = 0.0;  // (1 - eps/2) * h, the tightened right-hand side
};

struct TighteningParams {
    double eps = 0.0;
    std::vector<RowTightening> state_rows;
    std::vector<RowTightening> input_rows;
};

// Per-row factors and margins for one subsystem. Rows with an explicit
// factor override keep it; others use cantelli_factor(p).
TighteningParams make_tightening(const SubsystemModel& sub, double eps);

// Row vector c with  c * svec(S) = H S H'  for symmetric S. Lets the
// surrogate enter a conic program as a single linear row over (y_m, svec S).
Eigen::RowVectorXd quad_form_svec(const Eigen::RowVectorXd& H);

// Surrogate residuals, <= 0 when the tightened constraint holds.
double state_row_residual(const RowTightening& row, const Eigen::VectorXd& z,
                          const Eigen::MatrixXd& Sigma);
// Input rows see the variance through the local gain: S_u = K S_nbhd K'.
double input_row_residual(const RowTightening& row, const Eigen::VectorXd& v,
                          const Eigen::MatrixXd& Sigma_nbhd, const Eigen::MatrixXd& K);

}  // namespace dsmpc
