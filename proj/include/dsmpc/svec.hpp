#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace dsmpc {

// Packed symmetric vectorization. Upper triangle, column by column:
// (0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ...
// Off-diagonal entries are scaled by sqrt(2) so that
// svec(A) . svec(B) == <A, B>_F for symmetric A, B.

inline int svec_dim(int n) { return n * (n + 1) / 2; }

// Inverse of svec_dim; throws if m is not triangular.
inline int smat_dim(int m) {
    int n = static_cast<int>((std::sqrt(8.0 * m + 1.0) - 1.0) / 2.0 + 0.5);
    if (n * (n + 1) / 2 != m)
        throw std::invalid_argument("smat_dim: not a triangular number");
    return n;
}

inline Eigen::VectorXd svec(const Eigen::MatrixXd& S) {
    const int n = static_cast<int>(S.rows());
    const double r2 = std::sqrt(2.0);
    Eigen::VectorXd v(svec_dim(n));
    int k = 0;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i)
            v[k++] = (i == j) ? S(i, j) : r2 * S(i, j);
    return v;
}

inline Eigen::MatrixXd smat(const Eigen::VectorXd& v) {
    const int n = smat_dim(static_cast<int>(v.size()));
    const double ir2 = 1.0 / std::sqrt(2.0);
    Eigen::MatrixXd S(n, n);
    int k = 0;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i) {
            double x = (i == j) ? v[k] : ir2 * v[k];
            S(i, j) = x;
            S(j, i) = x;
            ++k;
        }
    return S;
}

}  // namespace dsmpc
