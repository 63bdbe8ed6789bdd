#include "dsmpc/tightening.hpp"

#include <cmath>

namespace dsmpc {

double cantelli_factor(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw OutOfRangeProbability("probability must lie strictly in (0,1), got " +
                                    std::to_string(p));
    return std::sqrt(p / (1.0 - p));
}

namespace {

RowTightening tighten_row(const ConstraintRow& r, double eps) {
    RowTightening t;
    t.H = r.H;
    t.h = r.h;
    t.f = r.factor > 0.0 ? r.factor : cantelli_factor(r.p);
    t.eta = t.f * t.f / (2.0 * eps * r.h);
    t.margin = (1.0 - 0.5 * eps) * r.h;
    return t;
}

}  // namespace

TighteningParams make_tightening(const SubsystemModel& sub, double eps) {
    TighteningParams params;
    params.eps = eps;
    for (const auto& r : sub.state_rows) params.state_rows.push_back(tighten_row(r, eps));
    for (const auto& r : sub.input_rows) params.input_rows.push_back(tighten_row(r, eps));
    return params;
}

Eigen::RowVectorXd quad_form_svec(const Eigen::RowVectorXd& H) {
    const int d = static_cast<int>(H.cols());
    const double rt2 = std::sqrt(2.0);
    Eigen::RowVectorXd c(d * (d + 1) / 2);
    int k = 0;
    for (int j = 0; j < d; ++j)
        for (int i = 0; i <= j; ++i)
            c[k++] = i == j ? H[i] * H[i] : rt2 * H[i] * H[j];
    return c;
}

double state_row_residual(const RowTightening& row, const Eigen::VectorXd& z,
                          const Eigen::MatrixXd& Sigma) {
    double var = (row.H * Sigma * row.H.transpose()).value();
    return row.H.dot(z) + row.eta * var - row.margin;
}

double input_row_residual(const RowTightening& row, const Eigen::VectorXd& v,
                          const Eigen::MatrixXd& Sigma_nbhd, const Eigen::MatrixXd& K) {
    Eigen::RowVectorXd HK = row.H * K;
    double var = (HK * Sigma_nbhd * HK.transpose()).value();
    return row.H.dot(v) + row.eta * var - row.margin;
}

}  // namespace dsmpc
