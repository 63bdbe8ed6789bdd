#include "dsmpc/tightening.hpp"

#include <cmath>

#include "doctest.h"
#include "dsmpc/rng.hpp"
#include "dsmpc/svec.hpp"

using namespace dsmpc;

TEST_CASE("quantile factor values") {
    CHECK(cantelli_factor(0.5) == 1.0);
    CHECK(cantelli_factor(0.7) == doctest::Approx(1.5275252316519468).epsilon(1e-15));
    CHECK(cantelli_factor(0.99) == doctest::Approx(9.9498743710661995).epsilon(1e-15));
    CHECK_THROWS_AS(cantelli_factor(0.0), OutOfRangeProbability);
    CHECK_THROWS_AS(cantelli_factor(1.0), OutOfRangeProbability);
    CHECK_THROWS_AS(cantelli_factor(-0.2), OutOfRangeProbability);
    CHECK_THROWS_AS(cantelli_factor(1.3), OutOfRangeProbability);
}

TEST_CASE("quantile factor is strictly increasing") {
    double prev = 0.0;
    for (double p = 0.01; p < 1.0; p += 0.01) {
        double f = cantelli_factor(p);
        CHECK(f > prev);
        prev = f;
    }
}

TEST_CASE("benchmark rows produce the expected margins and curvatures") {
    NetworkModel net = load_network(DSMPC_CONFIG_DIR "/benchmark3.json");
    const double expected_eta[3] = {35.0 / 3.0, 14.0 / 3.0, 35.0 / 9.0};
    const double expected_margin[3] = {0.15, 0.375, 0.45};
    for (int i = 0; i < 3; ++i) {
        TighteningParams tp = make_tightening(net.subsystems[i], net.mpc.eps);
        REQUIRE(tp.state_rows.size() == 1);
        CHECK(tp.input_rows.empty());
        const auto& row = tp.state_rows[0];
        CHECK(row.f == doctest::Approx(std::sqrt(7.0 / 3.0)).epsilon(1e-15));
        CHECK(row.eta == doctest::Approx(expected_eta[i]).epsilon(1e-14));
        CHECK(row.margin == doctest::Approx(expected_margin[i]).epsilon(1e-15));
    }
}

TEST_CASE("state row surrogate arithmetic") {
    RowTightening row;
    row.H = Eigen::RowVectorXd(2);
    row.H << -1.0, -1.0;
    row.h = 0.2;
    row.f = std::sqrt(7.0 / 3.0);
    row.eta = 35.0 / 3.0;
    row.margin = 0.15;

    Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
    SUBCASE("variance term vanishes for a deterministic state") {
        CHECK(state_row_residual(row, z, Eigen::MatrixXd::Zero(2, 2)) ==
              doctest::Approx(-0.15).epsilon(1e-15));
        z << -0.1, -0.05;  // H z = 0.15, right on the tightened bound
        CHECK(state_row_residual(row, z, Eigen::MatrixXd::Zero(2, 2)) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("small isotropic covariance shifts the bound") {
        Eigen::MatrixXd S = 0.001 * Eigen::MatrixXd::Identity(2, 2);
        // eta * H S H' = (35/3) * 0.002, leaving 0.126667 of the margin
        CHECK(state_row_residual(row, z, S) ==
              doctest::Approx(0.0233333333333333 - 0.15).epsilon(1e-12));
    }
    SUBCASE("full linearization parameter halves the bound") {
        RowTightening r2 = row;
        r2.margin = (1.0 - 0.5 * 1.0) * r2.h;
        CHECK(state_row_residual(r2, z, Eigen::MatrixXd::Zero(2, 2)) ==
              doctest::Approx(-0.1).epsilon(1e-15));
    }
}

TEST_CASE("input row surrogate arithmetic") {
    RowTightening row;
    row.H = Eigen::RowVectorXd::Ones(1);
    row.h = 1.0;
    row.f = 1.0;  // p = 0.5
    row.eta = 1.0 / (2.0 * 0.5 * 1.0);
    row.margin = 0.75;

    Eigen::VectorXd v = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd K = Eigen::MatrixXd::Ones(1, 1);
    Eigen::MatrixXd S = 0.1 * Eigen::MatrixXd::Ones(1, 1);
    // rhs = 0.75 - 1 * 0.1 = 0.65
    CHECK(input_row_residual(row, v, S, K) == doctest::Approx(-0.65).epsilon(1e-13));

    SUBCASE("zero gain leaves the nominal bound") {
        CHECK(input_row_residual(row, v, S, Eigen::MatrixXd::Zero(1, 1)) ==
              doctest::Approx(-0.75).epsilon(1e-15));
    }
    SUBCASE("zero covariance matches the state-row structure") {
        CHECK(input_row_residual(row, v, Eigen::MatrixXd::Zero(1, 1), K) ==
              doctest::Approx(-0.75).epsilon(1e-15));
    }
}

TEST_CASE("explicit factor overrides the distribution-free one") {
    SubsystemModel sub;
    sub.n = 1;
    sub.m = 1;
    ConstraintRow r;
    r.H = Eigen::RowVectorXd::Ones(1);
    r.h = 2.0;
    r.p = 0.7;
    sub.state_rows.push_back(r);
    r.factor = 0.524400512;  // normal quantile at 0.7, tighter than 1.5275
    sub.state_rows.push_back(r);

    TighteningParams tp = make_tightening(sub, 0.5);
    CHECK(tp.state_rows[0].f == doctest::Approx(std::sqrt(7.0 / 3.0)));
    CHECK(tp.state_rows[1].f == 0.524400512);
    CHECK(tp.state_rows[1].eta < tp.state_rows[0].eta);
    CHECK(tp.state_rows[1].margin == tp.state_rows[0].margin);
}

TEST_CASE("svec coefficients reproduce the quadratic form") {
    GaussianStream g(derive_seed(42, 0));
    for (int trial = 0; trial < 50; ++trial) {
        int d = 1 + trial % 5;
        Eigen::RowVectorXd H(d);
        Eigen::MatrixXd Y(d, d);
        for (int i = 0; i < d; ++i) {
            H[i] = g.next();
            for (int j = 0; j < d; ++j) Y(i, j) = g.next();
        }
        Eigen::MatrixXd S = Y * Y.transpose();
        double direct = (H * S * H.transpose()).value();
        double via_svec = quad_form_svec(H).dot(svec(S));
        CHECK(direct == doctest::Approx(via_svec).epsilon(1e-12));
    }
}

TEST_CASE("rhs nonincreasing in every diagonal covariance entry") {
    RowTightening row;
    row.H = Eigen::RowVectorXd(3);
    row.H << 1.0, -2.0, 0.5;
    row.h = 1.0;
    row.f = cantelli_factor(0.8);
    row.eta = row.f * row.f / (2.0 * 0.5 * row.h);
    row.margin = 0.75;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(3, 3);
    double base = state_row_residual(row, z, S);
    for (int i = 0; i < 3; ++i) {
        Eigen::MatrixXd S2 = S;
        S2(i, i) += 0.3;
        CHECK(state_row_residual(row, z, S2) >= base);
    }
}

TEST_CASE("linearized surrogate implies the square-root constraint") {
    // whenever H z + eta H S H' <= (1-eps/2) h holds, the pre-linearization
    // bound H z + f sqrt(H S H') <= h must hold as well
    GaussianStream g(derive_seed(7, 1));
    int checked = 0;
    for (int trial = 0; trial < 5000 && checked < 1000; ++trial) {
        int d = 2;
        Eigen::RowVectorXd H(d);
        Eigen::MatrixXd Y(d, d);
        Eigen::VectorXd z(d);
        for (int i = 0; i < d; ++i) {
            H[i] = g.next();
            z[i] = 0.5 * g.next();
            for (int j = 0; j < d; ++j) Y(i, j) = 0.4 * g.next();
        }
        Eigen::MatrixXd S = Y * Y.transpose();
        double p = 0.05 + 0.9 * std::abs(std::tanh(g.next()));
        double eps = 0.1 + 0.85 * std::abs(std::tanh(g.next()));
        RowTightening row;
        row.H = H;
        row.h = 0.2 + std::abs(g.next());
        row.f = cantelli_factor(p);
        row.eta = row.f * row.f / (2.0 * eps * row.h);
        row.margin = (1.0 - 0.5 * eps) * row.h;
        if (state_row_residual(row, z, S) > 0.0) continue;  // surrogate violated, nothing implied
        ++checked;
        double parent = H.dot(z) + row.f * std::sqrt((H * S * H.transpose()).value()) - row.h;
        CHECK(parent <= 1e-12);
    }
    CHECK(checked == 1000);
}
