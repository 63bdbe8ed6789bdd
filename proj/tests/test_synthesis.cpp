#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "json.hpp"

#include "dsmpc/conic.hpp"
#include "dsmpc/errors.hpp"
#include "dsmpc/model.hpp"
#include "dsmpc/rng.hpp"
#include "dsmpc/svec.hpp"
#include "dsmpc/synthesis.hpp"
#include "dsmpc/tightening.hpp"

using namespace dsmpc;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using conic::check_psd;

namespace {

NetworkModel benchmark() { return load_network(DSMPC_CONFIG_DIR "/benchmark3.json"); }

std::string write_config(const std::string& name, const std::string& body) {
    std::string path = "/tmp/" + name;
    std::ofstream out(path);
    out << body;
    return path;
}

double max_eigenvalue(const MatrixXd& M) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (M + M.transpose()))
        .eigenvalues()
        .maxCoeff();
}

MatrixXd spd_inverse_sqrt(const MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

// Inverse of each terminal weight, the variable the design program actually
// optimizes over.
std::vector<MatrixXd> weight_inverses(const TerminalIngredients& ing) {
    std::vector<MatrixXd> E;
    for (const auto& P : ing.P) E.push_back(P.inverse());
    return E;
}

MatrixXd neighborhood_blockdiag(const NetworkModel& net, int i, const std::vector<MatrixXd>& E) {
    const int d = net.nbhd_dim(i);
    MatrixXd EN = MatrixXd::Zero(d, d);
    int off = 0;
    for (int j : net.nbhd[i]) {
        EN.block(off, off, net.subsystems[j].n, net.subsystems[j].n) = E[j];
        off += net.subsystems[j].n;
    }
    return EN;
}

// Lift a neighborhood-indexed block matrix to global state indices.
MatrixXd lift_to_global(const NetworkModel& net, int i, const MatrixXd& Fd) {
    MatrixXd X = MatrixXd::Zero(net.n, net.n);
    int ra = 0;
    for (int ja : net.nbhd[i]) {
        int ca = 0;
        for (int jb : net.nbhd[i]) {
            X.block(net.state_offset[ja], net.state_offset[jb], net.subsystems[ja].n,
                    net.subsystems[jb].n) =
                Fd.block(ra, ca, net.subsystems[ja].n, net.subsystems[jb].n);
            ca += net.subsystems[jb].n;
        }
        ra += net.subsystems[ja].n;
    }
    return X;
}

}  // namespace

TEST_CASE("benchmark terminal design matches an independently computed optimum") {
    NetworkModel net = benchmark();
    auto t0 = std::chrono::steady_clock::now();
    TerminalIngredients ing = synthesize_terminal(net);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("terminal design solve: %.2fs\n", secs);
    CHECK(secs < 60.0);

    // Certified decrease, not just near zero: the q_margin inflation keeps
    // the residual strictly negative at the optimum.
    double res = verify_assumption4(ing, net);
    CHECK(res <= 1e-6);
    CHECK(res >= -1e-2);

    CHECK(std::abs(ing.alpha - 0.04077026701658317) <= 1e-5);
    REQUIRE(ing.psi.size() == 3);
    for (double psi : ing.psi) CHECK(std::abs(psi - 0.0032026117763274548) <= 1e-5);

    MatrixXd P1(2, 2), P2(2, 2);
    P1 << 166.9107211747, 149.1613265214, 149.1613265214, 159.1561607210;
    P2 << 39.7840686690, 30.9418745712, 30.9418745712, 48.1191309839;
    REQUIRE(ing.P.size() == 3);
    CHECK((ing.P[0] - P1).cwiseAbs().maxCoeff() / P1.norm() <= 5e-3);
    CHECK((ing.P[1] - P2).cwiseAbs().maxCoeff() / P2.norm() <= 5e-3);
    CHECK((ing.P[2] - P2).cwiseAbs().maxCoeff() / P2.norm() <= 5e-3);

    double logdet = 0.0;
    for (const auto& P : ing.P) logdet += std::log(P.inverse().determinant());
    CHECK(std::abs(logdet - (-22.09757964099188)) <= 1e-3);

    REQUIRE(ing.alpha0.size() == 3);
    for (double a0 : ing.alpha0) CHECK(a0 == doctest::Approx(ing.alpha / 3.0).epsilon(1e-12));
    CHECK(ing.hash == model_hash(net));

    // Subsystems two and three are exchangeable in the model, and only the
    // first subsystem's margin reservation is active, so the unique optimum
    // must carry that symmetry: swapping their neighborhood blocks maps one
    // gain to the other.
    REQUIRE(ing.K.size() == 3);
    MatrixXd mirrored(1, 6);
    mirrored << ing.K[1].block(0, 0, 1, 2), ing.K[1].block(0, 4, 1, 2),
        ing.K[1].block(0, 2, 1, 2);
    CHECK((ing.K[2] - mirrored).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((ing.P[1] - ing.P[2]).cwiseAbs().maxCoeff() <= 1e-6);

    // The relaxation weights must certify the coupling cancellation: the
    // lifted sum of E_N Gamma E_N terms is negative semidefinite.
    std::vector<MatrixXd> E = weight_inverses(ing);
    MatrixXd coupling = MatrixXd::Zero(net.n, net.n);
    for (int i = 0; i < net.M(); ++i) {
        MatrixXd EN = neighborhood_blockdiag(net, i, E);
        coupling += lift_to_global(net, i, EN * ing.Gamma[i] * EN);
    }
    CHECK(max_eigenvalue(coupling) <= 1e-7);

    // Margin reservations hold at the optimum with room left by kappa.
    for (int i = 0; i < net.M(); ++i) {
        TighteningParams tp = make_tightening(net.subsystems[i], net.mpc.eps);
        MatrixXd EN = neighborhood_blockdiag(net, i, E);
        for (const auto& row : tp.state_rows) {
            double used = row.eta * (row.H * E[i] * row.H.transpose()).value();
            CHECK(used <= net.synthesis.kappa * row.margin + 1e-9);
        }
        for (const auto& row : tp.input_rows) {
            MatrixXd HK = row.H * ing.K[i];
            double used = row.eta * (HK * EN * HK.transpose()).value();
            CHECK(used <= net.synthesis.kappa * row.margin + 1e-9);
        }
    }
}

TEST_CASE("both solve modes land on the same design") {
    NetworkModel net = benchmark();
    TerminalIngredients mono = synthesize_terminal(net, SynthesisMode::Monolithic);
    auto t0 = std::chrono::steady_clock::now();
    TerminalIngredients cons = synthesize_terminal(net, SynthesisMode::Consensus);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("consensus design solve: %.2fs\n", secs);

    double kd = 0.0, pd = 0.0, gd = 0.0;
    for (int i = 0; i < net.M(); ++i) {
        kd = std::max(kd, (mono.K[i] - cons.K[i]).cwiseAbs().maxCoeff());
        pd = std::max(pd, (mono.P[i] - cons.P[i]).cwiseAbs().maxCoeff());
        gd = std::max(gd, (mono.Gamma[i] - cons.Gamma[i]).cwiseAbs().maxCoeff());
    }
    std::printf("gain gap: %.3e  weight gap: %.3e  relaxation gap: %.3e\n", kd, pd, gd);
    CHECK(kd <= 1e-4);
    CHECK(pd <= 1e-3);
    CHECK(std::abs(mono.alpha - cons.alpha) <= 1e-6);
    for (int i = 0; i < net.M(); ++i)
        CHECK(std::abs(mono.psi[i] - cons.psi[i]) <= 1e-6);
    CHECK(verify_assumption4(cons, net) <= 1e-6);
}

TEST_CASE("terminal cost decrease check is exact on a stationary system") {
    std::string path = write_config("dsmpc_synth_stationary.json", R"({
        "graph": {"nodes": 1, "edges": []},
        "subsystems": [{"B": [[0.0]], "Q": [[1.0]], "R": [[1.0]]}]
    })");
    NetworkModel net = load_network(path);

    TerminalIngredients ing;
    ing.P = {MatrixXd::Identity(1, 1)};
    ing.K = {MatrixXd::Zero(1, 1)};
    ing.Gamma = {MatrixXd::Zero(1, 1)};
    ing.psi = {1.0};
    ing.alpha = 1.0;
    ing.alpha0 = {1.0};

    // A = 0, K = 0: the residual matrix is exactly Q - P.
    CHECK(std::abs(verify_assumption4(ing, net)) <= 1e-12);
    ing.P = {0.5 * MatrixXd::Identity(1, 1)};
    CHECK(verify_assumption4(ing, net) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("unstabilizable dynamics are reported infeasible") {
    std::string path = write_config("dsmpc_synth_unstab.json", R"({
        "graph": {"nodes": 1, "edges": []},
        "subsystems": [{"A": {"1": [[2.0]]}, "B": [[0.0]], "Q": [[1.0]], "R": [[1.0]]}]
    })");
    NetworkModel net = load_network(path);
    CHECK_THROWS_AS(synthesize_terminal(net), SynthesisInfeasible);
}

TEST_CASE("a decoupled pair splits into independent designs") {
    const char* sub = R"({
        "A": {"%d": [[1.0, 1.0], [0.0, 1.0]]},
        "C": {"%d": [[0.01, 0.02], [0.02, 0.03]]},
        "B": [[0.0], [1.0]],
        "D": [[0.0], [0.001]],
        "Q": [[10.0, 0.0], [0.0, 10.0]],
        "R": [[5.0]],
        "state_rows": [{"H": [-1.0, -1.0], "h": 0.2, "p": 0.7}]
    })";
    char s1[512], s2[512];
    std::snprintf(s1, sizeof s1, sub, 1, 1);
    std::snprintf(s2, sizeof s2, sub, 2, 2);
    std::string pair_path = write_config(
        "dsmpc_synth_pair.json", std::string("{\"graph\": {\"nodes\": 2, \"edges\": []},"
                                             "\"subsystems\": [") +
                                     s1 + "," + s2 + "]}");
    std::string single_path = write_config(
        "dsmpc_synth_single.json",
        std::string("{\"graph\": {\"nodes\": 1, \"edges\": []}, \"subsystems\": [") + s1 + "]}");

    TerminalIngredients pair = synthesize_terminal(load_network(pair_path));
    TerminalIngredients single = synthesize_terminal(load_network(single_path));

    for (int i = 0; i < 2; ++i) {
        CHECK((pair.P[i] - single.P[0]).cwiseAbs().maxCoeff() / single.P[0].norm() <= 1e-4);
        CHECK((pair.K[i] - single.K[0]).cwiseAbs().maxCoeff() <= 1e-4);
        CHECK(pair.Gamma[i].cwiseAbs().maxCoeff() <= 1e-5);
    }
    CHECK(single.Gamma[0].cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(std::abs(pair.alpha - single.alpha) <= 1e-5);
}

TEST_CASE("terminal covariance blocks assemble as written") {
    LocalMaps maps;
    maps.A = MatrixXd::Constant(1, 1, 0.5);
    maps.B = MatrixXd::Zero(1, 1);
    maps.C = MatrixXd::Constant(1, 1, 0.1);
    maps.D = MatrixXd::Zero(1, 1);
    MatrixXd E = MatrixXd::Constant(1, 1, 2.0);
    MatrixXd Y = MatrixXd::Zero(1, 1);

    MatrixXd blk = terminal_propagation_block(maps, E, Y, E);
    MatrixXd expect(3, 3);
    expect << 2.0, 1.0, 0.2, 1.0, 2.0, 0.0, 0.2, 0.0, 1.0;
    CHECK((blk - expect).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(check_psd(blk));
    // Schur complement onto the corner: E - AE E^-1 EA - 2 CE E^-1 EC.
    double schur = 2.0 - 1.0 * 1.0 / 2.0 - 2.0 * 0.2 * 0.2 / 2.0;
    CHECK(schur == doctest::Approx(0.73 * 2.0));

    MatrixXd S = MatrixXd::Identity(2, 2);
    CHECK(check_psd(covariance_floor_block(S, 1.0), 1e-9));
    CHECK_FALSE(check_psd(covariance_floor_block(S, 2.0), 1e-9));
    CHECK_THROWS_AS(covariance_floor_block(S, 0.0), Error);
}

TEST_CASE("set scaling takes the smallest locally computable ratio") {
    std::string path = write_config("dsmpc_synth_alpha1.json", R"({
        "graph": {"nodes": 1, "edges": []},
        "subsystems": [{"B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                        "state_rows": [{"H": [1.0], "h": 2.0, "p": 0.6666666666666666}]}]
    })");
    NetworkModel net = load_network(path);

    TerminalIngredients ing;
    ing.P = {MatrixXd::Identity(1, 1)};
    ing.K = {MatrixXd::Zero(1, 1)};
    ing.Gamma = {MatrixXd::Zero(1, 1)};
    ing.psi = {2.0};

    // margin = 1.5, eta = 1, H E H' = 1: the state ratio is (1.5-1)^2 / 1
    // and the cap ratio is psi / lam_max(E) = 2.
    AlphaReport rep = compute_alpha(ing, net);
    CHECK(rep.alpha == doctest::Approx(0.25).epsilon(1e-9));
    REQUIRE(rep.bounds.size() == 2);
    bool saw_state = false, saw_cap = false;
    for (const auto& b : rep.bounds) {
        if (b.kind == "state") {
            saw_state = true;
            CHECK(b.value == doctest::Approx(0.25).epsilon(1e-9));
        }
        if (b.kind == "cap") {
            saw_cap = true;
            CHECK(b.value == doctest::Approx(2.0).epsilon(1e-12));
        }
    }
    CHECK(saw_state);
    CHECK(saw_cap);

    SUBCASE("without rows the cap is the only bound") {
        std::string p2 = write_config("dsmpc_synth_alpha2.json", R"({
            "graph": {"nodes": 1, "edges": []},
            "subsystems": [{"B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]}]
        })");
        NetworkModel bare = load_network(p2);
        ing.psi = {3.0};
        AlphaReport r = compute_alpha(ing, bare);
        CHECK(r.alpha == doctest::Approx(3.0).epsilon(1e-12));
        REQUIRE(r.bounds.size() == 1);
        CHECK(r.bounds[0].kind == "cap");
    }

    SUBCASE("a bound that cannot reserve its margin empties the set") {
        std::string p3 = write_config("dsmpc_synth_alpha3.json", R"({
            "graph": {"nodes": 1, "edges": []},
            "subsystems": [{"B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                            "state_rows": [{"H": [1.0], "h": 0.2, "p": 0.99}]}]
        })");
        NetworkModel tight = load_network(p3);
        ing.psi = {2.0};
        CHECK_THROWS_AS(compute_alpha(ing, tight), EmptyTerminalSet);
    }
}

TEST_CASE("set scaling propagates the minimum across a chain") {
    std::string path = write_config("dsmpc_synth_chain.json", R"({
        "graph": {"nodes": 3, "edges": [[1, 2], [2, 3]]},
        "subsystems": [
            {"A": {"2": [[0.1]]}, "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]},
            {"A": {"1": [[0.1]], "3": [[0.1]]}, "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]},
            {"A": {"2": [[0.1]]}, "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]}
        ]
    })");
    NetworkModel net = load_network(path);

    TerminalIngredients ing;
    for (int i = 0; i < 3; ++i) {
        int d = net.nbhd_dim(i);
        ing.P.push_back(MatrixXd::Identity(1, 1));
        ing.K.push_back(MatrixXd::Zero(1, d));
        ing.Gamma.push_back(MatrixXd::Zero(d, d));
    }
    ing.psi = {4.0, 9.0, 1.0};

    // Subsystem one never talks to subsystem three directly; only the
    // diameter-many min exchanges can carry the binding cap across.
    AlphaReport rep = compute_alpha(ing, net);
    CHECK(rep.alpha == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> caps;
    for (const auto& b : rep.bounds)
        if (b.kind == "cap") caps.push_back(b.value);
    REQUIRE(caps.size() == 3);
    CHECK(caps[0] == doctest::Approx(4.0));
    CHECK(caps[1] == doctest::Approx(9.0));
    CHECK(caps[2] == doctest::Approx(1.0));
}

TEST_CASE("ingredients serialize and reload exactly") {
    NetworkModel net = benchmark();
    TerminalIngredients ing = synthesize_terminal(net);
    const std::string path = "/tmp/dsmpc_synth_ingredients.json";
    save_ingredients(ing, path);
    TerminalIngredients back = load_ingredients(path);

    CHECK(back.hash == ing.hash);
    CHECK(back.alpha == ing.alpha);
    REQUIRE(back.P.size() == ing.P.size());
    for (size_t i = 0; i < ing.P.size(); ++i) {
        CHECK((back.P[i] - ing.P[i]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.K[i] - ing.K[i]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.Gamma[i] - ing.Gamma[i]).cwiseAbs().maxCoeff() == 0.0);
        CHECK(back.psi[i] == ing.psi[i]);
        CHECK(back.alpha0[i] == ing.alpha0[i]);
    }

    auto tampered = [&](auto mutate, const char* name) {
        nlohmann::json j;
        {
            std::ifstream in(path);
            in >> j;
        }
        mutate(j);
        std::string tpath = std::string("/tmp/dsmpc_synth_tampered_") + name + ".json";
        std::ofstream out(tpath);
        out << j.dump(2);
        out.close();
        CHECK_THROWS_AS(load_ingredients(tpath), ConfigError);
    };
    tampered([](nlohmann::json& j) { j["surprise"] = 1; }, "unknown");
    tampered([](nlohmann::json& j) { j["subsystems"][0].erase("psi"); }, "missing");
    tampered([](nlohmann::json& j) { j["format"] = "something-else"; }, "format");
    tampered([](nlohmann::json& j) { j["subsystems"][0]["P"][0].erase(1); }, "ragged");
    tampered([](nlohmann::json& j) { j["subsystems"][0]["K"][0].erase(5); }, "gainshape");
}

TEST_CASE("sampled terminal boundary respects every tightened bound") {
    NetworkModel net = benchmark();
    TerminalIngredients ing = synthesize_terminal(net);
    std::vector<MatrixXd> E = weight_inverses(ing);

    MatrixXd Pg = global_terminal_weight(ing, net);
    MatrixXd Kg = global_gain(ing, net);
    MatrixXd W = spd_inverse_sqrt(Pg);
    GlobalSystem g = assemble_global(net);
    MatrixXd AK = g.A + g.B * Kg;
    MatrixXd CK = g.C + g.D * Kg;
    MatrixXd decrease = AK.transpose() * Pg * AK + CK.transpose() * Pg * CK + g.Q +
                        Kg.transpose() * g.R * Kg - Pg;

    std::vector<TighteningParams> tp;
    for (int i = 0; i < net.M(); ++i)
        tp.push_back(make_tightening(net.subsystems[i], net.mpc.eps));

    GaussianStream gs(20260817u);
    double worst_row = -1e300, worst_cap = -1e300, worst_decrease = -1e300;
    const int samples = 10000;
    for (int s = 0; s < samples; ++s) {
        VectorXd u(net.n);
        for (int k = 0; k < net.n; ++k) u[k] = gs.next();
        u.normalize();
        VectorXd z = std::sqrt(ing.alpha) * (W * u);

        for (int i = 0; i < net.M(); ++i) {
            VectorXd zi = z.segment(net.state_offset[i], net.subsystems[i].n);
            for (const auto& row : tp[i].state_rows) {
                double slack = row.margin - row.eta * (row.H * E[i] * row.H.transpose()).value();
                worst_row = std::max(worst_row, (row.H * zi).value() - slack);
            }
            VectorXd zn(net.nbhd_dim(i));
            int off = 0;
            for (int j : net.nbhd[i]) {
                zn.segment(off, net.subsystems[j].n) =
                    z.segment(net.state_offset[j], net.subsystems[j].n);
                off += net.subsystems[j].n;
            }
            for (const auto& row : tp[i].input_rows) {
                MatrixXd HK = row.H * ing.K[i];
                MatrixXd EN = neighborhood_blockdiag(net, i, E);
                double slack = row.margin - row.eta * (HK * EN * HK.transpose()).value();
                worst_cap = std::max(worst_cap, (HK * zn).value() - slack);
            }
            worst_cap = std::max(worst_cap, zn.squaredNorm() - ing.psi[i]);
        }
        worst_decrease = std::max(worst_decrease, (z.transpose() * decrease * z).value());
    }
    CHECK(worst_row <= 1e-9);
    CHECK(worst_cap <= 1e-9);
    CHECK(worst_decrease <= 1e-9);

    // The binding ratio on this model is a covariance cap, so inflating the
    // set scaling must push the aligned boundary point past its cap.
    AlphaReport rep = compute_alpha(ing, net);
    const AlphaBound* binding = &rep.bounds.front();
    for (const auto& b : rep.bounds)
        if (b.value < binding->value) binding = &b;
    REQUIRE(binding->kind == "cap");
    int bi = binding->subsystem;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(E[bi]);
    VectorXd top = es.eigenvectors().col(es.eigenvectors().cols() - 1);
    double lam = es.eigenvalues().maxCoeff();
    VectorXd zi = std::sqrt(1.05 * ing.alpha * lam) * top;
    CHECK(zi.squaredNorm() > ing.psi[bi] + 1e-6);
    // At scaling alpha the same point sits exactly on the cap.
    CHECK(ing.alpha * lam <= ing.psi[bi] + 1e-9);
}
