#include "dsmpc/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "json.hpp"

#include "dsmpc/conic.hpp"
#include "dsmpc/errors.hpp"
#include "dsmpc/tightening.hpp"

namespace dsmpc {
namespace {

using conic::bmat;
using conic::ExprMatrix;
using conic::LinExpr;
using conic::Problem;
using conic::SolveOptions;
using conic::SolveResult;
using conic::Solver;
using conic::Status;
using conic::VarRef;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

MatrixXd symmetrized(const MatrixXd& M) { return 0.5 * (M + M.transpose()); }

// Weight of the quadratic tiebreak on the flat directions of the design
// program, in unscaled units. Small enough to leave the barrier optimum in
// place, large enough to make the optimizer unique across solve modes.
constexpr double kTiebreakWeight = 1e-2;

// Explicit floor on the design variable eigenvalues, in scaled units. Far
// below any meaningful optimum; its role is to turn models without a
// stabilizing design into strongly infeasible programs, which is what makes
// the failure certifiable instead of a slow stall.
constexpr double kEigenFloor = 1e-6;

MatrixXd sqrt_spd(const MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(M));
    VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Inverse through the eigendecomposition so the result stays symmetric.
MatrixXd inv_spd(const MatrixXd& M, const std::string& what) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(M));
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw SynthesisInfeasible(what + " is not positive definite");
    return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

double min_eig(const MatrixXd& M) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(symmetrized(M)).eigenvalues().minCoeff();
}

double max_eig(const MatrixXd& M) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(symmetrized(M)).eigenvalues().maxCoeff();
}

ExprMatrix zeros(int r, int c) { return ExprMatrix::constant(MatrixXd::Zero(r, c)); }
ExprMatrix ident(int n) { return ExprMatrix::constant(MatrixXd::Identity(n, n)); }

// View of an r x c unstructured variable, stored row major.
ExprMatrix matrix_expr(const Problem& p, VarRef v, int r, int c) {
    ExprMatrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = p.entry(v, i * c + j);
    return m;
}

// Offset of subsystem j's block inside i's neighborhood stack.
int nbhd_offset(const NetworkModel& net, int i, int j) {
    int off = 0;
    for (int k : net.nbhd[i]) {
        if (k == j) return off;
        off += net.subsystems[k].n;
    }
    throw Error("nbhd_offset: not a neighbor");
}

// Neighborhood selection W_i (nbhd_dim x n): picks the stacked neighbor
// states out of the global state in ascending order.
MatrixXd selection(const NetworkModel& net, int i) {
    MatrixXd W = MatrixXd::Zero(net.nbhd_dim(i), net.n);
    int off = 0;
    for (int j : net.nbhd[i]) {
        int nj = net.subsystems[j].n;
        W.block(off, net.state_offset[j], nj, nj).setIdentity();
        off += nj;
    }
    return W;
}

// Longest shortest path over the coupling graph; disconnected pairs are
// skipped (each component settles on its own minimum).
int graph_diameter(const NetworkModel& net) {
    int M = net.M(), diam = 0;
    for (int s = 0; s < M; ++s) {
        std::vector<int> dist(M, -1);
        std::deque<int> q{s};
        dist[s] = 0;
        while (!q.empty()) {
            int v = q.front();
            q.pop_front();
            for (int w : net.nbhd[v])
                if (dist[w] < 0) {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
        }
        for (int v = 0; v < M; ++v) diam = std::max(diam, dist[v]);
    }
    return diam;
}

double scale_floor(const NetworkModel& net);

LinExpr quad_row_form(const ExprMatrix& E, const Eigen::RowVectorXd& H) {
    LinExpr q(0.0);
    for (int a = 0; a < E.rows(); ++a)
        for (int b = 0; b < E.cols(); ++b) {
            LinExpr t = E(a, b);
            t *= H(a) * H(b);
            q += t;
        }
    return q;
}

// Emits every constraint block owned by one agent: the cost decrease block,
// the terminal covariance propagation block, and the tightened-row margin
// reservations. Expression arguments let the caller bind either the shared
// variables (monolithic) or per-agent copies (consensus). sigma is a cost
// scaling: the program is posed in E' = sigma E, Y' = sigma Y, F' = sigma F
// with Q and R divided by sigma, which keeps the design blocks near unit
// size; callers undo it on recovery.
void add_agent_blocks(Problem& prob, const NetworkModel& net, int i, const LocalMaps& maps,
                      const ExprMatrix& Ei, const ExprMatrix& EN, const ExprMatrix& Y,
                      VarRef F, double sigma, const LinExpr* slack = nullptr) {
    const int d = net.nbhd_dim(i);
    const int n = net.subsystems[i].n;
    const int m = net.subsystems[i].m;
    const int self = nbhd_offset(net, i, i);

    ExprMatrix AE = maps.A * EN + maps.B * Y;  // n x d
    ExprMatrix CE = maps.C * EN + maps.D * Y;

    ExprMatrix corner(d, d);
    corner.set_block(self, self, Ei);
    corner = corner + prob.expr(F);

    MatrixXd sqQ = sqrt_spd((net.subsystems[i].Q +
                             net.synthesis.q_margin * MatrixXd::Identity(n, n)) /
                            sigma);
    MatrixXd Qbar = MatrixXd::Zero(d, d);
    Qbar.block(self, self, n, n) = sqQ;
    ExprMatrix QE = Qbar * EN;  // d x d, nonzero only in the self block row
    MatrixXd sqR = sqrt_spd(net.subsystems[i].R / sigma);
    ExprMatrix RY = sqR * Y;  // m x d

    ExprMatrix decrease = bmat({
        {corner, AE.transpose(), CE.transpose(), QE.transpose(), RY.transpose()},
        {AE, Ei, zeros(n, n), zeros(n, d), zeros(n, m)},
        {CE, zeros(n, n), Ei, zeros(n, d), zeros(n, m)},
        {QE, zeros(d, n), zeros(d, n), ident(d), zeros(d, m)},
        {RY, zeros(m, n), zeros(m, n), zeros(m, d), ident(m)},
    });
    ExprMatrix propagation = bmat({
        {Ei, AE, CE},
        {AE.transpose(), EN, zeros(d, d)},
        {CE.transpose(), zeros(d, d), 0.5 * EN},
    });
    if (slack) {
        for (int k = 0; k < decrease.rows(); ++k) decrease(k, k) += *slack;
        for (int k = 0; k < propagation.rows(); ++k) propagation(k, k) += *slack;
    }
    prob.add_psd(decrease);
    prob.add_psd(propagation);

    ExprMatrix floored(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            LinExpr e = Ei(a, b);
            if (a == b) e += LinExpr(-kEigenFloor);
            floored(a, b) = e;
        }
    prob.add_psd(floored);

    // Margin reservations keep a kappa fraction of each tightened bound
    // available for the terminal set.
    TighteningParams tp = make_tightening(net.subsystems[i], net.mpc.eps);
    const double kap = net.synthesis.kappa;
    for (const auto& rt : tp.state_rows)
        prob.add_nonneg(LinExpr(sigma * kap * rt.margin) - rt.eta * quad_row_form(Ei, rt.H));
    for (const auto& rt : tp.input_rows) {
        ExprMatrix HY = MatrixXd(rt.H) * Y;  // 1 x d
        ExprMatrix cell(1, 1);
        cell(0, 0) = LinExpr(sigma * kap * rt.margin / rt.eta);
        prob.add_psd(bmat({{cell, HY}, {HY.transpose(), EN}}));
    }

    // The objective is flat in Y and F at an optimum (only E carries the
    // barrier), so the gain would be solver dependent. A small quadratic
    // tiebreak pins the minimum-norm point; both solve modes add the same
    // terms, which is what makes them land on the same gain. The weight is
    // fixed in unscaled units (the (s0/sigma)^2 factor cancels the variable
    // scaling), so every phase optimizes one physical objective no matter
    // which sigma it runs under.
    const double s0 = scale_floor(net);
    const double tw = kTiebreakWeight * (s0 / sigma) * (s0 / sigma);
    for (int r = 0; r < Y.rows(); ++r)
        for (int c = 0; c < Y.cols(); ++c) prob.add_quad_cost(Y(r, c), tw);
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b)
            prob.add_quad_cost(prob.mat_entry(F, a, b), (a == b) ? tw : 2.0 * tw);
}

// Baseline for the cost scaling, computable by every agent from its own
// weights plus one max exchange.
double scale_floor(const NetworkModel& net) {
    double s = 0.0;
    for (const auto& sub : net.subsystems) {
        s = std::max(s, max_eig(sub.Q));
        s = std::max(s, max_eig(sub.R));
    }
    return s > 0.0 ? s : 1.0;
}

struct RawDesign {
    std::vector<MatrixXd> E, Y, F;
};

TerminalIngredients recover_ingredients(const NetworkModel& net, const RawDesign& raw) {
    const int M = net.M();
    TerminalIngredients ing;
    ing.P.resize(M);
    ing.K.resize(M);
    ing.Gamma.resize(M);
    ing.psi.resize(M);
    for (int i = 0; i < M; ++i)
        ing.P[i] = inv_spd(raw.E[i], "terminal design block " + std::to_string(i + 1));
    for (int i = 0; i < M; ++i) {
        const int d = net.nbhd_dim(i);
        MatrixXd EN = MatrixXd::Zero(d, d);
        int off = 0;
        for (int j : net.nbhd[i]) {
            int nj = net.subsystems[j].n;
            EN.block(off, off, nj, nj) = raw.E[j];
            off += nj;
        }
        MatrixXd ENi = inv_spd(EN, "neighborhood design block " + std::to_string(i + 1));
        ing.K[i] = raw.Y[i] * ENi;
        ing.Gamma[i] = symmetrized(ENi * symmetrized(raw.F[i]) * ENi);
        ing.psi[i] = min_eig(EN);
    }
    ing.hash = model_hash(net);
    AlphaReport rep = compute_alpha(ing, net);
    ing.alpha = rep.alpha;
    ing.alpha0.assign(M, rep.alpha / M);
    return ing;
}

struct MonolithicProgram {
    Problem prob;
    std::vector<VarRef> E, Y, F;
};

MonolithicProgram build_monolithic(const NetworkModel& net, double sigma) {
    const int M = net.M();
    MonolithicProgram mp;
    Problem& prob = mp.prob;
    mp.E.resize(M);
    mp.Y.resize(M);
    mp.F.resize(M);
    for (int i = 0; i < M; ++i) {
        const auto& sub = net.subsystems[i];
        const int d = net.nbhd_dim(i);
        mp.E[i] = prob.add_symmetric("E" + std::to_string(i), sub.n);
        mp.Y[i] = prob.add_vector("Y" + std::to_string(i), sub.m * d);
        mp.F[i] = prob.add_symmetric("F" + std::to_string(i), d);
    }
    for (int i = 0; i < M; ++i) {
        const int d = net.nbhd_dim(i);
        ExprMatrix EN(d, d);
        int off = 0;
        for (int j : net.nbhd[i]) {
            EN.set_block(off, off, prob.expr(mp.E[j]));
            off += net.subsystems[j].n;
        }
        add_agent_blocks(prob, net, i, local_maps(net, i), prob.expr(mp.E[i]), EN,
                         matrix_expr(prob, mp.Y[i], net.subsystems[i].m, d), mp.F[i], sigma);
        prob.add_logdet_cost(mp.E[i], 1.0);
    }

    // Relaxation weights must cancel in the aggregate: the negated sum of
    // the lifted blocks is required semidefinite.
    ExprMatrix coup = zeros(net.n, net.n);
    for (int i = 0; i < M; ++i) {
        for (int ja : net.nbhd[i]) {
            int la = nbhd_offset(net, i, ja), ga = net.state_offset[ja];
            int na = net.subsystems[ja].n;
            for (int jb : net.nbhd[i]) {
                int lb = nbhd_offset(net, i, jb), gb = net.state_offset[jb];
                int nb = net.subsystems[jb].n;
                for (int r = 0; r < na; ++r)
                    for (int c = 0; c < nb; ++c)
                        coup(ga + r, gb + c) -= prob.mat_entry(mp.F[i], la + r, lb + c);
            }
        }
    }
    prob.add_psd(coup);
    return mp;
}

RawDesign extract_design(const MonolithicProgram& mp, const NetworkModel& net,
                         const SolveResult& res, double sigma) {
    const int M = net.M();
    RawDesign raw;
    raw.E.resize(M);
    raw.Y.resize(M);
    raw.F.resize(M);
    for (int i = 0; i < M; ++i) {
        const int d = net.nbhd_dim(i);
        raw.E[i] = symmetrized(mp.prob.matrix_value(mp.E[i], res)) / sigma;
        VectorXd y = mp.prob.vector_value(mp.Y[i], res);
        raw.Y[i] = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                            Eigen::RowMajor>>(y.data(), net.subsystems[i].m, d) /
                   sigma;
        raw.F[i] = symmetrized(mp.prob.matrix_value(mp.F[i], res)) / sigma;
    }
    return raw;
}

// Classification program for failed solves: minimize the uniform slack the
// dynamics blocks need above the eigenvalue floor. No barrier, so it always
// converges; a positive optimum certifies that no stabilizing design exists
// (the barrier domain is open, which makes such models only weakly
// infeasible in the design program itself, with no finite certificate).
bool design_feasible(const NetworkModel& net, double sigma) {
    // The probe floor is far above the design floor: the slack optimum of a
    // bad model scales with the floor, and the solver resolves 1e-4 against
    // its accuracy limits where it cannot resolve 1e-6. Models that are
    // feasible only below this floor stay in the failed-solve path.
    constexpr double kProbeFloor = 1e-4;
    const int M = net.M();
    Problem prob;
    std::vector<VarRef> E(M), Y(M), F(M);
    for (int i = 0; i < M; ++i) {
        const auto& sub = net.subsystems[i];
        const int d = net.nbhd_dim(i);
        E[i] = prob.add_symmetric("E" + std::to_string(i), sub.n);
        Y[i] = prob.add_vector("Y" + std::to_string(i), sub.m * d);
        F[i] = prob.add_symmetric("F" + std::to_string(i), d);
    }
    VarRef t = prob.add_vector("t", 1);
    LinExpr te = prob.expr(t)(0, 0);
    for (int i = 0; i < M; ++i) {
        const int d = net.nbhd_dim(i);
        const int n = net.subsystems[i].n;
        ExprMatrix EN(d, d);
        int off = 0;
        for (int j : net.nbhd[i]) {
            EN.set_block(off, off, prob.expr(E[j]));
            off += net.subsystems[j].n;
        }
        add_agent_blocks(prob, net, i, local_maps(net, i), prob.expr(E[i]), EN,
                         matrix_expr(prob, Y[i], net.subsystems[i].m, d), F[i], sigma, &te);
        ExprMatrix floored(n, n);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                LinExpr e = prob.expr(E[i])(a, b);
                if (a == b) e += LinExpr(-kProbeFloor);
                floored(a, b) = e;
            }
        prob.add_psd(floored);
    }
    ExprMatrix coup = zeros(net.n, net.n);
    for (int i = 0; i < M; ++i) {
        for (int ja : net.nbhd[i]) {
            int la = nbhd_offset(net, i, ja), ga = net.state_offset[ja];
            int na = net.subsystems[ja].n;
            for (int jb : net.nbhd[i]) {
                int lb = nbhd_offset(net, i, jb), gb = net.state_offset[jb];
                int nb = net.subsystems[jb].n;
                for (int r = 0; r < na; ++r)
                    for (int c = 0; c < nb; ++c)
                        coup(ga + r, gb + c) -= prob.mat_entry(F[i], la + r, lb + c);
            }
        }
    }
    prob.add_psd(coup);
    prob.add_nonneg(te + LinExpr(1.0));
    prob.add_cost(te);
    // strictly increasing in t, so the minimizer is unchanged; the curvature
    // regularizes the splitting iterations
    prob.add_quad_cost(te, 1e-2);

    Solver solver(prob);
    SolveOptions opts;
    opts.tol = 1e-6;
    opts.max_iter = 100000;
    SolveResult res = solver.solve(opts);
    if (res.status == Status::Infeasible) return false;
    if (!res.ok())
        throw Error("terminal design feasibility probe failed: " + conic::to_string(res.status));
    return prob.vector_value(t, res)[0] <= 0.5 * kProbeFloor;
}

RawDesign solve_monolithic(const NetworkModel& net) {
    // Pilot pass at loose tolerance fixes the cost scaling so the refined
    // pass iterates on blocks of unit size.
    const double sigma0 = scale_floor(net);
    MonolithicProgram pilot = build_monolithic(net, sigma0);
    Solver pilot_solver(pilot.prob);
    SolveOptions pilot_opts;
    pilot_opts.tol = 1e-4;
    pilot_opts.max_iter = 50000;
    SolveResult pilot_res = pilot_solver.solve(pilot_opts);
    if (pilot_res.status == Status::Infeasible)
        throw SynthesisInfeasible("terminal design program is infeasible for this model");
    if (!pilot_res.ok()) {
        if (!design_feasible(net, sigma0))
            throw SynthesisInfeasible("no stabilizing terminal design exists for this model");
        throw Error("terminal design pilot solve failed: " + conic::to_string(pilot_res.status));
    }

    double logdet = 0.0;
    int dims = 0;
    for (int i = 0; i < net.M(); ++i) {
        MatrixXd Ei = symmetrized(pilot.prob.matrix_value(pilot.E[i], pilot_res));
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(Ei);
        for (int k = 0; k < Ei.rows(); ++k)
            logdet += std::log(std::max(es.eigenvalues()[k], 1e-12));
        dims += static_cast<int>(Ei.rows());
    }
    const double gmean = std::exp(logdet / dims);
    const double sigma = sigma0 / std::clamp(gmean, 1e-6, 1e6);

    MonolithicProgram mp = build_monolithic(net, sigma);
    Solver solver(mp.prob);
    SolveOptions opts;
    opts.tol = 1e-9;
    opts.max_iter = 400000;
    SolveResult res = solver.solve(opts);
    if (res.status == Status::Infeasible)
        throw SynthesisInfeasible("terminal design program is infeasible for this model");
    if (!res.ok())
        throw Error("terminal design solve failed: " + conic::to_string(res.status));
    return extract_design(mp, net, res, sigma);
}

// Consensus solve: each agent keeps copies of its neighborhood blocks and a
// private relaxation block. Copies are driven together by averaging with
// scaled duals; the aggregate relaxation bound is enforced by projecting the
// averaged lifted blocks onto the semidefinite order, in the standard
// splitting for a shared constraint on a sum. Fixed points coincide with the
// monolithic optimum.
struct AgentProgram {
    std::unique_ptr<Solver> solver;
    std::vector<VarRef> Ecopy;  // by neighborhood position
    VarRef Yvar, Fvar;
    // parametric rows of the quadratic pull terms, with the 2*sqrt(weight)
    // factor the lowering applied to each
    struct Term {
        int row;
        double coef;
        int a, b;
    };
    std::vector<std::vector<Term>> eterms;  // [copy][upper-tri entry]
    std::vector<Term> fterms;
};

// Proximal weight for both exchanged block families. Stiff enough that the
// agent subproblems stay cheap under warm starts; the tiebreak keeps the
// flat directions moving at this setting.
constexpr double kConsensusPenalty = 50.0;
constexpr double kConsensusTol = 1e-9;
constexpr int kConsensusMaxIter = 20000;

MatrixXd restrict_to_nbhd(const NetworkModel& net, int i, const MatrixXd& X) {
    const int d = net.nbhd_dim(i);
    MatrixXd R(d, d);
    for (int ja : net.nbhd[i])
        for (int jb : net.nbhd[i])
            R.block(nbhd_offset(net, i, ja), nbhd_offset(net, i, jb), net.subsystems[ja].n,
                    net.subsystems[jb].n) =
                X.block(net.state_offset[ja], net.state_offset[jb], net.subsystems[ja].n,
                        net.subsystems[jb].n);
    return R;
}

MatrixXd place_from_nbhd(const NetworkModel& net, int i, const MatrixXd& Fd) {
    MatrixXd X = MatrixXd::Zero(net.n, net.n);
    for (int ja : net.nbhd[i])
        for (int jb : net.nbhd[i])
            X.block(net.state_offset[ja], net.state_offset[jb], net.subsystems[ja].n,
                    net.subsystems[jb].n) =
                Fd.block(nbhd_offset(net, i, ja), nbhd_offset(net, i, jb),
                         net.subsystems[ja].n, net.subsystems[jb].n);
    return X;
}

MatrixXd project_nsd(const MatrixXd& X) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(X));
    return es.eigenvectors() * es.eigenvalues().cwiseMin(0.0).asDiagonal() *
           es.eigenvectors().transpose();
}

RawDesign solve_consensus(const NetworkModel& net) {
    const int M = net.M();
    const double rho = kConsensusPenalty;
    // One max exchange over the weights fixes a shared cost scaling. The
    // tiebreak is posed in unscaled units, so staying at the floor solves
    // the same program the refined monolithic pass solves.
    const double sigma = scale_floor(net);

    std::vector<AgentProgram> agents(M);
    for (int i = 0; i < M; ++i) {
        const auto& sub = net.subsystems[i];
        const int d = net.nbhd_dim(i);
        const int deg = static_cast<int>(net.nbhd[i].size());
        AgentProgram& ag = agents[i];

        Problem p;
        ag.Ecopy.resize(deg);
        for (int c = 0; c < deg; ++c)
            ag.Ecopy[c] = p.add_symmetric("E" + std::to_string(net.nbhd[i][c]),
                                          net.subsystems[net.nbhd[i][c]].n);
        ag.Yvar = p.add_vector("Y", sub.m * d);
        ag.Fvar = p.add_symmetric("F", d);

        int self_pos = 0;
        ExprMatrix EN(d, d);
        int off = 0;
        for (int c = 0; c < deg; ++c) {
            if (net.nbhd[i][c] == i) self_pos = c;
            EN.set_block(off, off, p.expr(ag.Ecopy[c]));
            off += net.subsystems[net.nbhd[i][c]].n;
        }
        add_agent_blocks(p, net, i, local_maps(net, i), p.expr(ag.Ecopy[self_pos]), EN,
                         matrix_expr(p, ag.Yvar, sub.m, d), ag.Fvar, sigma);
        p.add_logdet_cost(ag.Ecopy[self_pos], 1.0);

        // Pull terms toward the exchanged targets; targets land in the
        // constant of each term, edited per round through the lowered row.
        // The tiebreak terms occupy the leading quadratic slots.
        int qk = sub.m * d + svec_dim(d);
        ag.eterms.resize(deg);
        for (int c = 0; c < deg; ++c) {
            int nj = net.subsystems[net.nbhd[i][c]].n;
            for (int a = 0; a < nj; ++a)
                for (int b = a; b < nj; ++b) {
                    double w = (a == b) ? 0.5 * rho : rho;
                    p.add_quad_cost(p.mat_entry(ag.Ecopy[c], a, b), w);
                    ag.eterms[c].push_back({qk++, 2.0 * std::sqrt(w), a, b});
                }
        }
        for (int a = 0; a < d; ++a)
            for (int b = a; b < d; ++b) {
                double w = (a == b) ? 0.5 * rho : rho;
                p.add_quad_cost(p.mat_entry(ag.Fvar, a, b), w);
                ag.fterms.push_back({qk++, 2.0 * std::sqrt(w), a, b});
            }
        for (auto& terms : ag.eterms)
            for (auto& t : terms) t.row = p.quad_term_row(t.row);
        for (auto& t : ag.fterms) t.row = p.quad_term_row(t.row);

        ag.solver = std::make_unique<Solver>(p);
    }

    // Shared iterates.
    std::vector<MatrixXd> Ebar(M);
    for (int i = 0; i < M; ++i)
        Ebar[i] = 0.01 * MatrixXd::Identity(net.subsystems[i].n, net.subsystems[i].n);
    std::vector<std::vector<MatrixXd>> lam(M);  // consensus duals, per copy
    std::vector<MatrixXd> Ycur(M), Fcur(M), lifted(M);
    for (int i = 0; i < M; ++i) {
        lam[i].assign(net.nbhd[i].size(), MatrixXd());
        for (size_t c = 0; c < net.nbhd[i].size(); ++c) {
            int nj = net.subsystems[net.nbhd[i][c]].n;
            lam[i][c] = MatrixXd::Zero(nj, nj);
        }
        lifted[i] = MatrixXd::Zero(net.n, net.n);
    }
    MatrixXd zbar = MatrixXd::Zero(net.n, net.n);
    MatrixXd wdual = MatrixXd::Zero(net.n, net.n);
    MatrixXd ubar = MatrixXd::Zero(net.n, net.n);
    std::vector<std::vector<MatrixXd>> copies(M);

    SolveOptions sub_opts;
    sub_opts.tol = 1e-10;
    sub_opts.max_iter = 200000;
    sub_opts.warm_start = true;  // first solve of each agent is still cold

    double residual = std::numeric_limits<double>::infinity();
    for (int it = 0; it < kConsensusMaxIter && residual > kConsensusTol; ++it) {
        // Private blocks have no exchanged residual; their per-round drift
        // stands in so the loop cannot stop while the gain still moves.
        double local_drift = 0.0, drift_y = 0.0, drift_f = 0.0;
        for (int i = 0; i < M; ++i) {
            AgentProgram& ag = agents[i];
            const int deg = static_cast<int>(net.nbhd[i].size());
            for (int c = 0; c < deg; ++c) {
                const MatrixXd target = Ebar[net.nbhd[i][c]] - lam[i][c];
                for (const auto& t : ag.eterms[c])
                    ag.solver->set_b(t.row, -t.coef * target(t.a, t.b));
            }
            const MatrixXd Ftar =
                restrict_to_nbhd(net, i, lifted[i] - ubar + zbar - wdual);
            for (const auto& t : ag.fterms)
                ag.solver->set_b(t.row, -t.coef * Ftar(t.a, t.b));

            SolveResult res = ag.solver->solve(sub_opts);
            if (res.status == Status::Infeasible)
                throw SynthesisInfeasible("terminal design program is infeasible for agent " +
                                          std::to_string(i + 1));
            if (!res.ok()) {
                if (it == 0 && !design_feasible(net, sigma))
                    throw SynthesisInfeasible(
                        "no stabilizing terminal design exists for this model");
                throw Error("terminal design agent solve failed: " +
                            conic::to_string(res.status));
            }
            // The agent Problem is gone; decode straight from the packed
            // solution layout.
            copies[i].resize(deg);
            for (int c = 0; c < deg; ++c) {
                int nj = net.subsystems[net.nbhd[i][c]].n;
                copies[i][c] = smat(res.x.segment(ag.Ecopy[c].offset, svec_dim(nj)));
            }
            const int d = net.nbhd_dim(i);
            MatrixXd Ynew(net.subsystems[i].m, d);
            for (int a = 0; a < net.subsystems[i].m; ++a)
                for (int b = 0; b < d; ++b) Ynew(a, b) = res.x[ag.Yvar.offset + a * d + b];
            if (Ycur[i].size() > 0)
                drift_y = std::max(drift_y, (Ynew - Ycur[i]).cwiseAbs().maxCoeff());
            Ycur[i] = std::move(Ynew);
            MatrixXd Fnew = smat(res.x.segment(ag.Fvar.offset, svec_dim(d)));
            if (Fcur[i].size() > 0)
                drift_f = std::max(drift_f, (Fnew - Fcur[i]).cwiseAbs().maxCoeff());
            Fcur[i] = std::move(Fnew);
            lifted[i] = place_from_nbhd(net, i, Fcur[i]);
        }

        // Averaging with duals, then the aggregate projection.
        double rp = 0.0, rd = 0.0;
        for (int j = 0; j < M; ++j) {
            MatrixXd acc = MatrixXd::Zero(net.subsystems[j].n, net.subsystems[j].n);
            int cnt = 0;
            for (int i : net.nbhd[j]) {
                int c = static_cast<int>(std::lower_bound(net.nbhd[i].begin(),
                                                          net.nbhd[i].end(), j) -
                                         net.nbhd[i].begin());
                acc += copies[i][c] + lam[i][c];
                ++cnt;
            }
            MatrixXd Enew = symmetrized(acc / cnt);
            rd = std::max(rd, (Enew - Ebar[j]).cwiseAbs().maxCoeff());
            Ebar[j] = Enew;
            for (int i : net.nbhd[j]) {
                int c = static_cast<int>(std::lower_bound(net.nbhd[i].begin(),
                                                          net.nbhd[i].end(), j) -
                                         net.nbhd[i].begin());
                lam[i][c] += copies[i][c] - Ebar[j];
                rp = std::max(rp, (copies[i][c] - Ebar[j]).cwiseAbs().maxCoeff());
            }
        }
        ubar.setZero();
        for (int i = 0; i < M; ++i) ubar += lifted[i];
        ubar /= M;
        MatrixXd znew = project_nsd(static_cast<double>(M) * (ubar + wdual)) / M;
        rd = std::max(rd, (znew - zbar).cwiseAbs().maxCoeff());
        zbar = znew;
        wdual += ubar - zbar;
        rp = std::max(rp, (ubar - zbar).cwiseAbs().maxCoeff());

        local_drift = std::max(drift_y, drift_f);
        residual = std::max({rp, rd, local_drift});
    }
    if (residual > kConsensusTol)
        throw Error("terminal design consensus did not converge (residual " +
                    std::to_string(residual) + ")");

    RawDesign raw;
    raw.E = Ebar;
    raw.Y = Ycur;
    raw.F = Fcur;
    for (int i = 0; i < M; ++i) {
        raw.E[i] /= sigma;
        raw.Y[i] /= sigma;
        raw.F[i] /= sigma;
    }
    return raw;
}

std::vector<std::vector<double>> to_rows(const MatrixXd& M) {
    std::vector<std::vector<double>> rows(M.rows());
    for (int i = 0; i < M.rows(); ++i) {
        rows[i].resize(M.cols());
        for (int j = 0; j < M.cols(); ++j) rows[i][j] = M(i, j);
    }
    return rows;
}

MatrixXd from_rows(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a matrix");
    int rows = static_cast<int>(j.size());
    int cols = -1;
    MatrixXd M;
    for (int i = 0; i < rows; ++i) {
        if (!j[i].is_array()) throw ConfigError(what + ": expected a matrix");
        if (cols < 0) {
            cols = static_cast<int>(j[i].size());
            if (cols == 0) throw ConfigError(what + ": empty matrix row");
            M.resize(rows, cols);
        }
        if (static_cast<int>(j[i].size()) != cols) throw ConfigError(what + ": ragged matrix");
        for (int c = 0; c < cols; ++c) {
            if (!j[i][c].is_number()) throw ConfigError(what + ": non-numeric entry");
            M(i, c) = j[i][c].get<double>();
        }
    }
    return M;
}

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
    for (const char* k : allowed)
        if (!j.contains(k)) throw ConfigError("missing key '" + std::string(k) + "' in " + where);
}

constexpr const char* kIngredientsFormat = "dsmpc-ingredients-v1";

}  // namespace

TerminalIngredients synthesize_terminal(const NetworkModel& net, SynthesisMode mode) {
    RawDesign raw =
        mode == SynthesisMode::Monolithic ? solve_monolithic(net) : solve_consensus(net);
    return recover_ingredients(net, raw);
}

Eigen::MatrixXd global_gain(const TerminalIngredients& ing, const NetworkModel& net) {
    MatrixXd K = MatrixXd::Zero(net.m, net.n);
    for (int i = 0; i < net.M(); ++i)
        K.block(net.input_offset[i], 0, net.subsystems[i].m, net.n) =
            ing.K[i] * selection(net, i);
    return K;
}

Eigen::MatrixXd global_terminal_weight(const TerminalIngredients& ing,
                                       const NetworkModel& net) {
    MatrixXd P = MatrixXd::Zero(net.n, net.n);
    for (int i = 0; i < net.M(); ++i)
        P.block(net.state_offset[i], net.state_offset[i], net.subsystems[i].n,
                net.subsystems[i].n) = ing.P[i];
    return P;
}

double verify_assumption4(const TerminalIngredients& ing, const NetworkModel& net) {
    GlobalSystem g = assemble_global(net);
    MatrixXd K = global_gain(ing, net);
    MatrixXd P = global_terminal_weight(ing, net);
    MatrixXd AK = g.A + g.B * K;
    MatrixXd CK = g.C + g.D * K;
    MatrixXd res = AK.transpose() * P * AK + CK.transpose() * P * CK + g.Q +
                   K.transpose() * g.R * K - P;
    return max_eig(res);
}

AlphaReport compute_alpha(const TerminalIngredients& ing, const NetworkModel& net) {
    const int M = net.M();
    AlphaReport rep;
    std::vector<MatrixXd> E(M);
    for (int i = 0; i < M; ++i)
        E[i] = inv_spd(ing.P[i], "terminal weight " + std::to_string(i + 1));

    std::vector<double> local(M, std::numeric_limits<double>::infinity());
    for (int i = 0; i < M; ++i) {
        const int d = net.nbhd_dim(i);
        MatrixXd EN = MatrixXd::Zero(d, d);
        int off = 0;
        for (int j : net.nbhd[i]) {
            EN.block(off, off, net.subsystems[j].n, net.subsystems[j].n) = E[j];
            off += net.subsystems[j].n;
        }
        TighteningParams tp = make_tightening(net.subsystems[i], net.mpc.eps);
        for (size_t r = 0; r < tp.state_rows.size(); ++r) {
            const auto& rt = tp.state_rows[r];
            double quad = (rt.H * E[i] * rt.H.transpose()).value();
            double slack = rt.margin - rt.eta * quad;
            if (slack <= 0.0)
                throw EmptyTerminalSet("state bound " + std::to_string(r + 1) +
                                       " of subsystem " + std::to_string(i + 1) +
                                       " leaves no terminal margin");
            if (quad <= 0.0) continue;  // row never binds the set
            double val = slack * slack / quad;
            rep.bounds.push_back({i, "state", static_cast<int>(r), val});
            local[i] = std::min(local[i], val);
        }
        for (size_t r = 0; r < tp.input_rows.size(); ++r) {
            const auto& rt = tp.input_rows[r];
            Eigen::RowVectorXd HK = rt.H * ing.K[i];
            double quad = (HK * EN * HK.transpose()).value();
            double slack = rt.margin - rt.eta * quad;
            if (slack <= 0.0)
                throw EmptyTerminalSet("input bound " + std::to_string(r + 1) +
                                       " of subsystem " + std::to_string(i + 1) +
                                       " leaves no terminal margin");
            if (quad <= 0.0) continue;
            double val = slack * slack / quad;
            rep.bounds.push_back({i, "input", static_cast<int>(r), val});
            local[i] = std::min(local[i], val);
        }
        double cap = ing.psi[i] / max_eig(E[i]);
        rep.bounds.push_back({i, "cap", 0, cap});
        local[i] = std::min(local[i], cap);
    }

    // Neighborhood minimum rounds; after diameter-many rounds every agent in
    // a connected component holds the component minimum.
    int rounds = graph_diameter(net);
    for (int r = 0; r < rounds; ++r) {
        std::vector<double> next(M);
        for (int i = 0; i < M; ++i) {
            double v = local[i];
            for (int j : net.nbhd[i]) v = std::min(v, local[j]);
            next[i] = v;
        }
        local = std::move(next);
    }
    rep.alpha = *std::min_element(local.begin(), local.end());
    if (!std::isfinite(rep.alpha))
        throw EmptyTerminalSet("no constraint bounds the terminal set scaling");
    return rep;
}

Eigen::MatrixXd terminal_propagation_block(const LocalMaps& m, const Eigen::MatrixXd& E_nbhd,
                                           const Eigen::MatrixXd& Y,
                                           const Eigen::MatrixXd& E_self) {
    const int n = static_cast<int>(E_self.rows());
    const int d = static_cast<int>(E_nbhd.rows());
    MatrixXd AE = m.A * E_nbhd + m.B * Y;
    MatrixXd CE = m.C * E_nbhd + m.D * Y;
    MatrixXd out = MatrixXd::Zero(n + 2 * d, n + 2 * d);
    out.block(0, 0, n, n) = E_self;
    out.block(0, n, n, d) = AE;
    out.block(0, n + d, n, d) = CE;
    out.block(n, 0, d, n) = AE.transpose();
    out.block(n + d, 0, d, n) = CE.transpose();
    out.block(n, n, d, d) = E_nbhd;
    out.block(n + d, n + d, d, d) = 0.5 * E_nbhd;
    return out;
}

Eigen::MatrixXd covariance_floor_block(const Eigen::MatrixXd& S, double psi) {
    const int n = static_cast<int>(S.rows());
    if (psi <= 0.0) throw Error("covariance_floor_block: psi must be positive");
    MatrixXd out(2 * n, 2 * n);
    out.block(0, 0, n, n) = S;
    out.block(0, n, n, n) = MatrixXd::Identity(n, n);
    out.block(n, 0, n, n) = MatrixXd::Identity(n, n);
    out.block(n, n, n, n) = MatrixXd::Identity(n, n) / psi;
    return out;
}

void save_ingredients(const TerminalIngredients& ing, const std::string& path) {
    json j;
    j["format"] = kIngredientsFormat;
    j["model_hash"] = ing.hash;
    j["alpha"] = ing.alpha;
    j["alpha0"] = ing.alpha0;
    json subs = json::array();
    for (size_t i = 0; i < ing.P.size(); ++i) {
        json s;
        s["P"] = to_rows(ing.P[i]);
        s["K"] = to_rows(ing.K[i]);
        s["Gamma"] = to_rows(ing.Gamma[i]);
        s["psi"] = ing.psi[i];
        subs.push_back(std::move(s));
    }
    j["subsystems"] = std::move(subs);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write ingredients file: " + path);
    out << j.dump(2) << '\n';
}

TerminalIngredients load_ingredients(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read ingredients file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("ingredients file " + path + ": " + e.what());
    }
    require_keys(j, {"format", "model_hash", "alpha", "alpha0", "subsystems"}, path);
    if (j["format"] != kIngredientsFormat)
        throw ConfigError("unsupported ingredients format in " + path);
    TerminalIngredients ing;
    ing.hash = j["model_hash"].get<std::string>();
    ing.alpha = j["alpha"].get<double>();
    ing.alpha0 = j["alpha0"].get<std::vector<double>>();
    if (!j["subsystems"].is_array() || j["subsystems"].empty())
        throw ConfigError("ingredients file " + path + ": no subsystems");
    for (size_t i = 0; i < j["subsystems"].size(); ++i) {
        const json& s = j["subsystems"][i];
        std::string where = "subsystem " + std::to_string(i + 1) + " of " + path;
        require_keys(s, {"P", "K", "Gamma", "psi"}, where);
        MatrixXd P = from_rows(s["P"], where + ": P");
        MatrixXd K = from_rows(s["K"], where + ": K");
        MatrixXd G = from_rows(s["Gamma"], where + ": Gamma");
        if (P.rows() != P.cols()) throw ConfigError(where + ": P must be square");
        if (G.rows() != G.cols()) throw ConfigError(where + ": Gamma must be square");
        if (K.cols() != G.rows())
            throw ConfigError(where + ": K and Gamma disagree on the neighborhood size");
        ing.P.push_back(std::move(P));
        ing.K.push_back(std::move(K));
        ing.Gamma.push_back(std::move(G));
        ing.psi.push_back(s["psi"].get<double>());
    }
    if (ing.alpha0.size() != ing.P.size())
        throw ConfigError("ingredients file " + path + ": alpha0 size mismatch");
    return ing;
}

}  // namespace dsmpc
