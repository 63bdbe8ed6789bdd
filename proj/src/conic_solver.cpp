#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include "dsmpc/conic.hpp"

namespace dsmpc::conic {

namespace {

double safe_exp(double x) { return std::exp(std::min(x, 500.0)); }

// Projection onto the exponential cone cl{(x,y,z) : y > 0, y*exp(x/y) <= z}.
// Case split: inside; inside the polar; on the x<=0,y<=0 face; otherwise the
// projection sits on the curved boundary and is found by a 1-d root search
// over r = x/y of the stationarity residual.
Eigen::Vector3d exp_cone_project(const Eigen::Vector3d& p) {
    const double px = p[0], py = p[1], pz = p[2];
    const double big = std::max({1.0, std::abs(px), std::abs(py), std::abs(pz)});
    const double tol = 1e-13 * big;

    bool in_cone = (py > 0 && py * safe_exp(px / py) <= pz + tol) ||
                   (std::abs(py) <= tol && px <= tol && pz >= -tol);
    if (in_cone) {
        Eigen::Vector3d r = p;
        if (std::abs(py) <= tol) {
            r[1] = std::max(py, 0.0);
            r[0] = std::min(px, 0.0);
            r[2] = std::max(pz, 0.0);
        }
        return r;
    }
    // polar cone: -K* = {(a,b,c) : a > 0, a*exp(b/a) <= -e*c} u rays
    const double qx = -px, qy = -py, qz = -pz;
    bool in_dual = (qx < 0 && -qx * safe_exp(qy / qx) <= M_E * qz + tol) ||
                   (std::abs(qx) <= tol && qy >= -tol && qz >= -tol);
    if (in_dual) return Eigen::Vector3d::Zero();

    if (px <= 0 && py <= 0) return {px, 0.0, std::max(pz, 0.0)};  // flat face

    // stationarity on the boundary, parametrized by r = x/y; only the
    // branch with uy > 0 is geometrically valid, and F has spurious sign
    // changes outside it, so brackets must keep uy positive at both ends
    auto eval = [&](double r, double& uy, double& mu) {
        double q = 1.0 - r + r * r;
        mu = (px - r * py) * safe_exp(-r) / q;
        uy = py - (px - r * py) * (1.0 - r) / q;
        return uy * safe_exp(r) - pz - mu;
    };
    const Eigen::Vector3d ray(std::min(px, 0.0), 0.0, std::max(pz, 0.0));
    double lo = 0, hi = 0, flo = 0;
    bool bracketed = false;
    double span = 1.0;
    for (int round = 0; round < 12 && !bracketed; ++round, span *= 2) {
        const int grid = 128;
        double prev_r = -span, prev_uy, mu;
        double prev_f = eval(prev_r, prev_uy, mu);
        for (int g = 1; g <= grid; ++g) {
            double r = -span + 2 * span * g / grid;
            double uy;
            double f = eval(r, uy, mu);
            if (std::isfinite(prev_f) && std::isfinite(f) && prev_uy > 0 && uy > 0 &&
                prev_f * f <= 0) {
                lo = prev_r, hi = r, flo = prev_f;
                bracketed = true;
                break;
            }
            prev_r = r, prev_f = f, prev_uy = uy;
        }
    }
    if (!bracketed) return ray;

    double uy = 0, mu = 0;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(lo)); ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = eval(mid, uy, mu);
        if ((fm <= 0) == (flo <= 0)) lo = mid, flo = fm;
        else hi = mid;
    }
    double r = 0.5 * (lo + hi);
    eval(r, uy, mu);
    if (!(uy > 0) || !std::isfinite(uy)) return ray;
    Eigen::Vector3d cand(r * uy, uy, pz + mu);
    return (cand - p).squaredNorm() <= (ray - p).squaredNorm() ? cand : ray;
}

void soc_project(Eigen::Ref<Eigen::VectorXd> s) {
    const int d = static_cast<int>(s.size());
    double t = s[0];
    double nz = s.tail(d - 1).norm();
    if (nz <= t) return;
    if (nz <= -t) {
        s.setZero();
        return;
    }
    double c = 0.5 * (t + nz);
    s[0] = c;
    s.tail(d - 1) *= c / nz;
}

void psd_project(Eigen::Ref<Eigen::VectorXd> seg, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es) {
    Eigen::MatrixXd M = smat(seg);
    {
        Eigen::LLT<Eigen::MatrixXd> llt(M);
        if (llt.info() == Eigen::Success) return;  // already positive definite
    }
    es.compute(M);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    if ((lam.array() == es.eigenvalues().array()).all()) return;
    M.noalias() = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    seg = svec((M + M.transpose()) / 2);
}

}  // namespace

struct Solver::Impl {
    int n = 0, m = 0;
    Eigen::SparseMatrix<double> A_raw;  // original units
    Eigen::SparseMatrix<double> A;      // equilibrated
    Eigen::VectorXd b_raw, c_raw;
    Eigen::VectorXd D, E;  // row/col equilibration
    std::vector<ConeSpec> cones;
    std::vector<int> cone_start;
    double obj_constant = 0.0;

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> kkt;

    bool have_warm = false;
    Eigen::VectorXd warm_x, warm_y, warm_s;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;

    // M = [[I, A'],[-A, I]]; Msolve maps (r1,r2) to M^{-1}(r1,r2) through the
    // symmetric factorization of [[I, A'],[A, -I]] with rhs (r1, -r2).
    void msolve(const Eigen::VectorXd& r1, const Eigen::VectorXd& r2,
                Eigen::VectorXd& out_x, Eigen::VectorXd& out_y) const {
        Eigen::VectorXd rhs(n + m);
        rhs.head(n) = r1;
        rhs.tail(m) = -r2;
        Eigen::VectorXd sol = kkt.solve(rhs);
        out_x = sol.head(n);
        out_y = sol.tail(m);
    }

    void project_dual_blocks(Eigen::Ref<Eigen::VectorXd> y) {
        for (size_t k = 0; k < cones.size(); ++k) {
            const auto& cs = cones[k];
            int start = cone_start[k], len = cs.rows();
            switch (cs.type) {
                case ConeType::Zero:
                    break;  // dual of {0} is free
                case ConeType::Nonneg:
                    y.segment(start, len) = y.segment(start, len).cwiseMax(0.0);
                    break;
                case ConeType::Soc:
                    soc_project(y.segment(start, len));
                    break;
                case ConeType::Psd:
                    psd_project(y.segment(start, len), es);
                    break;
                case ConeType::Exp: {
                    // dual cone via Moreau: P_K*(w) = w + P_K(-w)
                    Eigen::Vector3d w = y.segment<3>(start);
                    y.segment<3>(start) = w + exp_cone_project(-w);
                    break;
                }
            }
        }
    }
};

Solver::Solver(const Problem& p) : impl_(std::make_unique<Impl>()) {
    p.finalize();
    Impl& im = *impl_;
    im.A_raw = p.A_;
    im.b_raw = p.b_;
    im.c_raw = p.c_;
    im.cones = p.cones_final_;
    im.obj_constant = p.obj_constant_;
    im.n = p.n_final_;
    im.m = static_cast<int>(p.b_.size());

    im.cone_start.resize(im.cones.size());
    int at = 0;
    for (size_t k = 0; k < im.cones.size(); ++k) {
        im.cone_start[k] = at;
        at += im.cones[k].rows();
    }

    // Ruiz equilibration; rows of one soc/psd/exp block share one scale so
    // the cone geometry is preserved.
    im.D = Eigen::VectorXd::Ones(im.m);
    im.E = Eigen::VectorXd::Ones(im.n);
    im.A = im.A_raw;
    Eigen::VectorXd rnorm(im.m), cnorm(im.n);
    for (int pass = 0; pass < 10; ++pass) {
        rnorm.setZero();
        cnorm.setZero();
        for (int k = 0; k < im.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(im.A, k); it; ++it) {
                double a = std::abs(it.value());
                rnorm[it.row()] = std::max(rnorm[it.row()], a);
                cnorm[it.col()] = std::max(cnorm[it.col()], a);
            }
        for (size_t k = 0; k < im.cones.size(); ++k) {
            const auto& cs = im.cones[k];
            if (cs.type == ConeType::Zero || cs.type == ConeType::Nonneg) continue;
            int start = im.cone_start[k], len = cs.rows();
            double mx = rnorm.segment(start, len).maxCoeff();
            rnorm.segment(start, len).setConstant(mx);
        }
        for (int i = 0; i < im.m; ++i) rnorm[i] = rnorm[i] > 1e-12 ? 1.0 / std::sqrt(rnorm[i]) : 1.0;
        for (int j = 0; j < im.n; ++j) cnorm[j] = cnorm[j] > 1e-12 ? 1.0 / std::sqrt(cnorm[j]) : 1.0;
        for (int k = 0; k < im.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(im.A, k); it; ++it)
                it.valueRef() *= rnorm[it.row()] * cnorm[it.col()];
        im.D.array() *= rnorm.array();
        im.E.array() *= cnorm.array();
    }

    // one factorization for the lifetime of the instance
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(im.A.nonZeros() * 2 + im.n + im.m);
    for (int i = 0; i < im.n; ++i) trips.emplace_back(i, i, 1.0);
    for (int i = 0; i < im.m; ++i) trips.emplace_back(im.n + i, im.n + i, -1.0);
    for (int k = 0; k < im.A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(im.A, k); it; ++it) {
            trips.emplace_back(im.n + static_cast<int>(it.row()), static_cast<int>(it.col()),
                               it.value());
            trips.emplace_back(static_cast<int>(it.col()), im.n + static_cast<int>(it.row()),
                               it.value());
        }
    Eigen::SparseMatrix<double> K(im.n + im.m, im.n + im.m);
    K.setFromTriplets(trips.begin(), trips.end());
    im.kkt.compute(K);
    if (im.kkt.info() != Eigen::Success)
        throw Error("conic solver: factorization failed");
}

Solver::~Solver() = default;
Solver::Solver(Solver&&) noexcept = default;
Solver& Solver::operator=(Solver&&) noexcept = default;

int Solver::rows() const { return impl_->m; }
int Solver::cols() const { return impl_->n; }

void Solver::set_b(int row, double value) {
    if (row < 0 || row >= impl_->m) throw Error("set_b: row out of range");
    impl_->b_raw[row] = value;
}

void Solver::set_c(int col, double value) {
    if (col < 0 || col >= impl_->n) throw Error("set_c: col out of range");
    impl_->c_raw[col] = value;
}

double Solver::get_b(int row) const {
    if (row < 0 || row >= impl_->m) throw Error("get_b: row out of range");
    return impl_->b_raw[row];
}

double Solver::get_c(int col) const {
    if (col < 0 || col >= impl_->n) throw Error("get_c: col out of range");
    return impl_->c_raw[col];
}

SolveResult Solver::solve(const SolveOptions& opts) {
    auto t0 = std::chrono::steady_clock::now();
    Impl& im = *impl_;
    const int n = im.n, m = im.m;
    SolveResult res;

    // scaled data; scalar normalization of b and c keeps tau well conditioned
    Eigen::VectorXd bs = im.D.cwiseProduct(im.b_raw);
    Eigen::VectorXd cs = im.E.cwiseProduct(im.c_raw);
    double beta_b = 1.0 / std::clamp(bs.norm(), 1e-4, 1e4);
    double beta_c = 1.0 / std::clamp(cs.norm(), 1e-4, 1e4);
    bs *= beta_b;
    cs *= beta_c;

    // q = M^{-1} (c, b), reused by every iteration
    Eigen::VectorXd qx, qy;
    im.msolve(cs, bs, qx, qy);
    double hq = cs.dot(qx) + bs.dot(qy);

    Eigen::VectorXd ux(n), uy(m), vs(m);
    double utau, vkappa;
    if (opts.warm_start && im.have_warm) {
        ux = beta_b * im.warm_x.cwiseQuotient(im.E);
        uy = beta_c * im.warm_y.cwiseQuotient(im.D);
        vs = beta_b * im.D.cwiseProduct(im.warm_s);
        utau = 1.0;
        vkappa = 0.0;
    } else {
        ux.setZero();
        uy.setZero();
        vs.setZero();
        utau = 1.0;
        vkappa = 1.0;
    }

    const double bnorm = im.b_raw.norm(), cnorm = im.c_raw.norm();
    Eigen::VectorXd zx(n), zy(m), px(n), py(m), wx(n), wy(m);
    Eigen::VectorXd x_cand, y_cand, s_cand;

    int iter = 0;
    Status status = Status::MaxIter;
    double best_pres = std::numeric_limits<double>::infinity();
    double best_dres = best_pres, best_gap = best_pres;

    for (iter = 0; iter <= opts.max_iter; ++iter) {
        bool check = (iter % opts.check_every == 0) || iter == opts.max_iter;
        if (check) {
            if (!ux.allFinite() || !uy.allFinite() || !std::isfinite(utau)) {
                status = Status::NumericalFailure;
                break;
            }
            double kappa = vkappa;
            if (utau > 1e-9 * std::max(1.0, kappa)) {
                x_cand = im.E.cwiseProduct(ux) / (utau * beta_b);
                y_cand = im.D.cwiseProduct(uy) / (utau * beta_c);
                s_cand = vs.cwiseQuotient(im.D) / (utau * beta_b);
                double pres = (im.A_raw * x_cand + s_cand - im.b_raw).norm() / (1.0 + bnorm);
                double dres = (im.A_raw.transpose() * y_cand + im.c_raw).norm() / (1.0 + cnorm);
                double cx = im.c_raw.dot(x_cand), by = im.b_raw.dot(y_cand);
                double gap = std::abs(cx + by) / (1.0 + std::abs(cx) + std::abs(by));
                best_pres = pres, best_dres = dres, best_gap = gap;
                if (opts.verbose)
                    std::fprintf(stderr, "it %6d pres %9.2e dres %9.2e gap %9.2e tau %8.2e\n",
                                 iter, pres, dres, gap, utau);
                if (pres <= opts.tol && dres <= opts.tol && gap <= opts.tol) {
                    status = Status::Optimal;
                    break;
                }
            }
            // certificates, in original units up to positive scaling
            Eigen::VectorXd yr = im.D.cwiseProduct(uy);
            double bty = im.b_raw.dot(yr);
            if (bty < -1e-12) {
                double r = (im.A_raw.transpose() * yr).norm() * bnorm / (-bty);
                if (opts.verbose)
                    std::fprintf(stderr, "   cert bty %9.2e r %9.2e\n", bty, r);
                if (r <= opts.tol * 10) {
                    status = Status::Infeasible;
                    y_cand = yr / (-bty);
                    break;
                }
            }
            Eigen::VectorXd xr = im.E.cwiseProduct(ux);
            Eigen::VectorXd sr = vs.cwiseQuotient(im.D);
            double ctx = im.c_raw.dot(xr);
            if (ctx < -1e-12) {
                double r = (im.A_raw * xr + sr).norm() * cnorm / (-ctx);
                if (r <= opts.tol * 10) {
                    status = Status::Unbounded;
                    x_cand = xr / (-ctx);
                    s_cand = sr / (-ctx);
                    break;
                }
            }
            if (iter == opts.max_iter) break;
        }

        // affine step: solve (I+Q) w = u + v
        zx = ux;  // v_x is identically zero
        zy = uy + vs;
        double ztau = utau + vkappa;
        im.msolve(zx, zy, px, py);
        double wtau = (ztau + cs.dot(px) + bs.dot(py)) / (1.0 + hq);
        wx = px - wtau * qx;
        wy = py - wtau * qy;

        // over-relaxation, then cone step
        double a = opts.relax;
        wx = a * wx + (1 - a) * ux;
        wy = a * wy + (1 - a) * uy;
        wtau = a * wtau + (1 - a) * utau;

        // u+ = proj(w - v); v+ = v - w + u+
        Eigen::VectorXd ty = wy - vs;
        double ttau = wtau - vkappa;
        im.project_dual_blocks(ty);
        if (ttau < 0) ttau = 0;
        vs += ty - wy;
        vkappa += ttau - wtau;
        ux = wx;  // free block: projection is identity and v_x stays zero
        uy = ty;
        utau = ttau;
    }

    res.status = status;
    res.stats.iterations = iter;
    res.stats.primal_res = best_pres;
    res.stats.dual_res = best_dres;
    res.stats.gap = best_gap;
    if (status == Status::Optimal) {
        res.x = x_cand;
        res.y = y_cand;
        res.s = s_cand;
        res.objective = im.c_raw.dot(x_cand) + im.obj_constant;
        im.warm_x = x_cand;
        im.warm_y = y_cand;
        im.warm_s = s_cand;
        im.have_warm = true;
    } else if (status == Status::Infeasible) {
        res.y = y_cand;
        res.x = Eigen::VectorXd::Zero(n);
        res.s = Eigen::VectorXd::Zero(m);
    } else if (status == Status::Unbounded) {
        res.x = x_cand;
        res.s = s_cand;
        res.y = Eigen::VectorXd::Zero(m);
    } else {
        res.x = Eigen::VectorXd::Zero(n);
        res.y = Eigen::VectorXd::Zero(m);
        res.s = Eigen::VectorXd::Zero(m);
    }
    res.stats.solve_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace dsmpc::conic
