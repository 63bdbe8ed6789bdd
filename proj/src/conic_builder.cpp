#include "dsmpc/conic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace dsmpc::conic {

std::string to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "Optimal";
        case Status::Infeasible: return "Infeasible";
        case Status::Unbounded: return "Unbounded";
        case Status::MaxIter: return "MaxIter";
        case Status::NumericalFailure: return "NumericalFailure";
    }
    return "Unknown";
}

// ---- LinExpr ----

static void merge_terms(std::vector<std::pair<int, double>>& t) {
    if (t.size() < 2) return;
    std::sort(t.begin(), t.end(), [](auto& a, auto& b) { return a.first < b.first; });
    size_t w = 0;
    for (size_t r = 0; r < t.size(); ++r) {
        if (w > 0 && t[w - 1].first == t[r].first) {
            t[w - 1].second += t[r].second;
        } else {
            t[w++] = t[r];
        }
    }
    t.resize(w);
}

LinExpr& LinExpr::operator+=(const LinExpr& o) {
    constant += o.constant;
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    if (terms.size() > 16) merge_terms(terms);
    return *this;
}

LinExpr& LinExpr::operator-=(const LinExpr& o) {
    constant -= o.constant;
    terms.reserve(terms.size() + o.terms.size());
    for (auto& [j, v] : o.terms) terms.emplace_back(j, -v);
    if (terms.size() > 16) merge_terms(terms);
    return *this;
}

LinExpr& LinExpr::operator*=(double k) {
    constant *= k;
    for (auto& [j, v] : terms) v *= k;
    return *this;
}

LinExpr operator+(LinExpr a, const LinExpr& b) { a += b; return a; }
LinExpr operator-(LinExpr a, const LinExpr& b) { a -= b; return a; }
LinExpr operator*(double k, LinExpr e) { e *= k; return e; }
LinExpr operator-(LinExpr e) { e *= -1.0; return e; }

// ---- ExprMatrix ----

ExprMatrix ExprMatrix::constant(const Eigen::MatrixXd& M) {
    ExprMatrix r(static_cast<int>(M.rows()), static_cast<int>(M.cols()));
    for (int i = 0; i < r.rows_; ++i)
        for (int j = 0; j < r.cols_; ++j) r(i, j) = LinExpr(M(i, j));
    return r;
}

ExprMatrix ExprMatrix::transpose() const {
    ExprMatrix r(cols_, rows_);
    for (int i = 0; i < rows_; ++i)
        for (int j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
    return r;
}

ExprMatrix ExprMatrix::block(int i, int j, int r, int c) const {
    ExprMatrix out(r, c);
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < c; ++b) out(a, b) = (*this)(i + a, j + b);
    return out;
}

void ExprMatrix::set_block(int i, int j, const ExprMatrix& B) {
    for (int a = 0; a < B.rows(); ++a)
        for (int b = 0; b < B.cols(); ++b) (*this)(i + a, j + b) = B(a, b);
}

ExprMatrix operator+(const ExprMatrix& a, const ExprMatrix& b) {
    ExprMatrix r = a;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) += b(i, j);
    return r;
}

ExprMatrix operator-(const ExprMatrix& a, const ExprMatrix& b) {
    ExprMatrix r = a;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) -= b(i, j);
    return r;
}

ExprMatrix operator*(double k, const ExprMatrix& a) {
    ExprMatrix r = a;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) *= k;
    return r;
}

ExprMatrix operator*(const Eigen::MatrixXd& A, const ExprMatrix& X) {
    ExprMatrix r(static_cast<int>(A.rows()), X.cols());
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) {
            LinExpr e;
            for (int k = 0; k < X.rows(); ++k) {
                if (A(i, k) == 0.0) continue;
                e += A(i, k) * X(k, j);
            }
            r(i, j) = std::move(e);
        }
    return r;
}

ExprMatrix operator*(const ExprMatrix& X, const Eigen::MatrixXd& B) {
    ExprMatrix r(X.rows(), static_cast<int>(B.cols()));
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) {
            LinExpr e;
            for (int k = 0; k < X.cols(); ++k) {
                if (B(k, j) == 0.0) continue;
                e += B(k, j) * X(i, k);
            }
            r(i, j) = std::move(e);
        }
    return r;
}

ExprMatrix bmat(const std::vector<std::vector<ExprMatrix>>& blocks) {
    int rows = 0, cols = 0;
    for (auto& br : blocks) rows += br.at(0).rows();
    for (auto& bc : blocks.at(0)) cols += bc.cols();
    ExprMatrix out(rows, cols);
    int i = 0;
    for (auto& br : blocks) {
        int j = 0;
        for (auto& blk : br) {
            out.set_block(i, j, blk);
            j += blk.cols();
        }
        i += br.at(0).rows();
    }
    return out;
}

// ---- Problem ----

VarRef Problem::add_scalar(const std::string& name) { return add_vector(name, 1); }

VarRef Problem::add_vector(const std::string& name, int n) {
    if (n <= 0) throw Error("add_vector: size must be positive");
    VarRef v{nvars_, n, 0};
    nvars_ += n;
    names_.push_back(name);
    vars_.push_back(v);
    finalized_ = false;
    return v;
}

VarRef Problem::add_symmetric(const std::string& name, int n) {
    if (n <= 0) throw Error("add_symmetric: size must be positive");
    VarRef v{nvars_, svec_dim(n), n};
    nvars_ += v.size;
    names_.push_back(name);
    vars_.push_back(v);
    finalized_ = false;
    return v;
}

LinExpr Problem::entry(VarRef v, int i) const {
    if (i < 0 || i >= v.size) throw Error("entry: index out of range");
    LinExpr e;
    e.terms.emplace_back(v.offset + i, 1.0);
    return e;
}

LinExpr Problem::mat_entry(VarRef v, int i, int j) const {
    if (v.mat_dim == 0) throw Error("mat_entry: not a symmetric variable");
    if (i > j) std::swap(i, j);
    if (j >= v.mat_dim) throw Error("mat_entry: index out of range");
    int k = j * (j + 1) / 2 + i;  // packed upper-triangular, column by column
    LinExpr e;
    e.terms.emplace_back(v.offset + k, (i == j) ? 1.0 : 1.0 / std::sqrt(2.0));
    return e;
}

ExprMatrix Problem::expr(VarRef v) const {
    if (v.mat_dim > 0) {
        ExprMatrix m(v.mat_dim, v.mat_dim);
        for (int i = 0; i < v.mat_dim; ++i)
            for (int j = 0; j < v.mat_dim; ++j) m(i, j) = mat_entry(v, i, j);
        return m;
    }
    ExprMatrix m(v.size, 1);
    for (int i = 0; i < v.size; ++i) m(i, 0) = entry(v, i);
    return m;
}

int Problem::add_eq(const LinExpr& e) {
    int row = static_cast<int>(rows_.size());
    rows_.push_back(e);
    cones_.push_back({ConeType::Zero, 1});
    finalized_ = false;
    return row;
}

int Problem::add_eq(const ExprMatrix& m) {
    int row = static_cast<int>(rows_.size());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) rows_.push_back(m(i, j));
    cones_.push_back({ConeType::Zero, m.rows() * m.cols()});
    finalized_ = false;
    return row;
}

int Problem::add_nonneg(const LinExpr& e) {
    int row = static_cast<int>(rows_.size());
    rows_.push_back(e);
    cones_.push_back({ConeType::Nonneg, 1});
    finalized_ = false;
    return row;
}

int Problem::add_soc(const std::vector<LinExpr>& v) {
    if (v.size() < 2) throw Error("add_soc: need at least 2 rows");
    int row = static_cast<int>(rows_.size());
    for (auto& e : v) rows_.push_back(e);
    cones_.push_back({ConeType::Soc, static_cast<int>(v.size())});
    finalized_ = false;
    return row;
}

int Problem::add_psd(const ExprMatrix& m) {
    if (m.rows() != m.cols()) throw Error("add_psd: matrix must be square");
    const int n = m.rows();
    int row = static_cast<int>(rows_.size());
    const double r2 = std::sqrt(2.0);
    // svec of the symmetrized expression
    for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i) {
            if (i == j) {
                rows_.push_back(m(i, i));
            } else {
                LinExpr e = m(i, j) + m(j, i);
                e *= r2 / 2.0;
                rows_.push_back(std::move(e));
            }
        }
    cones_.push_back({ConeType::Psd, n});
    finalized_ = false;
    return row;
}

int Problem::add_exp(const LinExpr& x, const LinExpr& y, const LinExpr& z) {
    int row = static_cast<int>(rows_.size());
    rows_.push_back(x);
    rows_.push_back(y);
    rows_.push_back(z);
    cones_.push_back({ConeType::Exp, 3});
    finalized_ = false;
    return row;
}

void Problem::add_cost(const LinExpr& e) {
    lin_cost_ += e;
    finalized_ = false;
}

void Problem::add_quad_cost(const LinExpr& e, double weight) {
    if (weight < 0) throw Error("add_quad_cost: weight must be nonnegative");
    if (weight == 0) return;
    quad_.push_back({e, weight});
    finalized_ = false;
}

int Problem::quad_term_row(int k) const {
    if (k < 0 || k >= static_cast<int>(quad_.size()))
        throw Error("quad_term_row: index out of range");
    // layout: user rows, then (t+1, 1-t, terms...) in one SOC block
    return num_user_rows() + 2 + k;
}

void Problem::add_logdet_cost(VarRef sym, double weight) {
    if (sym.mat_dim == 0) throw Error("add_logdet_cost: needs a symmetric variable");
    if (weight <= 0) throw Error("add_logdet_cost: weight must be positive");
    logdet_.push_back({sym, weight});
    finalized_ = false;
}

// Standard-form layout: [user rows][one epigraph soc for all quad terms]
// [per logdet term: psd block, exp cones]. Lifted variables go after user
// variables so user indices stay stable for parametric edits.
void Problem::finalize() const {
    if (finalized_) return;
    primary_vars_ = nvars_;
    int n = nvars_;
    std::vector<LinExpr> rows = rows_;
    std::vector<ConeSpec> cones = cones_;
    LinExpr cost = lin_cost_;
    obj_constant_ = lin_cost_.constant;
    cost.constant = 0.0;

    if (!quad_.empty()) {
        int t = n++;  // epigraph: sum_i w_i e_i^2 <= t
        cost.terms.emplace_back(t, 1.0);
        // (1 + t, 1 - t, 2 sqrt(w_i) e_i) in SOC  <=>  sum w_i e_i^2 <= t
        LinExpr tp(1.0), tm(1.0);
        tp.terms.emplace_back(t, 1.0);
        tm.terms.emplace_back(t, -1.0);
        rows.push_back(tp);
        rows.push_back(tm);
        for (auto& q : quad_) {
            LinExpr e = q.e;
            e *= 2.0 * std::sqrt(q.w);
            rows.push_back(std::move(e));
        }
        cones.push_back({ConeType::Soc, 2 + static_cast<int>(quad_.size())});
    }

    for (auto& ld : logdet_) {
        const int d = ld.v.mat_dim;
        if (logdet_trace_fallback_) {
            // weaker surrogate: maximize trace instead of log-determinant
            for (int i = 0; i < d; ++i) {
                LinExpr e = mat_entry(ld.v, i, i);
                e *= -ld.w;
                for (auto& [j, coef] : e.terms) cost.terms.emplace_back(j, coef);
            }
            continue;
        }
        // t <= logdet(X) via lower-triangular Z:
        //   [[X, Z], [Z', diag(Z)]] psd,  u_i <= log(Z_ii),  t = sum u_i
        int zoff = n;  // packed lower triangle of Z, column by column
        n += d * (d + 1) / 2;
        int uoff = n;
        n += d;
        auto zidx = [&](int i, int j) {  // i >= j
            return zoff + j * d - j * (j - 1) / 2 + (i - j);
        };
        ExprMatrix big(2 * d, 2 * d);
        for (int i = 0; i < 2 * d; ++i)
            for (int j = 0; j < 2 * d; ++j) big(i, j) = LinExpr(0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) big(i, j) = mat_entry(ld.v, i, j);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j <= i; ++j) {
                LinExpr z;
                z.terms.emplace_back(zidx(i, j), 1.0);
                big(i, d + j) = z;
                big(d + j, i) = z;
            }
        for (int i = 0; i < d; ++i) {
            LinExpr z;
            z.terms.emplace_back(zidx(i, i), 1.0);
            big(d + i, d + i) = z;
        }
        // inline add_psd on the assembled block
        const double r2 = std::sqrt(2.0);
        for (int j = 0; j < 2 * d; ++j)
            for (int i = 0; i <= j; ++i) {
                if (i == j) {
                    rows.push_back(big(i, i));
                } else {
                    LinExpr e = big(i, j) + big(j, i);
                    e *= r2 / 2.0;
                    rows.push_back(std::move(e));
                }
            }
        cones.push_back({ConeType::Psd, 2 * d});
        for (int i = 0; i < d; ++i) {
            LinExpr u, one(1.0), zii;
            u.terms.emplace_back(uoff + i, 1.0);
            zii.terms.emplace_back(zidx(i, i), 1.0);
            rows.push_back(u);
            rows.push_back(one);
            rows.push_back(zii);
            cones.push_back({ConeType::Exp, 3});
            cost.terms.emplace_back(uoff + i, -ld.w);
        }
    }

    // assemble triplets: cone rows hold s = e(x), standard form s = b - Ax
    int m = 0;
    for (auto& cs : cones) m += cs.rows();
    if (m != static_cast<int>(rows.size())) throw Error("finalize: cone/row mismatch");

    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd b(m);
    for (int r = 0; r < m; ++r) {
        b[r] = rows[r].constant;
        for (auto& [j, v] : rows[r].terms)
            if (v != 0.0) trips.emplace_back(r, j, -v);
    }
    Eigen::SparseMatrix<double> A(m, n);
    A.setFromTriplets(trips.begin(), trips.end());

    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (auto& [j, v] : cost.terms) c[j] += v;

    A_ = std::move(A);
    b_ = std::move(b);
    c_ = std::move(c);
    cones_final_ = std::move(cones);
    n_final_ = n;
    finalized_ = true;
}

std::string Problem::dump() const {
    finalize();
    std::ostringstream os;
    os << "vars " << n_final_ << " rows " << b_.size() << "\n";
    for (auto& cs : cones_final_) {
        switch (cs.type) {
            case ConeType::Zero: os << "zero " << cs.dim << "\n"; break;
            case ConeType::Nonneg: os << "nonneg " << cs.dim << "\n"; break;
            case ConeType::Soc: os << "soc " << cs.dim << "\n"; break;
            case ConeType::Psd: os << "psd " << cs.dim << "\n"; break;
            case ConeType::Exp: os << "exp 3\n"; break;
        }
    }
    os << "c";
    for (int j = 0; j < n_final_; ++j)
        if (c_[j] != 0.0) os << " " << j << ":" << c_[j];
    os << "\nb";
    for (int i = 0; i < b_.size(); ++i)
        if (b_[i] != 0.0) os << " " << i << ":" << b_[i];
    os << "\nA";
    for (int k = 0; k < A_.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it)
            os << " " << it.row() << "," << it.col() << ":" << it.value();
    os << "\n";
    return os.str();
}

double Problem::value(VarRef v, const SolveResult& r, int i) const {
    return r.x[v.offset + i];
}

Eigen::VectorXd Problem::vector_value(VarRef v, const SolveResult& r) const {
    return r.x.segment(v.offset, v.size);
}

Eigen::MatrixXd Problem::matrix_value(VarRef v, const SolveResult& r) const {
    if (v.mat_dim == 0) throw Error("matrix_value: not a symmetric variable");
    return smat(r.x.segment(v.offset, v.size));
}

bool check_psd(const Eigen::MatrixXd& M, double tol) {
    if (M.rows() != M.cols()) throw NonSymmetric("check_psd: not square");
    double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
    double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if (asym > tol * scale * 10 + tol) throw NonSymmetric("check_psd: asymmetry " + std::to_string(asym));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(((M + M.transpose()) / 2).eval(),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol;
}

}  // namespace dsmpc::conic
