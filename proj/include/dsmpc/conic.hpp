#pragma once

// Conic modeling layer and first-order solver.
//
// Problems are built from scalar affine expressions over a flat variable
// vector, grouped into cone constraints. finalize() lowers everything to
// the standard form
//     min c'x  s.t.  Ax + s = b,  s in K
// where K is a product of zero, nonnegative, second-order, semidefinite
// (svec-packed) and exponential cones, in constraint insertion order.
// Quadratic costs are lifted through a single SOC epigraph; log-det terms
// through the lower-triangular factor construction. User variable and row
// indices are stable under the lowering, which is what makes cheap
// parametric re-solves (set_b / set_c) possible.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dsmpc/errors.hpp"
#include "dsmpc/svec.hpp"

namespace dsmpc::conic {

enum class ConeType { Zero, Nonneg, Soc, Psd, Exp };

struct ConeSpec {
    ConeType type;
    int dim;  // Psd: matrix side, otherwise row count
    int rows() const { return type == ConeType::Psd ? svec_dim(dim) : dim; }
};

enum class Status { Optimal, Infeasible, Unbounded, MaxIter, NumericalFailure };

std::string to_string(Status s);

struct SolveStats {
    int iterations = 0;
    double solve_time_s = 0.0;
    double primal_res = 0.0;
    double dual_res = 0.0;
    double gap = 0.0;
};

struct SolveResult {
    Status status = Status::NumericalFailure;
    Eigen::VectorXd x;  // primal variables (user layout first, lifted after)
    Eigen::VectorXd y;  // dual, one per standard-form row
    Eigen::VectorXd s;  // slack, one per standard-form row
    double objective = 0.0;
    SolveStats stats;
    bool ok() const { return status == Status::Optimal; }
};

struct SolveOptions {
    double tol = 1e-8;
    int max_iter = 100000;
    double relax = 1.5;    // over-relaxation in the splitting iteration
    int check_every = 25;  // residual check period
    bool warm_start = false;
    bool verbose = false;
};

struct VarRef {
    int offset = -1;
    int size = 0;
    int mat_dim = 0;  // >0 for symmetric matrix variables (svec packed)
    bool valid() const { return offset >= 0; }
};

// Affine scalar expression: sum of (variable index, coefficient) plus constant.
struct LinExpr {
    std::vector<std::pair<int, double>> terms;
    double constant = 0.0;

    LinExpr() = default;
    LinExpr(double k) : constant(k) {}  // NOLINT: implicit constants are the point

    LinExpr& operator+=(const LinExpr& o);
    LinExpr& operator-=(const LinExpr& o);
    LinExpr& operator*=(double k);
};

LinExpr operator+(LinExpr a, const LinExpr& b);
LinExpr operator-(LinExpr a, const LinExpr& b);
LinExpr operator*(double k, LinExpr e);
LinExpr operator-(LinExpr e);

// Dense matrix of affine expressions. Small and convenience-oriented: the
// LMIs in this codebase are at most a few dozen rows.
class ExprMatrix {
  public:
    ExprMatrix() = default;
    ExprMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    static ExprMatrix constant(const Eigen::MatrixXd& M);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    LinExpr& operator()(int i, int j) { return data_[i * cols_ + j]; }
    const LinExpr& operator()(int i, int j) const { return data_[i * cols_ + j]; }

    ExprMatrix transpose() const;
    ExprMatrix block(int i, int j, int r, int c) const;
    void set_block(int i, int j, const ExprMatrix& B);

  private:
    int rows_ = 0, cols_ = 0;
    std::vector<LinExpr> data_;
};

ExprMatrix operator+(const ExprMatrix& a, const ExprMatrix& b);
ExprMatrix operator-(const ExprMatrix& a, const ExprMatrix& b);
ExprMatrix operator*(double k, const ExprMatrix& a);
ExprMatrix operator*(const Eigen::MatrixXd& A, const ExprMatrix& X);
ExprMatrix operator*(const ExprMatrix& X, const Eigen::MatrixXd& B);

// Stack blocks into one matrix; row heights and column widths must tile.
ExprMatrix bmat(const std::vector<std::vector<ExprMatrix>>& blocks);

class Solver;

class Problem {
  public:
    VarRef add_scalar(const std::string& name = "");
    VarRef add_vector(const std::string& name, int n);
    VarRef add_symmetric(const std::string& name, int n);

    LinExpr entry(VarRef v, int i) const;
    LinExpr mat_entry(VarRef v, int i, int j) const;
    ExprMatrix expr(VarRef v) const;

    // Each returns the first standard-form row index of the added block.
    int add_eq(const LinExpr& e);        // e == 0
    int add_eq(const ExprMatrix& m);     // elementwise == 0
    int add_nonneg(const LinExpr& e);    // e >= 0
    int add_soc(const std::vector<LinExpr>& v);  // v[0] >= ||v[1:]||
    int add_psd(const ExprMatrix& m);    // symmetric part of m is PSD
    int add_exp(const LinExpr& x, const LinExpr& y, const LinExpr& z);  // y*exp(x/y) <= z

    void add_cost(const LinExpr& e);                  // minimized
    void add_quad_cost(const LinExpr& e, double weight);  // + weight * e^2
    void add_logdet_cost(VarRef sym, double weight);      // - weight * logdet(sym)
    void set_logdet_trace_fallback(bool on) { logdet_trace_fallback_ = on; finalized_ = false; }

    int num_vars() const { return nvars_; }
    int num_user_rows() const {
        int m = 0;
        for (auto& cs : cones_) m += cs.rows();
        return m;
    }
    // Standard-form row carrying the k-th quadratic term (insertion order),
    // for parametric edits of targets buried in quadratic penalties.
    int quad_term_row(int k) const;

    std::string dump() const;

    double value(VarRef v, const SolveResult& r, int i = 0) const;
    Eigen::VectorXd vector_value(VarRef v, const SolveResult& r) const;
    Eigen::MatrixXd matrix_value(VarRef v, const SolveResult& r) const;

  private:
    friend class Solver;
    struct QuadTerm {
        LinExpr e;
        double w;
    };
    struct LogDetTerm {
        VarRef v;
        double w;
    };

    void finalize() const;

    int nvars_ = 0;
    std::vector<VarRef> vars_;
    std::vector<std::string> names_;
    std::vector<LinExpr> rows_;
    std::vector<ConeSpec> cones_;
    LinExpr lin_cost_;
    std::vector<QuadTerm> quad_;
    std::vector<LogDetTerm> logdet_;
    bool logdet_trace_fallback_ = false;

    mutable bool finalized_ = false;
    mutable Eigen::SparseMatrix<double> A_;
    mutable Eigen::VectorXd b_, c_;
    mutable std::vector<ConeSpec> cones_final_;
    mutable double obj_constant_ = 0.0;
    mutable int primary_vars_ = 0;
    mutable int n_final_ = 0;
};

// Standalone PSD test on a numeric matrix: symmetrize, eigendecompose,
// compare the smallest eigenvalue against -tol. Deliberately independent
// of the solver so results can be cross-checked.
bool check_psd(const Eigen::MatrixXd& M, double tol = 1e-7);

// Homogeneous self-dual embedding solver with a single sparse
// factorization per instance. Construction finalizes, equilibrates and
// factors; solve() may be called repeatedly with parameter edits between
// calls. set_b/set_c take values in original problem units and
// standard-form indices (rows as returned by add_*; columns are
// VarRef::offset + i).
class Solver {
  public:
    explicit Solver(const Problem& p);
    ~Solver();
    Solver(Solver&&) noexcept;
    Solver& operator=(Solver&&) noexcept;
    Solver(const Solver&) = delete;
    Solver& operator=(const Solver&) = delete;

    SolveResult solve(const SolveOptions& opts = {});

    void set_b(int row, double value);
    void set_c(int col, double value);
    double get_b(int row) const;
    double get_c(int col) const;

    int rows() const;
    int cols() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace dsmpc::conic
