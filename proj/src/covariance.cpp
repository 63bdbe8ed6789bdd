#include "dsmpc/covariance.hpp"

namespace dsmpc {

using conic::bmat;

Eigen::MatrixXd propagate_direct(const LocalMaps& m, const Eigen::MatrixXd& K,
                                 const Eigen::VectorXd& z_nbhd, const Eigen::VectorXd& v,
                                 const Eigen::MatrixXd& Sigma_nbhd) {
    Eigen::MatrixXd AK = m.A + m.B * K;
    Eigen::MatrixXd CK = m.C + m.D * K;
    Eigen::VectorXd g = m.C * z_nbhd + m.D * v;
    Eigen::MatrixXd S =
        AK * Sigma_nbhd * AK.transpose() + CK * Sigma_nbhd * CK.transpose() + g * g.transpose();
    return 0.5 * (S + S.transpose());
}

namespace {

std::vector<int> kept_coords(const Eigen::MatrixXd& Sigma_nbhd, const std::vector<int>& dims) {
    std::vector<int> keep;
    int at = 0;
    for (int d : dims) {
        if (!Sigma_nbhd.block(at, at, d, d).isZero(0.0))
            for (int r = 0; r < d; ++r) keep.push_back(at + r);
        at += d;
    }
    return keep;
}

}  // namespace

Eigen::MatrixXd propagation_lmi_block(const LocalMaps& m, const Eigen::MatrixXd& K,
                                      const Eigen::VectorXd& z_nbhd, const Eigen::VectorXd& v,
                                      const Eigen::MatrixXd& Sigma_nbhd,
                                      const Eigen::MatrixXd& Sigma_next,
                                      const std::vector<int>& block_dims) {
    const int n = static_cast<int>(Sigma_next.rows());
    std::vector<int> keep = kept_coords(Sigma_nbhd, block_dims);
    const int r = static_cast<int>(keep.size());

    Eigen::MatrixXd AK = m.A + m.B * K;
    Eigen::MatrixXd CK = m.C + m.D * K;
    Eigen::VectorXd g = m.C * z_nbhd + m.D * v;

    Eigen::MatrixXd Sr(r, r), AKr(n, r), CKr(n, r);
    for (int a = 0; a < r; ++a) {
        AKr.col(a) = AK.col(keep[a]);
        CKr.col(a) = CK.col(keep[a]);
        for (int b = 0; b < r; ++b) Sr(a, b) = Sigma_nbhd(keep[a], keep[b]);
    }

    const int dim = n + 2 * r + 1;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
    M.topLeftCorner(n, n) = Sigma_next;
    M.block(0, n, n, r) = AKr * Sr;
    M.block(0, n + r, n, r) = CKr * Sr;
    M.block(0, n + 2 * r, n, 1) = g;
    M.block(n, n, r, r) = Sr;
    M.block(n + r, n + r, r, r) = Sr;
    M(dim - 1, dim - 1) = 1.0;
    M.triangularView<Eigen::Lower>() = M.transpose().triangularView<Eigen::Lower>();
    return M;
}

PropagationLmi propagation_lmi(Problem& prob, const LocalMaps& m, const Eigen::MatrixXd& K,
                               const ExprMatrix& z_nbhd, const ExprMatrix& v,
                               const std::vector<ExprMatrix>& Sigma_blocks,
                               const ExprMatrix& Sigma_next) {
    const int n = Sigma_next.rows();
    std::vector<int> keep;
    int at = 0, rsum = 0;
    for (const auto& blk : Sigma_blocks) {
        int d = blk.rows();
        if (d > 0) {
            for (int r = 0; r < d; ++r) keep.push_back(at + r);
            rsum += d;
            at += d;
        } else {
            // pinned-zero block: caller tells us its width via cols()
            at += blk.cols();
        }
    }

    Eigen::MatrixXd AK = m.A + m.B * K;
    Eigen::MatrixXd CK = m.C + m.D * K;
    Eigen::MatrixXd AKr(n, rsum), CKr(n, rsum);
    for (int a = 0; a < rsum; ++a) {
        AKr.col(a) = AK.col(keep[a]);
        CKr.col(a) = CK.col(keep[a]);
    }

    ExprMatrix Sh(rsum, rsum);
    int off = 0;
    for (const auto& blk : Sigma_blocks) {
        if (blk.rows() == 0) continue;
        Sh.set_block(off, off, blk);
        off += blk.rows();
    }

    ExprMatrix g = m.C * z_nbhd + m.D * v;
    ExprMatrix one = ExprMatrix::constant(Eigen::MatrixXd::Ones(1, 1));

    if (rsum == 0) {
        ExprMatrix M = bmat({{Sigma_next, g}, {g.transpose(), one}});
        PropagationLmi out;
        out.first_row = prob.add_psd(M);
        out.dim = n + 1;
        return out;
    }

    ExprMatrix ASh = AKr * Sh;
    ExprMatrix CSh = CKr * Sh;
    ExprMatrix Zr = ExprMatrix::constant(Eigen::MatrixXd::Zero(rsum, rsum));
    ExprMatrix Zr1 = ExprMatrix::constant(Eigen::MatrixXd::Zero(rsum, 1));
    ExprMatrix M = bmat({{Sigma_next, ASh, CSh, g},
                         {ASh.transpose(), Sh, Zr, Zr1},
                         {CSh.transpose(), Zr, Sh, Zr1},
                         {g.transpose(), Zr1.transpose(), Zr1.transpose(), one}});
    PropagationLmi out;
    out.first_row = prob.add_psd(M);
    out.dim = n + 2 * rsum + 1;
    out.kept = std::move(keep);
    return out;
}

}  // namespace dsmpc
