#pragma once

#include <Eigen/Dense>

#include "cekf/errors.hpp"

namespace cekf::detail {

/// Orthonormal basis of the null space of A (columns). Returns an n x 0
/// matrix when A has full column rank.
inline Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& A, double rank_tol = -1.0) {
    const Eigen::Index n = A.cols();
    if (A.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
    if (rank_tol > 0.0) qr.setThreshold(rank_tol);
    const Eigen::Index r = qr.rank();
    Eigen::MatrixXd q = qr.householderQ();
    return q.rightCols(n - r);
}

/// Factor L of a symmetric PSD matrix with M = L L^T, via the symmetric
/// eigendecomposition; negative eigenvalues below -tol*|lambda_max| are
/// rejected, small negatives are clamped to zero.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& M, double tol = 1e-10) {
    if (M.rows() != M.cols()) throw ValidationError("psd_factor: matrix must be square");
    if (M.size() == 0) return M;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw NumericalError("psd_factor: eigendecomposition failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    Eigen::VectorXd sqrt_lam(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i] < -tol * scale) {
            throw ValidationError("psd_factor: matrix is not positive semi-definite");
        }
        sqrt_lam[i] = std::sqrt(std::max(lam[i], 0.0));
    }
    return es.eigenvectors() * sqrt_lam.asDiagonal();
}

inline bool is_finite(const Eigen::Ref<const Eigen::MatrixXd>& M) {
    return M.allFinite();
}

/// Symmetrize in place: (M + M^T) / 2.
inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& M) {
    return 0.5 * (M + M.transpose());
}

}  // namespace cekf::detail
