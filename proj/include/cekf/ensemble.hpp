#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "cekf/detail/linalg.hpp"
#include "cekf/errors.hpp"

namespace cekf {

/// Divisor used when assembling empirical covariances. The 1/N form is the
/// default; 1/(N-1) is available and changes nothing structurally.
enum class CovarianceDivisor { by_n, by_n_minus_1 };

/// Ordered collection of N state vectors of common dimension d, stored as
/// the columns of a d x N matrix. Immutable after construction.
class Ensemble {
public:
    explicit Ensemble(Eigen::MatrixXd members) : members_(std::move(members)) {
        if (members_.cols() < 2) throw ValidationError("Ensemble: need at least 2 members");
        if (members_.rows() < 1) throw ValidationError("Ensemble: state dimension must be positive");
        if (!members_.allFinite()) throw ValidationError("Ensemble: members contain non-finite entries");
    }

    static Ensemble from_members(const std::vector<Eigen::VectorXd>& members) {
        if (members.size() < 2) throw ValidationError("Ensemble: need at least 2 members");
        const Eigen::Index d = members.front().size();
        Eigen::MatrixXd m(d, static_cast<Eigen::Index>(members.size()));
        for (std::size_t n = 0; n < members.size(); ++n) {
            if (members[n].size() != d) throw ValidationError("Ensemble: members differ in dimension");
            m.col(static_cast<Eigen::Index>(n)) = members[n];
        }
        return Ensemble(std::move(m));
    }

    Eigen::Index size() const { return members_.cols(); }
    Eigen::Index dim() const { return members_.rows(); }
    const Eigen::MatrixXd& members() const { return members_; }
    Eigen::VectorXd member(Eigen::Index n) const { return members_.col(n); }

private:
    Eigen::MatrixXd members_;
};

/// Empirical mean, covariance and anomalies e^(m) = v^(m) - mean of an
/// ensemble. The anomaly matrix has the e^(m) as columns; `divisor` is the
/// scalar actually used in the covariance sum (N or N-1).
struct EnsembleStats {
    Eigen::VectorXd mean;        // d
    Eigen::MatrixXd covariance;  // d x d, symmetric PSD
    Eigen::MatrixXd anomalies;   // d x N
    double divisor = 0.0;

    Eigen::Index dim() const { return mean.size(); }
    Eigen::Index count() const { return anomalies.cols(); }
};

/// Mean, anomalies and covariance (outer-product sum scaled by the chosen
/// divisor, symmetrized after assembly).
inline EnsembleStats compute_stats(const Ensemble& ensemble,
                                   CovarianceDivisor divisor = CovarianceDivisor::by_n) {
    const Eigen::Index n = ensemble.size();
    EnsembleStats stats;
    stats.mean = ensemble.members().rowwise().mean();
    stats.anomalies = ensemble.members().colwise() - stats.mean;
    stats.divisor = divisor == CovarianceDivisor::by_n ? static_cast<double>(n)
                                                       : static_cast<double>(n - 1);
    stats.covariance =
        detail::symmetrized((stats.anomalies * stats.anomalies.transpose()) / stats.divisor);
    return stats;
}

/// The anomaly map B: b -> (1/divisor) sum_m b_m e^(m).
inline Eigen::VectorXd anomaly_apply(const EnsembleStats& stats, const Eigen::VectorXd& b) {
    if (b.size() != stats.count()) {
        throw ValidationError("anomaly_apply: coefficient vector length must equal member count");
    }
    return (stats.anomalies * b) / stats.divisor;
}

/// Coefficients b_m = <e^(m), a>, chosen so that anomaly_apply(stats, b)
/// equals covariance * a.
inline Eigen::VectorXd covariance_action_coefficients(const EnsembleStats& stats,
                                                      const Eigen::VectorXd& a) {
    if (a.size() != stats.dim()) {
        throw ValidationError("covariance_action_coefficients: vector dimension mismatch");
    }
    if (!a.allFinite()) {
        throw ValidationError("covariance_action_coefficients: non-finite input");
    }
    return stats.anomalies.transpose() * a;
}

/// Orthonormal eigenbasis of the range of the empirical covariance.
/// Eigenvalues below rel_tol * lambda_max count as zero rank.
struct RangeBasis {
    Eigen::MatrixXd basis;        // d x r, orthonormal columns
    Eigen::VectorXd eigenvalues;  // r, strictly positive, ascending
    Eigen::Index rank() const { return basis.cols(); }
};

inline RangeBasis range_basis(const EnsembleStats& stats, double rel_tol = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(stats.covariance);
    if (es.info() != Eigen::Success) {
        throw NumericalError("range_basis: eigendecomposition failed");
    }
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double lam_max = std::max(lam.maxCoeff(), 0.0);
    const double cut = rel_tol * lam_max;
    Eigen::Index first = lam.size();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i] > cut && lam[i] > 0.0) {
            first = i;
            break;
        }
    }
    RangeBasis rb;
    rb.basis = es.eigenvectors().rightCols(lam.size() - first);
    rb.eigenvalues = lam.tail(lam.size() - first);
    return rb;
}

}  // namespace cekf
