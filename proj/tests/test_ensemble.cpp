#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "cekf/ensemble.hpp"
#include "cekf/random.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

cekf::Ensemble random_ensemble(int d, int n, std::uint64_t seed) {
    cekf::rng::Stream stream(seed);
    MatrixXd m(d, n);
    for (int j = 0; j < n; ++j) m.col(j) = stream.gaussian_vector(d);
    return cekf::Ensemble(m);
}

}  // namespace

TEST_CASE("ensemble construction validates invariants", "[ensemble]") {
    MatrixXd one(2, 1);
    one.setZero();
    CHECK_THROWS_AS(cekf::Ensemble(one), cekf::ValidationError);

    MatrixXd bad(2, 3);
    bad.setZero();
    bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(cekf::Ensemble(bad), cekf::ValidationError);

    std::vector<VectorXd> mismatched{VectorXd::Zero(2), VectorXd::Zero(3)};
    CHECK_THROWS_AS(cekf::Ensemble::from_members(mismatched), cekf::ValidationError);
}

TEST_CASE("stats of identical members collapse to zero spread", "[ensemble]") {
    VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    MatrixXd m(3, 4);
    for (int j = 0; j < 4; ++j) m.col(j) = x;
    const auto stats = cekf::compute_stats(cekf::Ensemble(m));
    CHECK((stats.mean - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(stats.covariance.cwiseAbs().maxCoeff() == 0.0);
    CHECK(stats.anomalies.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-member covariance is the anomaly outer product", "[ensemble]") {
    VectorXd m0(2), delta(2);
    m0 << 0.3, -1.1;
    delta << 0.7, 2.0;
    MatrixXd members(2, 2);
    members.col(0) = m0 + delta;
    members.col(1) = m0 - delta;
    const auto stats = cekf::compute_stats(cekf::Ensemble(members));
    const MatrixXd expected = delta * delta.transpose();
    CHECK((stats.covariance - expected).cwiseAbs().maxCoeff() < 1e-14 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("mean of a small ensemble", "[ensemble]") {
    MatrixXd members(2, 3);
    members << 1, 0, 2,
               0, 1, 3;
    const auto stats = cekf::compute_stats(cekf::Ensemble(members));
    CHECK(stats.mean[0] == Catch::Approx(1.0));
    CHECK(stats.mean[1] == Catch::Approx(4.0 / 3.0));
}

TEST_CASE("anomalies sum to zero and reconstruct the covariance", "[ensemble]") {
    const auto ens = random_ensemble(5, 4, 17);
    const auto stats = cekf::compute_stats(ens);
    const double scale = stats.anomalies.cwiseAbs().maxCoeff();
    CHECK(stats.anomalies.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12 * scale);

    MatrixXd rebuilt = MatrixXd::Zero(5, 5);
    for (int m = 0; m < 4; ++m) {
        rebuilt += stats.anomalies.col(m) * stats.anomalies.col(m).transpose();
    }
    rebuilt /= stats.divisor;
    CHECK((rebuilt - stats.covariance).cwiseAbs().maxCoeff() <=
          1e-13 * stats.covariance.cwiseAbs().maxCoeff());
    CHECK((stats.covariance - stats.covariance.transpose()).cwiseAbs().maxCoeff() <=
          1e-14 * stats.covariance.cwiseAbs().maxCoeff());
}

TEST_CASE("rank of the covariance is at most N-1", "[ensemble]") {
    const auto ens = random_ensemble(6, 3, 3);
    const auto stats = cekf::compute_stats(ens);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(stats.covariance);
    const VectorXd lam = es.eigenvalues();
    const double lam_max = lam.maxCoeff();
    // d - (N-1) = 4 smallest eigenvalues are numerically zero.
    for (int i = 0; i < 4; ++i) CHECK(std::abs(lam[i]) <= 1e-10 * lam_max);
}

TEST_CASE("anomaly_apply picks anomalies and is linear", "[ensemble]") {
    const auto ens = random_ensemble(4, 3, 11);
    const auto stats = cekf::compute_stats(ens);

    CHECK(cekf::anomaly_apply(stats, VectorXd::Zero(3)).cwiseAbs().maxCoeff() == 0.0);

    VectorXd pick = VectorXd::Zero(3);
    pick[0] = 3.0;  // N = 3
    CHECK((cekf::anomaly_apply(stats, pick) - stats.anomalies.col(0)).cwiseAbs().maxCoeff() <
          1e-14);

    cekf::rng::Stream stream(5);
    const VectorXd b1 = stream.gaussian_vector(3);
    const VectorXd b2 = stream.gaussian_vector(3);
    const VectorXd lhs = cekf::anomaly_apply(stats, 2.0 * b1 - 0.5 * b2);
    const VectorXd rhs = 2.0 * cekf::anomaly_apply(stats, b1) - 0.5 * cekf::anomaly_apply(stats, b2);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-13);

    CHECK_THROWS_AS(cekf::anomaly_apply(stats, VectorXd::Zero(4)), cekf::ValidationError);
}

TEST_CASE("covariance action via coefficients matches the dense product", "[ensemble]") {
    const auto ens = random_ensemble(5, 4, 23);
    const auto stats = cekf::compute_stats(ens);

    CHECK(cekf::covariance_action_coefficients(stats, VectorXd::Zero(5)).cwiseAbs().maxCoeff() ==
          0.0);

    cekf::rng::Stream stream(7);
    for (int trial = 0; trial < 20; ++trial) {
        const VectorXd a = stream.gaussian_vector(5);
        const VectorXd b = cekf::covariance_action_coefficients(stats, a);
        const VectorXd via_b = cekf::anomaly_apply(stats, b);
        const VectorXd direct = stats.covariance * a;
        CHECK((via_b - direct).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + a.norm()));
    }
}

TEST_CASE("null-space vectors of the covariance map to zero", "[ensemble]") {
    const auto ens = random_ensemble(5, 3, 29);
    const auto stats = cekf::compute_stats(ens);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(stats.covariance);
    // Smallest eigenvector is in the numerical null space (rank <= 2 here).
    const VectorXd a = es.eigenvectors().col(0);
    const VectorXd b = cekf::covariance_action_coefficients(stats, a);
    CHECK(cekf::anomaly_apply(stats, b).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("divisor option switches between N and N-1", "[ensemble]") {
    const auto ens = random_ensemble(3, 4, 41);
    const auto by_n = cekf::compute_stats(ens, cekf::CovarianceDivisor::by_n);
    const auto by_nm1 = cekf::compute_stats(ens, cekf::CovarianceDivisor::by_n_minus_1);
    CHECK(by_n.divisor == 4.0);
    CHECK(by_nm1.divisor == 3.0);
    CHECK((by_nm1.covariance * 3.0 / 4.0 - by_n.covariance).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("range basis spans the anomalies", "[ensemble]") {
    const auto ens = random_ensemble(6, 4, 57);
    const auto stats = cekf::compute_stats(ens);
    const auto rb = cekf::range_basis(stats);
    REQUIRE(rb.rank() == 3);  // N-1
    // Every anomaly projects onto the basis with negligible residual.
    for (int m = 0; m < 4; ++m) {
        const VectorXd e = stats.anomalies.col(m);
        const VectorXd resid = e - rb.basis * (rb.basis.transpose() * e);
        CHECK(resid.norm() <= 1e-10 * (1.0 + e.norm()));
    }
    for (int i = 0; i < rb.rank(); ++i) CHECK(rb.eigenvalues[i] > 0.0);
}
