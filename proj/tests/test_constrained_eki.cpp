#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "cekf/constrained_eki.hpp"
#include "helpers.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using test_helpers::random_ensemble;
using test_helpers::random_matrix;
using test_helpers::random_pd;

namespace {

cekf::InverseProblem linear_problem(MatrixXd a, VectorXd y, MatrixXd gamma, int s = 0) {
    cekf::InverseProblem problem;
    problem.forward = [a = std::move(a)](const VectorXd& u) { return (a * u).eval(); };
    problem.data = std::move(y);
    problem.obs_cov = std::move(gamma);
    problem.perturb_flag = s;
    return problem;
}

}  // namespace

TEST_CASE("lifted assembly is block diagonal", "[constrained-eki]") {
    const int p = 3, k = 2;
    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd::Identity(p, p);
    lc.g_u = VectorXd::Ones(p);
    const auto only_u = cekf::assemble_lifted(lc, p, k);
    REQUIRE(only_u.in_rows() == p);
    REQUIRE(only_u.eq_rows() == 0);
    CHECK(only_u.G().leftCols(p) == MatrixXd::Identity(p, p));
    CHECK(only_u.G().rightCols(k).cwiseAbs().maxCoeff() == 0.0);

    cekf::LiftedConstraints lw;
    lw.F_w = MatrixXd::Ones(1, k);
    lw.f_w = VectorXd::Zero(1);
    const auto only_w = cekf::assemble_lifted(lw, p, k);
    REQUIRE(only_w.eq_rows() == 1);
    CHECK(only_w.F().leftCols(p).cwiseAbs().maxCoeff() == 0.0);
    CHECK(only_w.F().rightCols(k) == MatrixXd::Ones(1, k));

    cekf::LiftedConstraints both;
    both.F_u = MatrixXd::Identity(1, p);
    both.f_u = VectorXd::Zero(1);
    both.F_w = MatrixXd::Ones(1, k);
    both.f_w = VectorXd::Zero(1);
    both.G_u = -MatrixXd::Identity(p, p);
    both.g_u = VectorXd::Ones(p);
    both.G_w = MatrixXd::Identity(k, k);
    both.g_w = VectorXd::Ones(k);
    const auto all = cekf::assemble_lifted(both, p, k);
    CHECK(all.eq_rows() == 2);
    CHECK(all.in_rows() == p + k);
    // Cross blocks are zero.
    CHECK(all.F().topRightCorner(1, k).cwiseAbs().maxCoeff() == 0.0);
    CHECK(all.F().bottomLeftCorner(1, p).cwiseAbs().maxCoeff() == 0.0);
    CHECK(all.G().topRightCorner(p, k).cwiseAbs().maxCoeff() == 0.0);
    CHECK(all.G().bottomLeftCorner(k, p).cwiseAbs().maxCoeff() == 0.0);

    // Dimension mismatches are rejected.
    cekf::LiftedConstraints bad;
    bad.G_u = MatrixXd::Identity(p + 1, p + 1);
    bad.g_u = VectorXd::Ones(p + 1);
    CHECK_THROWS_AS(cekf::assemble_lifted(bad, p, k), cekf::ValidationError);
}

TEST_CASE("scalar constrained EKI caps the parameter", "[constrained-eki]") {
    // From the unconstrained example: member 2 updates to u = 3, w = 3.
    // Under u <= 2.5 the restricted 1-D objective gives u = w = 2.5.
    MatrixXd members(1, 2);
    members << 0.0, 2.0;
    const cekf::Ensemble ens(members);
    auto problem = linear_problem(MatrixXd::Identity(1, 1), VectorXd::Constant(1, 4.0),
                                  MatrixXd::Identity(1, 1));
    const MatrixXd evals = cekf::evaluate_forward(problem, ens);
    const auto stats = cekf::block_stats(ens, evals);

    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd::Identity(1, 1);
    lc.g_u = VectorXd::Constant(1, 2.5);
    const auto lifted = cekf::assemble_lifted(lc, 1, 1);

    const VectorXd y = problem.data;
    const auto [u_orig, w_orig] = cekf::constrained_eki_update_original(
        ens.member(1), evals.col(1), stats, problem, lifted, y);
    const auto [u_range, w_range] = cekf::constrained_eki_update_range(
        ens.member(1), evals.col(1), stats, problem, lifted, y);

    CHECK(u_orig[0] == Catch::Approx(2.5).margin(1e-8));
    CHECK(w_orig[0] == Catch::Approx(2.5).margin(1e-8));
    CHECK(u_range[0] == Catch::Approx(2.5).margin(1e-8));
    CHECK(w_range[0] == Catch::Approx(2.5).margin(1e-8));
}

TEST_CASE("inactive constraints reproduce the unconstrained EKI pair", "[constrained-eki]") {
    cekf::rng::Stream stream(31);
    const int p = 3, k = 2, n = 4;
    const auto ens = random_ensemble(p, n, stream);
    auto problem = linear_problem(random_matrix(k, p, stream), stream.gaussian_vector(k),
                                  random_pd(k, stream));
    const MatrixXd evals = cekf::evaluate_forward(problem, ens);
    const auto stats = cekf::block_stats(ens, evals);
    const MatrixXd ys = cekf::eki_perturb_observations(problem, n, 0, 3);

    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd::Identity(p, p);
    lc.g_u = VectorXd::Constant(p, 1e7);
    const auto lifted = cekf::assemble_lifted(lc, p, k);

    const auto u_exact = cekf::eki_update(ens, evals, problem, ys);
    const MatrixXd w_exact = cekf::w_update(ens, evals, problem, ys);
    for (int m = 0; m < n; ++m) {
        const auto [u_c, w_c] = cekf::constrained_eki_update_original(
            ens.member(m), evals.col(m), stats, problem, lifted, ys.col(m));
        const double scale = 1.0 + u_exact.member(m).norm() + w_exact.col(m).norm();
        CHECK((u_c - u_exact.member(m)).norm() <= 1e-9 * scale);
        CHECK((w_c - w_exact.col(m)).norm() <= 1e-9 * scale);
    }
}

TEST_CASE("original and range constrained EKI updates agree",
          "[constrained-eki][properties]") {
    cekf::rng::Stream stream(37);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 2 + static_cast<int>(stream.uniform() * 2.99);  // 2..4
        const int k = 1 + static_cast<int>(stream.uniform() * 2.49);  // 1..3
        const int n = 3 + static_cast<int>(stream.uniform() * 2.99);  // 3..5
        const auto ens = random_ensemble(p, n, stream);
        auto problem = linear_problem(random_matrix(k, p, stream), stream.gaussian_vector(k),
                                      random_pd(k, stream));
        const MatrixXd evals = cekf::evaluate_forward(problem, ens);
        const auto stats = cekf::block_stats(ens, evals);
        const MatrixXd ys = cekf::eki_perturb_observations(problem, n, 0, trial);

        // Constraints through a reachable lifted point v_hat + B c.
        const int member = trial % n;
        VectorXd v_hat(p + k);
        v_hat << ens.member(member), evals.col(member);
        MatrixXd b_full(p + k, n);
        b_full.topRows(p) = stats.u_anomalies / stats.divisor;
        b_full.bottomRows(k) = stats.w_anomalies / stats.divisor;
        const VectorXd reachable = v_hat + b_full * stream.gaussian_vector(n);

        const int mi = 1 + static_cast<int>(stream.uniform() * 1.99);  // 1..2
        cekf::LiftedConstraints lc;
        MatrixXd rows(mi, p + k);
        VectorXd rhs(mi);
        // Mixed rows across (u, w) are not expressible in the block form, so
        // constrain u and w separately through the reachable point.
        lc.G_u = MatrixXd(mi, p);
        lc.g_u = VectorXd(mi);
        for (int i = 0; i < mi; ++i) {
            lc.G_u.row(i) = stream.gaussian_vector(p).transpose();
            lc.g_u[i] = lc.G_u.row(i).dot(reachable.head(p)) + 0.05 + 0.2 * stream.uniform();
        }
        lc.G_w = MatrixXd(1, k);
        lc.g_w = VectorXd(1);
        lc.G_w.row(0) = stream.gaussian_vector(k).transpose();
        lc.g_w[0] = lc.G_w.row(0).dot(reachable.tail(k)) + 0.05 + 0.2 * stream.uniform();
        const auto lifted = cekf::assemble_lifted(lc, p, k);

        const auto [u_o, w_o] = cekf::constrained_eki_update_original(
            ens.member(member), evals.col(member), stats, problem, lifted, ys.col(member));
        const auto [u_r, w_r] = cekf::constrained_eki_update_range(
            ens.member(member), evals.col(member), stats, problem, lifted, ys.col(member));

        INFO("trial " << trial << " p=" << p << " k=" << k << " n=" << n);
        const double scale = 1.0 + u_o.norm() + w_o.norm();
        CHECK((u_o - u_r).norm() <= 1e-7 * scale);
        CHECK((w_o - w_r).norm() <= 1e-7 * scale);

        // Feasibility of the emitted pair.
        VectorXd v_out(p + k);
        v_out << u_o, w_o;
        CHECK((lifted.G() * v_out - lifted.g()).maxCoeff() <= 1e-8 * scale);

        // The (u, w) parts come from one shared coefficient vector: the
        // stacked increment lies in the column space of (B_u; B_w).
        VectorXd inc(p + k);
        inc << u_r - ens.member(member), w_r - evals.col(member);
        const VectorXd b_fit = b_full.completeOrthogonalDecomposition().solve(inc);
        CHECK((b_full * b_fit - inc).norm() <= 1e-8 * (1.0 + inc.norm()));
    }
}

TEST_CASE("data-space equality constraints hold exactly", "[constrained-eki]") {
    cekf::rng::Stream stream(41);
    const int p = 3, k = 2, n = 5;
    const auto ens = random_ensemble(p, n, stream);
    auto problem = linear_problem(random_matrix(k, p, stream), stream.gaussian_vector(k),
                                  0.5 * MatrixXd::Identity(k, k));
    const MatrixXd evals = cekf::evaluate_forward(problem, ens);
    const auto stats = cekf::block_stats(ens, evals);

    // One equality row on w through a reachable point.
    VectorXd v_hat(p + k);
    v_hat << ens.member(0), evals.col(0);
    MatrixXd b_full(p + k, n);
    b_full.topRows(p) = stats.u_anomalies / stats.divisor;
    b_full.bottomRows(k) = stats.w_anomalies / stats.divisor;
    const VectorXd reachable = v_hat + b_full * stream.gaussian_vector(n);

    cekf::LiftedConstraints lc;
    lc.F_w = MatrixXd(1, k);
    lc.F_w.row(0) = stream.gaussian_vector(k).transpose();
    lc.f_w = VectorXd(1);
    lc.f_w[0] = lc.F_w.row(0).dot(reachable.tail(k));
    const auto lifted = cekf::assemble_lifted(lc, p, k);

    const auto [u_c, w_c] = cekf::constrained_eki_update_range(
        ens.member(0), evals.col(0), stats, problem, lifted, problem.data);
    CHECK(std::abs(lc.F_w.row(0).dot(w_c) - lc.f_w[0]) <= 1e-8 * (1.0 + w_c.norm()));
}

TEST_CASE("rejection sampling accepts in order and enforces the screen",
          "[constrained-eki]") {
    const int p = 2;
    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd(2 * p, p);
    lc.G_u << MatrixXd::Identity(p, p), -MatrixXd::Identity(p, p);
    lc.g_u = VectorXd::Constant(2 * p, 10.0);  // |u_i| <= 10 covers the sampler

    const auto sampler = [](cekf::rng::Stream& s) {
        VectorXd u(2);
        u << s.uniform(), s.uniform();
        return u;
    };

    const auto ens = cekf::rejection_sample_initial(sampler, lc, nullptr, 4, 100, 13);
    REQUIRE(ens.size() == 4);
    // Constraints cover the support, so the first four draws are accepted.
    for (int i = 0; i < 4; ++i) {
        cekf::rng::Stream s(cekf::rng::derive(13, {cekf::rng::kInitialEnsemble,
                                                   static_cast<std::uint64_t>(i)}));
        CHECK((ens.member(i) - sampler(s)).cwiseAbs().maxCoeff() == 0.0);
    }

    // An always-false predicate exhausts max_draws.
    CHECK_THROWS_AS(cekf::rejection_sample_initial(
                        sampler, lc, [](const VectorXd&) { return false; }, 4, 50, 13),
                    cekf::NumericalError);

    // A nontrivial predicate holds on every accepted member.
    const auto screened = cekf::rejection_sample_initial(
        sampler, lc, [](const VectorXd& u) { return u[0] + u[1] < 0.8; }, 6, 1000, 13);
    for (int i = 0; i < 6; ++i) {
        CHECK(screened.member(i)[0] + screened.member(i)[1] < 0.8);
        CHECK((lc.G_u * screened.member(i) - lc.g_u).maxCoeff() <= 0.0);
    }
}

TEST_CASE("constrained run with inactive constraints equals the plain run",
          "[constrained-eki]") {
    cekf::rng::Stream stream(43);
    const int p = 3, k = 2;
    const auto initial = random_ensemble(p, 4, stream);
    const MatrixXd a = random_matrix(k, p, stream);
    auto problem = linear_problem(a, stream.gaussian_vector(k), random_pd(k, stream), 1);

    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd::Identity(p, p);
    lc.g_u = VectorXd::Constant(p, 1e8);

    const auto plain = cekf::eki_run(problem, initial, 5, 99);
    const auto constrained = cekf::constrained_eki_run(
        problem, lc, initial, 5, cekf::ConstrainedVariant::range_of_covariance, 99);

    CHECK(constrained.report.fractions.cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j <= 5; ++j) {
        CHECK((plain.parameters[j].members() - constrained.history.parameters[j].members())
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("constrained runs stay feasible and in the initial span",
          "[constrained-eki][properties]") {
    cekf::rng::Stream stream(47);
    const int p = 6, k = 2, n = 4;
    const auto initial = random_ensemble(p, n, stream);
    const MatrixXd a = random_matrix(k, p, stream);
    // Truth far outside the box below, so unconstrained updates overshoot it.
    const VectorXd u_far = VectorXd::Constant(p, 5.0);
    auto problem = linear_problem(a, (a * u_far).eval(), 0.01 * MatrixXd::Identity(k, k), 1);

    // A box around the initial ensemble tight enough to trigger re-solves.
    cekf::LiftedConstraints lc;
    lc.G_u = MatrixXd(2 * p, p);
    lc.G_u << MatrixXd::Identity(p, p), -MatrixXd::Identity(p, p);
    lc.g_u = VectorXd::Constant(2 * p, 1.2);
    const auto lifted = cekf::assemble_lifted(lc, p, k);

    Eigen::ColPivHouseholderQR<MatrixXd> qr(initial.members());
    const MatrixXd basis = MatrixXd(qr.householderQ()).leftCols(qr.rank());

    for (auto variant : {cekf::ConstrainedVariant::original_variables,
                         cekf::ConstrainedVariant::range_of_covariance}) {
        const auto result = cekf::constrained_eki_run(problem, lc, initial, 8, variant, 3);
        bool any_resolve = false;
        for (int c : result.report.resolved_members) any_resolve |= c > 0;
        CHECK(any_resolve);

        for (std::size_t j = 1; j < result.history.parameters.size(); ++j) {
            const auto& ens = result.history.parameters[j];
            for (int m = 0; m < n; ++m) {
                const VectorXd u = ens.member(m);
                CHECK((lc.G_u * u - lc.g_u).maxCoeff() <= 1e-8 * (1.0 + u.norm()));
                const VectorXd resid = u - basis * (basis.transpose() * u);
                CHECK(resid.norm() <= 1e-8 * (1.0 + u.norm()));
            }
        }
    }
}
