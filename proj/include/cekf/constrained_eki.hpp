#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cekf/constrained_enkf.hpp"
#include "cekf/constraints.hpp"
#include "cekf/eki.hpp"
#include "cekf/ensemble.hpp"
#include "cekf/errors.hpp"
#include "cekf/random.hpp"

namespace cekf {

/// Constraint blocks in parameter space (acting on u) and data space
/// (acting on w = G(u)). Empty blocks are allowed.
struct LiftedConstraints {
    Eigen::MatrixXd F_u;  // m_eu x p
    Eigen::VectorXd f_u;
    Eigen::MatrixXd G_u;  // m_iu x p
    Eigen::VectorXd g_u;
    Eigen::MatrixXd F_w;  // m_ew x k
    Eigen::VectorXd f_w;
    Eigen::MatrixXd G_w;  // m_iw x k
    Eigen::VectorXd g_w;

    static LiftedConstraints parameter_only(Eigen::MatrixXd g_u, Eigen::VectorXd g_u_rhs) {
        LiftedConstraints lc;
        lc.G_u = std::move(g_u);
        lc.g_u = std::move(g_u_rhs);
        return lc;
    }
};

/// Block-diagonal assembly on the lifted vector v = (u, w):
/// F = diag(F_u, F_w), G = diag(G_u, G_w), f = (f_u, f_w), g = (g_u, g_w).
/// Construction certifies the assembled feasible set nonempty.
inline LinearConstraints assemble_lifted(const LiftedConstraints& lc, Eigen::Index p,
                                         Eigen::Index k) {
    const auto check = [](const Eigen::MatrixXd& m, const Eigen::VectorXd& v, Eigen::Index cols,
                          const char* name) {
        if (m.rows() != v.size()) {
            throw ValidationError(std::string("assemble_lifted: ") + name +
                                  " rows do not match its right-hand side");
        }
        if (m.rows() > 0 && m.cols() != cols) {
            throw ValidationError(std::string("assemble_lifted: ") + name +
                                  " has the wrong column count");
        }
    };
    check(lc.F_u, lc.f_u, p, "F_u");
    check(lc.G_u, lc.g_u, p, "G_u");
    check(lc.F_w, lc.f_w, k, "F_w");
    check(lc.G_w, lc.g_w, k, "G_w");

    const Eigen::Index me = lc.F_u.rows() + lc.F_w.rows();
    const Eigen::Index mi = lc.G_u.rows() + lc.G_w.rows();
    Eigen::MatrixXd f_mat = Eigen::MatrixXd::Zero(me, p + k);
    Eigen::VectorXd f_vec(me);
    f_mat.topLeftCorner(lc.F_u.rows(), p) = lc.F_u;
    f_mat.bottomRightCorner(lc.F_w.rows(), k) = lc.F_w;
    f_vec << lc.f_u, lc.f_w;
    Eigen::MatrixXd g_mat = Eigen::MatrixXd::Zero(mi, p + k);
    Eigen::VectorXd g_vec(mi);
    g_mat.topLeftCorner(lc.G_u.rows(), p) = lc.G_u;
    g_mat.bottomRightCorner(lc.G_w.rows(), k) = lc.G_w;
    g_vec << lc.g_u, lc.g_w;
    return {std::move(f_mat), std::move(f_vec), std::move(g_mat), std::move(g_vec)};
}

namespace detail {

/// Lifted stats (mean, anomalies, covariance) of the vector (u, G(u)).
inline EnsembleStats lifted_stats(const BlockStats& s) {
    EnsembleStats out;
    const Eigen::Index p = s.u_mean.size();
    const Eigen::Index k = s.w_mean.size();
    out.mean.resize(p + k);
    out.mean << s.u_mean, s.w_mean;
    out.anomalies.resize(p + k, s.u_anomalies.cols());
    out.anomalies.topRows(p) = s.u_anomalies;
    out.anomalies.bottomRows(k) = s.w_anomalies;
    out.divisor = s.divisor;
    out.covariance.resize(p + k, p + k);
    out.covariance.topLeftCorner(p, p) = s.c_uu;
    out.covariance.topRightCorner(p, k) = s.c_uw;
    out.covariance.bottomLeftCorner(k, p) = s.c_uw.transpose();
    out.covariance.bottomRightCorner(k, k) = s.c_ww;
    return out;
}

inline FilterModel lifted_observation_model(Eigen::Index p, Eigen::Index k,
                                            const Eigen::MatrixXd& gamma) {
    FilterModel model;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, p + k);
    h.rightCols(k).setIdentity();
    model.obs_operator = std::move(h);
    model.obs_cov = gamma;
    model.process_cov = Eigen::MatrixXd::Zero(p + k, p + k);
    return model;
}

}  // namespace detail

/// Constrained EKI analysis for one member in the original (lifted)
/// variables; returns the (u, w) pair.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> constrained_eki_update_original(
    const Eigen::VectorXd& u_member, const Eigen::VectorXd& evaluation, const BlockStats& stats,
    const InverseProblem& problem, const LinearConstraints& lifted,
    const Eigen::VectorXd& observation) {
    const Eigen::Index p = u_member.size();
    const Eigen::Index k = evaluation.size();
    if (lifted.dim() != p + k) {
        throw ValidationError("constrained_eki_update_original: constraint dimension mismatch");
    }
    Eigen::VectorXd v_hat(p + k);
    v_hat << u_member, evaluation;
    const EnsembleStats lifted_stats = detail::lifted_stats(stats);
    const FilterModel model = detail::lifted_observation_model(p, k, problem.obs_cov);
    const Eigen::VectorXd v =
        constrained_update_original(v_hat, lifted_stats, model, observation, lifted);
    return {v.head(p), v.tail(k)};
}

/// Constrained EKI analysis for one member in the range-of-covariance
/// variables: minimize J(b) subject to the lifted constraints expressed
/// through B = (B_u; B_w) and reconstruct u = u^(n) + B_u b,
/// w = G(u^(n)) + B_w b.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> constrained_eki_update_range(
    const Eigen::VectorXd& u_member, const Eigen::VectorXd& evaluation, const BlockStats& stats,
    const InverseProblem& problem, const LinearConstraints& lifted,
    const Eigen::VectorXd& observation) {
    const Eigen::Index p = u_member.size();
    const Eigen::Index k = evaluation.size();
    const Eigen::Index n = stats.u_anomalies.cols();
    if (lifted.dim() != p + k) {
        throw ValidationError("constrained_eki_update_range: constraint dimension mismatch");
    }
    const Eigen::MatrixXd b_u = stats.u_anomalies / stats.divisor;  // p x N
    const Eigen::MatrixXd b_w = stats.w_anomalies / stats.divisor;  // k x N
    const Eigen::LLT<Eigen::MatrixXd> gamma(problem.obs_cov);
    const Eigen::MatrixXd gi_bw = gamma.solve(b_w);
    Eigen::VectorXd v_hat(p + k);
    v_hat << u_member, evaluation;
    Eigen::MatrixXd b_full(p + k, n);
    b_full.topRows(p) = b_u;
    b_full.bottomRows(k) = b_w;

    qp::QuadraticProgram prog;
    prog.P = cekf::detail::symmetrized(b_w.transpose() * gi_bw) +
             Eigen::MatrixXd::Identity(n, n) / stats.divisor;
    prog.q = -gi_bw.transpose() * (observation - evaluation);
    prog.A_eq = lifted.F() * b_full;
    prog.b_eq = lifted.f() - lifted.F() * v_hat;
    prog.A_in = lifted.G() * b_full;
    prog.b_in = lifted.g() - lifted.G() * v_hat;

    const Eigen::VectorXd b0 = Eigen::LLT<Eigen::MatrixXd>(prog.P).solve(-prog.q);
    const Eigen::VectorXd b = detail::solve_member_qp(std::move(prog), b0);
    return {u_member + b_u * b, evaluation + b_w * b};
}

/// Draws from the sampler until N members satisfy the parameter-space
/// constraints and the extra predicate. Each draw uses substream
/// (seed, kInitialEnsemble, draw index).
inline Ensemble rejection_sample_initial(
    const std::function<Eigen::VectorXd(rng::Stream&)>& sampler, const LiftedConstraints& lc,
    const std::function<bool(const Eigen::VectorXd&)>& extra_predicate, Eigen::Index n,
    Eigen::Index max_draws, std::uint64_t seed, double tol = 1e-9) {
    if (max_draws < n) {
        throw ValidationError("rejection_sample_initial: max_draws must be at least N");
    }
    std::vector<Eigen::VectorXd> accepted;
    Eigen::Index draws = 0;
    for (; draws < max_draws && static_cast<Eigen::Index>(accepted.size()) < n; ++draws) {
        rng::Stream stream(rng::derive(seed, {rng::kInitialEnsemble,
                                              static_cast<std::uint64_t>(draws)}));
        const Eigen::VectorXd u = sampler(stream);
        bool ok = true;
        if (lc.F_u.rows() > 0) {
            const Eigen::VectorXd r = lc.F_u * u - lc.f_u;
            for (Eigen::Index i = 0; i < r.size() && ok; ++i) {
                ok = std::abs(r[i]) <= tol * (1.0 + std::abs(lc.f_u[i]));
            }
        }
        if (ok && lc.G_u.rows() > 0) {
            const Eigen::VectorXd r = lc.G_u * u - lc.g_u;
            for (Eigen::Index i = 0; i < r.size() && ok; ++i) {
                ok = r[i] <= tol * (1.0 + std::abs(lc.g_u[i]));
            }
        }
        if (ok && extra_predicate) ok = extra_predicate(u);
        if (ok) accepted.push_back(u);
    }
    if (static_cast<Eigen::Index>(accepted.size()) < n) {
        const double rate = draws > 0 ? static_cast<double>(accepted.size()) /
                                            static_cast<double>(draws)
                                      : 0.0;
        throw NumericalError("rejection_sample_initial: accepted " +
                             std::to_string(accepted.size()) + " of " + std::to_string(draws) +
                             " draws (rate " + std::to_string(rate) + "), need " +
                             std::to_string(n));
    }
    return Ensemble::from_members(accepted);
}

struct ConstrainedEkiRun {
    EkiHistory history;
    ViolationReport report;
};

/// Constrained EKI loop: unconstrained parameter and data-space updates
/// first, then re-solves for the members whose lifted vector (u, w) violates
/// the constraints. The report records pre-re-solve violation fractions.
inline ConstrainedEkiRun constrained_eki_run(
    const InverseProblem& problem, const LiftedConstraints& lc, const Ensemble& initial,
    int iterations, ConstrainedVariant variant = ConstrainedVariant::range_of_covariance,
    std::uint64_t seed = 0, double violation_tol = 1e-9) {
    problem.validate();
    if (iterations < 0) throw ValidationError("constrained_eki_run: negative iteration count");
    const Eigen::Index p = initial.dim();
    const Eigen::Index k = problem.data_dim();
    const LinearConstraints lifted = assemble_lifted(lc, p, k);

    ConstrainedEkiRun out;
    out.history.seed = seed;
    out.history.parameters.push_back(initial);
    const Eigen::Index rows = lifted.eq_rows() + lifted.in_rows();
    out.report.eq_rows = lifted.eq_rows();
    out.report.in_rows = lifted.in_rows();
    out.report.fractions = Eigen::MatrixXd::Zero(rows, iterations);

    Ensemble current = initial;
    for (int j = 0; j < iterations; ++j) {
        const Eigen::MatrixXd evals = evaluate_forward(problem, current, j);
        const BlockStats stats = block_stats(current, evals);
        const Eigen::MatrixXd ys = eki_perturb_observations(problem, current.size(), j, seed);
        Eigen::MatrixXd u_next = eki_update(current, evals, stats, problem, ys).members();
        Eigen::MatrixXd w_next = w_update(evals, stats, problem, ys);

        int resolved = 0;
        for (Eigen::Index n = 0; n < current.size(); ++n) {
            Eigen::VectorXd v(p + k);
            v << u_next.col(n), w_next.col(n);
            const auto viol = violates(v, lifted, violation_tol);
            for (int row : viol.equality) out.report.fractions(row, j) += 1.0;
            for (int row : viol.inequality) {
                out.report.fractions(lifted.eq_rows() + row, j) += 1.0;
            }
            if (!viol.any()) continue;
            ++resolved;
            try {
                const auto [u_c, w_c] =
                    variant == ConstrainedVariant::original_variables
                        ? constrained_eki_update_original(current.member(n), evals.col(n), stats,
                                                          problem, lifted, ys.col(n))
                        : constrained_eki_update_range(current.member(n), evals.col(n), stats,
                                                       problem, lifted, ys.col(n));
                u_next.col(n) = u_c;
                w_next.col(n) = w_c;
            } catch (const InfeasibleError& e) {
                throw InfeasibleError(std::string(e.what()) + " (member " + std::to_string(n) +
                                      ", iteration " + std::to_string(j) + ")");
            }
        }
        out.report.fractions.col(j) /= static_cast<double>(current.size());
        out.report.resolved_members.push_back(resolved);

        Ensemble next(std::move(u_next));
        out.history.evaluations.push_back(evals);
        out.history.parameters.push_back(next);
        current = std::move(next);
    }
    return out;
}

}  // namespace cekf
