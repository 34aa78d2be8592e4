#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cekf/constraints.hpp"
#include "cekf/enkf.hpp"
#include "cekf/ensemble.hpp"
#include "cekf/errors.hpp"
#include "cekf/qp.hpp"

namespace cekf {

enum class ConstrainedVariant { original_variables, range_of_covariance };

namespace detail {

inline Eigen::VectorXd solve_member_qp(qp::QuadraticProgram&& prog,
                                       const std::optional<Eigen::VectorXd>& warm = std::nullopt) {
    qp::QpOptions opts;
    opts.warm_start = warm;
    const auto sol = qp::solve(prog, opts);
    if (sol.status == qp::QpStatus::infeasible) {
        throw InfeasibleError("constrained update: restricted feasible set is empty");
    }
    if (sol.status != qp::QpStatus::optimal) {
        throw NumericalError(std::string("constrained update: QP solver returned ") +
                             qp::to_string(sol.status));
    }
    return sol.x;
}

}  // namespace detail

/// Constrained analysis for one member in the original variables: minimize
/// the model-data compromise over v = v_hat + U z, where U spans the range
/// of the empirical covariance and the quadratic weight on z is the inverse
/// eigenvalue matrix. Constraints are mapped through U.
inline Eigen::VectorXd constrained_update_original(const Eigen::VectorXd& predicted_member,
                                                   const EnsembleStats& stats,
                                                   const FilterModel& model,
                                                   const Eigen::VectorXd& observation,
                                                   const LinearConstraints& constraints) {
    const auto rb = range_basis(stats);
    const Eigen::Index r = rb.rank();
    if (r == 0) {
        // Zero-spread ensemble: the restricted set is the single point v_hat.
        if (violates(predicted_member, constraints).any()) {
            throw InfeasibleError(
                "constrained update: zero-rank covariance and infeasible prediction");
        }
        return predicted_member;
    }
    const Eigen::MatrixXd& h = model.obs_operator;
    const Eigen::LLT<Eigen::MatrixXd> gamma(model.obs_cov);
    const Eigen::MatrixXd hu = h * rb.basis;                // k x r
    const Eigen::MatrixXd gi_hu = gamma.solve(hu);

    qp::QuadraticProgram prog;
    prog.P = detail::symmetrized(hu.transpose() * gi_hu);
    prog.P += rb.eigenvalues.cwiseInverse().asDiagonal();
    prog.q = -gi_hu.transpose() * (observation - h * predicted_member);
    prog.A_eq = constraints.F() * rb.basis;
    prog.b_eq = constraints.f() - constraints.F() * predicted_member;
    prog.A_in = constraints.G() * rb.basis;
    prog.b_in = constraints.g() - constraints.G() * predicted_member;

    const Eigen::VectorXd z = detail::solve_member_qp(std::move(prog));
    return predicted_member + rb.basis * z;
}

/// Constrained analysis for one member in the range-of-covariance variables:
/// minimize J(b) subject to F B b = f - F v_hat, G B b <= g - G v_hat and
/// reconstruct v = v_hat + B b.
inline Eigen::VectorXd constrained_update_range(const Eigen::VectorXd& predicted_member,
                                                const EnsembleStats& stats,
                                                const FilterModel& model,
                                                const Eigen::VectorXd& observation,
                                                const LinearConstraints& constraints) {
    const Eigen::Index n = stats.count();
    const Eigen::MatrixXd b_map = stats.anomalies / stats.divisor;  // d x N
    const Eigen::MatrixXd& h = model.obs_operator;
    const Eigen::LLT<Eigen::MatrixXd> gamma(model.obs_cov);
    const Eigen::MatrixXd hb = h * b_map;
    const Eigen::MatrixXd gi_hb = gamma.solve(hb);

    qp::QuadraticProgram prog;
    prog.P = detail::symmetrized(hb.transpose() * gi_hb) +
             Eigen::MatrixXd::Identity(n, n) / stats.divisor;
    prog.q = -gi_hb.transpose() * (observation - h * predicted_member);
    prog.A_eq = constraints.F() * b_map;
    prog.b_eq = constraints.f() - constraints.F() * predicted_member;
    prog.A_in = constraints.G() * b_map;
    prog.b_in = constraints.g() - constraints.G() * predicted_member;

    // The unconstrained minimizer doubles as a warm start when feasible.
    const Eigen::VectorXd b0 = Eigen::LLT<Eigen::MatrixXd>(prog.P).solve(-prog.q);
    const Eigen::VectorXd b = detail::solve_member_qp(std::move(prog), b0);
    return predicted_member + b_map * b;
}

/// Lemma-1 oracle: the eps-regularized strictly convex problem solved under
/// the same constraints, as a full-space QP. Converges to the
/// original-variable answer as eps -> 0.
inline Eigen::VectorXd constrained_update_regularized(const Eigen::VectorXd& predicted_member,
                                                      const EnsembleStats& stats,
                                                      const FilterModel& model,
                                                      const Eigen::VectorXd& observation,
                                                      const LinearConstraints& constraints,
                                                      double eps) {
    if (eps <= 0.0) throw ValidationError("constrained_update_regularized: eps must be positive");
    const Eigen::Index d = stats.dim();
    const Eigen::MatrixXd& h = model.obs_operator;
    const Eigen::LLT<Eigen::MatrixXd> gamma(model.obs_cov);
    Eigen::MatrixXd c_eps = stats.covariance;
    c_eps.diagonal().array() += eps;
    const Eigen::MatrixXd c_inv =
        Eigen::LLT<Eigen::MatrixXd>(c_eps).solve(Eigen::MatrixXd::Identity(d, d));

    qp::QuadraticProgram prog;
    prog.P = detail::symmetrized(h.transpose() * gamma.solve(h) + c_inv);
    prog.q = -(h.transpose() * gamma.solve(observation) + c_inv * predicted_member);
    prog.A_eq = constraints.F();
    prog.b_eq = constraints.f();
    prog.A_in = constraints.G();
    prog.b_in = constraints.g();
    return detail::solve_member_qp(std::move(prog));
}

struct ConstrainedFilterRun {
    FilterRun run;
    ViolationReport report;
};

/// Filter loop with constraint enforcement: every member receives the
/// unconstrained update first and only members violating the constraints are
/// re-solved through the chosen variant. The report records the pre-re-solve
/// violation fractions per constraint row.
inline ConstrainedFilterRun constrained_filter_run(
    const FilterModel& model, const Ensemble& initial, const std::vector<Eigen::VectorXd>& data,
    const LinearConstraints& constraints,
    ConstrainedVariant variant = ConstrainedVariant::original_variables, std::uint64_t seed = 0,
    double violation_tol = 1e-9) {
    model.validate();
    if (constraints.dim() != initial.dim()) {
        throw ValidationError("constrained_filter_run: constraint dimension mismatch");
    }

    ConstrainedFilterRun out;
    out.run.seed = seed;
    const Eigen::Index rows = constraints.eq_rows() + constraints.in_rows();
    out.report.eq_rows = constraints.eq_rows();
    out.report.in_rows = constraints.in_rows();
    out.report.fractions = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(data.size()));

    Ensemble current = initial;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const int step = static_cast<int>(j);
        auto pred = predict(current, model, step, seed);
        const Eigen::MatrixXd ys =
            perturb_observations(data[j], model, current.size(), step, seed);
        Ensemble updated = variant == ConstrainedVariant::original_variables
                               ? analysis_update(pred.ensemble, pred.stats, model, ys)
                               : range_update(pred.ensemble, pred.stats, model, ys);

        Eigen::MatrixXd members = updated.members();
        int resolved = 0;
        for (Eigen::Index n = 0; n < members.cols(); ++n) {
            const auto viol = violates(members.col(n), constraints, violation_tol);
            for (int row : viol.equality) out.report.fractions(row, step) += 1.0;
            for (int row : viol.inequality) {
                out.report.fractions(constraints.eq_rows() + row, step) += 1.0;
            }
            if (!viol.any()) continue;
            ++resolved;
            try {
                members.col(n) =
                    variant == ConstrainedVariant::original_variables
                        ? constrained_update_original(pred.ensemble.member(n), pred.stats, model,
                                                      ys.col(n), constraints)
                        : constrained_update_range(pred.ensemble.member(n), pred.stats, model,
                                                   ys.col(n), constraints);
            } catch (const InfeasibleError& e) {
                throw InfeasibleError(std::string(e.what()) + " (member " + std::to_string(n) +
                                      ", step " + std::to_string(step) + ")");
            }
        }
        out.report.fractions.col(step) /= static_cast<double>(members.cols());
        out.report.resolved_members.push_back(resolved);

        Ensemble constrained(std::move(members));
        out.run.predicted.push_back(std::move(pred.ensemble));
        out.run.observation_perturbations.push_back(ys);
        out.run.analysis.push_back(constrained);
        current = std::move(constrained);
    }
    return out;
}

}  // namespace cekf
