#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "cekf/errors.hpp"
#include "cekf/qp.hpp"

namespace cekf {

/// Linear constraints F v = f, G v <= g on a d-dimensional vector. Either
/// block may be empty. The feasible set is certified nonempty at
/// construction; an empty set throws InfeasibleError.
class LinearConstraints {
public:
    LinearConstraints(Eigen::MatrixXd equality_matrix, Eigen::VectorXd equality_rhs,
                      Eigen::MatrixXd inequality_matrix, Eigen::VectorXd inequality_rhs)
        : F_(std::move(equality_matrix)),
          f_(std::move(equality_rhs)),
          G_(std::move(inequality_matrix)),
          g_(std::move(inequality_rhs)) {
        if (F_.rows() != f_.size() || G_.rows() != g_.size()) {
            throw ValidationError("LinearConstraints: row counts do not match right-hand sides");
        }
        if (F_.rows() == 0 && G_.rows() == 0) {
            throw ValidationError("LinearConstraints: both blocks empty");
        }
        if (F_.rows() > 0 && G_.rows() > 0 && F_.cols() != G_.cols()) {
            throw ValidationError("LinearConstraints: F and G disagree on dimension");
        }
        if (!F_.allFinite() || !f_.allFinite() || !G_.allFinite() || !g_.allFinite()) {
            throw ValidationError("LinearConstraints: non-finite entries");
        }
        const Eigen::Index d = dim();
        if (F_.rows() == 0) F_.resize(0, d);
        if (G_.rows() == 0) G_.resize(0, d);
        if (!qp::find_feasible_point(F_, f_, G_, g_)) {
            throw InfeasibleError("LinearConstraints: feasible set is empty");
        }
    }

    /// Componentwise box lower <= v <= upper as inequality rows
    /// (-I; I) v <= (-lower; upper). Non-finite bound entries are skipped.
    static LinearConstraints bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
        if (lower.size() != upper.size()) {
            throw ValidationError("LinearConstraints::bounds: bound lengths differ");
        }
        const Eigen::Index d = lower.size();
        std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (std::isfinite(lower[i])) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(d);
                r[i] = -1.0;
                rows.emplace_back(r, -lower[i]);
            }
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            if (std::isfinite(upper[i])) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(d);
                r[i] = 1.0;
                rows.emplace_back(r, upper[i]);
            }
        }
        Eigen::MatrixXd g_mat(static_cast<Eigen::Index>(rows.size()), d);
        Eigen::VectorXd g_vec(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            g_mat.row(static_cast<Eigen::Index>(i)) = rows[i].first;
            g_vec[static_cast<Eigen::Index>(i)] = rows[i].second;
        }
        return LinearConstraints(Eigen::MatrixXd(0, d), Eigen::VectorXd(0), std::move(g_mat),
                                 std::move(g_vec));
    }

    Eigen::Index dim() const { return F_.rows() > 0 ? F_.cols() : G_.cols(); }
    Eigen::Index eq_rows() const { return F_.rows(); }
    Eigen::Index in_rows() const { return G_.rows(); }
    const Eigen::MatrixXd& F() const { return F_; }
    const Eigen::VectorXd& f() const { return f_; }
    const Eigen::MatrixXd& G() const { return G_; }
    const Eigen::VectorXd& g() const { return g_; }

private:
    Eigen::MatrixXd F_;
    Eigen::VectorXd f_;
    Eigen::MatrixXd G_;
    Eigen::VectorXd g_;
};

/// Rows violated by a vector. Row tolerances scale as tol * (1 + |rhs_i|).
struct ViolatedRows {
    std::vector<int> equality;
    std::vector<int> inequality;
    bool any() const { return !equality.empty() || !inequality.empty(); }
};

inline ViolatedRows violates(const Eigen::VectorXd& v, const LinearConstraints& constraints,
                             double tol = 1e-9) {
    if (tol < 0.0) throw ValidationError("violates: tol must be nonnegative");
    if (v.size() != constraints.dim()) throw ValidationError("violates: dimension mismatch");
    ViolatedRows out;
    if (constraints.eq_rows() > 0) {
        const Eigen::VectorXd r = constraints.F() * v - constraints.f();
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            if (std::abs(r[i]) > tol * (1.0 + std::abs(constraints.f()[i]))) {
                out.equality.push_back(static_cast<int>(i));
            }
        }
    }
    if (constraints.in_rows() > 0) {
        const Eigen::VectorXd r = constraints.G() * v - constraints.g();
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            if (r[i] > tol * (1.0 + std::abs(constraints.g()[i]))) {
                out.inequality.push_back(static_cast<int>(i));
            }
        }
    }
    return out;
}

/// Per-step, per-constraint-row fraction of members violating before the
/// constrained re-solve, plus the count of members re-solved. Row order is
/// all equality rows, then all inequality rows.
struct ViolationReport {
    Eigen::Index eq_rows = 0;
    Eigen::Index in_rows = 0;
    Eigen::MatrixXd fractions;  // (eq_rows + in_rows) x steps
    std::vector<int> resolved_members;

    Eigen::Index steps() const { return fractions.cols(); }

    /// CSV with one row per constraint and one column per step.
    std::string to_csv() const {
        std::string out = "constraint";
        for (Eigen::Index s = 0; s < steps(); ++s) {
            out += ",step_" + std::to_string(s);
        }
        out += "\n";
        char buf[64];
        for (Eigen::Index r = 0; r < fractions.rows(); ++r) {
            out += r < eq_rows ? "eq_" + std::to_string(r)
                               : "in_" + std::to_string(r - eq_rows);
            for (Eigen::Index s = 0; s < steps(); ++s) {
                std::snprintf(buf, sizeof(buf), ",%.17g", fractions(r, s));
                out += buf;
            }
            out += "\n";
        }
        return out;
    }
};

}  // namespace cekf
