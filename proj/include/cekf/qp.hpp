#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cekf/detail/linalg.hpp"
#include "cekf/errors.hpp"

namespace cekf::qp {

/// minimize 1/2 x^T P x + q^T x
/// subject to A_eq x = b_eq, A_in x <= b_in (componentwise).
/// Either constraint block may be empty (0 x n).
struct QuadraticProgram {
    Eigen::MatrixXd P;     // n x n symmetric PSD
    Eigen::VectorXd q;     // n
    Eigen::MatrixXd A_eq;  // m_e x n
    Eigen::VectorXd b_eq;  // m_e
    Eigen::MatrixXd A_in;  // m_i x n
    Eigen::VectorXd b_in;  // m_i

    Eigen::Index vars() const { return q.size(); }
    Eigen::Index eq_count() const { return b_eq.size(); }
    Eigen::Index in_count() const { return b_in.size(); }

    void validate() const {
        const Eigen::Index n = vars();
        if (P.rows() != n || P.cols() != n) throw ValidationError("qp: P must be n x n");
        const double scale = std::max(P.cwiseAbs().maxCoeff(), 1.0);
        if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw ValidationError("qp: P must be symmetric");
        }
        if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n)) {
            throw ValidationError("qp: equality block dimensions inconsistent");
        }
        if (A_in.rows() != b_in.size() || (A_in.rows() > 0 && A_in.cols() != n)) {
            throw ValidationError("qp: inequality block dimensions inconsistent");
        }
        if (!P.allFinite() || !q.allFinite() || !A_eq.allFinite() || !b_eq.allFinite() ||
            !A_in.allFinite() || !b_in.allFinite()) {
            throw ValidationError("qp: non-finite entries");
        }
    }

    double objective(const Eigen::VectorXd& x) const {
        return 0.5 * x.dot(P * x) + q.dot(x);
    }
};

enum class QpStatus { optimal, infeasible, unbounded, max_iterations };

inline const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::optimal: return "optimal";
        case QpStatus::infeasible: return "infeasible";
        case QpStatus::unbounded: return "unbounded";
        case QpStatus::max_iterations: return "max_iterations";
    }
    return "unknown";
}

struct QpSolution {
    Eigen::VectorXd x;
    Eigen::VectorXd eq_multipliers;  // m_e
    Eigen::VectorXd in_multipliers;  // m_i, nonnegative at optimality
    QpStatus status = QpStatus::max_iterations;
    double kkt_residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

struct QpOptions {
    double tol = 1e-9;
    int max_iter = 0;  // 0 means 100 * (n + m_i)
    std::optional<Eigen::VectorXd> warm_start;
};

/// Max of stationarity norm, primal infeasibility, negative-multiplier
/// magnitude and complementarity violation.
inline double kkt_residual(const QuadraticProgram& qp, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& eq_multipliers,
                           const Eigen::VectorXd& in_multipliers) {
    Eigen::VectorXd stat = qp.P * x + qp.q;
    if (qp.eq_count() > 0) stat += qp.A_eq.transpose() * eq_multipliers;
    if (qp.in_count() > 0) stat += qp.A_in.transpose() * in_multipliers;
    double r = stat.norm();
    if (qp.eq_count() > 0) {
        r = std::max(r, (qp.A_eq * x - qp.b_eq).cwiseAbs().maxCoeff());
    }
    if (qp.in_count() > 0) {
        const Eigen::VectorXd slack = qp.b_in - qp.A_in * x;
        r = std::max(r, std::max(0.0, -slack.minCoeff()));
        r = std::max(r, std::max(0.0, -in_multipliers.minCoeff()));
        r = std::max(r, (in_multipliers.array() * slack.array()).abs().maxCoeff());
    }
    return r;
}

namespace detail {

using cekf::detail::null_space_basis;

struct ActiveSetResult {
    Eigen::VectorXd x;
    Eigen::VectorXd nu;            // multipliers for [A_eq; A_in(working)]
    std::vector<int> working;      // inequality row indices, sorted
    QpStatus status = QpStatus::max_iterations;
    int iterations = 0;
};

inline Eigen::MatrixXd stack_working(const Eigen::MatrixXd& A_eq, const Eigen::MatrixXd& A_in,
                                     const std::vector<int>& working) {
    const Eigen::Index n = std::max(A_eq.cols(), A_in.cols());
    Eigen::MatrixXd a(A_eq.rows() + static_cast<Eigen::Index>(working.size()), n);
    a.topRows(A_eq.rows()) = A_eq;
    for (std::size_t i = 0; i < working.size(); ++i) {
        a.row(A_eq.rows() + static_cast<Eigen::Index>(i)) = A_in.row(working[i]);
    }
    return a;
}

/// Primal active-set loop for
///   min 1/2 x^T P x + q^T x  s.t.  A_eq x = b_eq (pinned), A_in x <= b_in,
/// starting from a feasible x0. The working set holds inequality rows only;
/// equality rows are always active. P is regularized by reg inside the step
/// computation only.
inline ActiveSetResult active_set_loop(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                                       const Eigen::MatrixXd& A_eq, const Eigen::MatrixXd& A_in,
                                       const Eigen::VectorXd& b_in, const Eigen::VectorXd& x0,
                                       double tol, int max_iter) {
    const Eigen::Index n = q.size();
    const Eigen::Index m_i = b_in.size();
    const double reg = n > 0 ? 1e-12 * P.trace() / static_cast<double>(n) : 0.0;

    ActiveSetResult res;
    res.x = x0;

    // Start with the active rows at x0, added greedily while independent.
    {
        Eigen::MatrixXd abar = A_eq;
        for (int i = 0; i < m_i; ++i) {
            const double row_scale = std::max(A_in.row(i).cwiseAbs().maxCoeff(), 1.0);
            const double resid = A_in.row(i).dot(x0) - b_in[i];
            if (std::abs(resid) <= 1e-10 * row_scale * (1.0 + std::abs(b_in[i]))) {
                Eigen::MatrixXd cand(abar.rows() + 1, n);
                cand << abar, A_in.row(i);
                Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cand.transpose());
                if (qr.rank() == cand.rows()) {
                    abar = std::move(cand);
                    res.working.push_back(i);
                }
            }
        }
    }

    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        const Eigen::MatrixXd abar = stack_working(A_eq, A_in, res.working);
        const Eigen::MatrixXd z = null_space_basis(abar);
        const Eigen::VectorXd g = P * res.x + q;

        Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
        bool ray = false;  // direction of zero curvature and strict descent
        if (z.cols() > 0) {
            const Eigen::VectorXd rg = z.transpose() * g;
            Eigen::MatrixXd h = z.transpose() * P * z;
            h.diagonal().array() += reg;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cekf::detail::symmetrized(h));
            if (es.info() != Eigen::Success) throw NumericalError("qp: reduced Hessian eigensolve failed");
            const Eigen::VectorXd& lam = es.eigenvalues();
            const double lam_max = std::max(lam.cwiseAbs().maxCoeff(), 0.0);
            const double curv_cut = std::max(1e-11 * lam_max, 1e-300);

            Eigen::VectorXd step_z = Eigen::VectorXd::Zero(z.cols());
            Eigen::VectorXd flat_grad = rg;
            for (Eigen::Index i = 0; i < lam.size(); ++i) {
                if (lam[i] > curv_cut) {
                    const Eigen::VectorXd v = es.eigenvectors().col(i);
                    const double c = v.dot(rg);
                    step_z -= (c / lam[i]) * v;
                    flat_grad -= c * v;
                }
            }
            if (flat_grad.norm() > tol * (1.0 + g.norm())) {
                p = -z * flat_grad.normalized();
                ray = true;
            } else {
                p = z * step_z;
            }
        }

        if (!ray && p.norm() <= tol * (1.0 + res.x.norm())) {
            // Stationary on the working set: examine multipliers.
            const Eigen::MatrixXd abar_t = abar.transpose();
            Eigen::VectorXd nu;
            if (abar.rows() > 0) {
                nu = abar_t.completeOrthogonalDecomposition().solve(-g);
            } else {
                nu.resize(0);
            }
            double worst = 0.0;
            int worst_pos = -1;
            for (std::size_t i = 0; i < res.working.size(); ++i) {
                const double mu = nu[A_eq.rows() + static_cast<Eigen::Index>(i)];
                if (mu < worst - 1e-15) {
                    worst = mu;
                    worst_pos = static_cast<int>(i);
                }
            }
            const double mu_tol = tol * (1.0 + (nu.size() > 0 ? nu.cwiseAbs().maxCoeff() : 0.0));
            if (worst_pos < 0 || worst >= -mu_tol) {
                res.nu = std::move(nu);
                res.status = QpStatus::optimal;
                return res;
            }
            res.working.erase(res.working.begin() + worst_pos);
            continue;
        }

        // Ratio test over rows not in the working set.
        double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
        int blocker = -1;
        for (int i = 0; i < m_i; ++i) {
            if (std::find(res.working.begin(), res.working.end(), i) != res.working.end()) continue;
            const double dir = A_in.row(i).dot(p);
            const double dir_cut = 1e-13 * (A_in.row(i).norm() * p.norm() + 1e-300);
            if (dir <= dir_cut) continue;
            const double a_i = std::max(0.0, (b_in[i] - A_in.row(i).dot(res.x)) / dir);
            if (a_i < alpha - 1e-15 * std::max(1.0, alpha)) {
                alpha = a_i;
                blocker = i;  // smallest alpha; ties keep the smallest index
            }
        }
        if (ray && blocker < 0) {
            res.status = QpStatus::unbounded;
            return res;
        }
        res.x += alpha * p;
        if (blocker >= 0) {
            res.working.push_back(blocker);
            std::sort(res.working.begin(), res.working.end());
        }
    }
    res.status = QpStatus::max_iterations;
    return res;
}

}  // namespace detail

/// Phase-1: a point satisfying A_eq x = b_eq and A_in x <= b_in, or nullopt.
/// Equalities are eliminated by least squares plus a null-space
/// parameterization; the inequality system is then attacked by minimizing the
/// worst violation t (plus a tiny quadratic term that keeps the subproblem
/// strictly convex and, when a reference point is given, biases the feasible
/// point towards it).
inline std::optional<Eigen::VectorXd> find_feasible_point(
    const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, const Eigen::MatrixXd& A_in,
    const Eigen::VectorXd& b_in, double feas_tol = 1e-9,
    const std::optional<Eigen::VectorXd>& reference = std::nullopt) {
    const Eigen::Index n = std::max(A_eq.cols(), A_in.cols());
    if (n == 0) return Eigen::VectorXd();

    Eigen::VectorXd x_base = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd z = Eigen::MatrixXd::Identity(n, n);
    if (A_eq.rows() > 0) {
        x_base = A_eq.completeOrthogonalDecomposition().solve(b_eq);
        const double resid = (A_eq * x_base - b_eq).cwiseAbs().maxCoeff();
        if (resid > feas_tol * (1.0 + b_eq.cwiseAbs().maxCoeff())) return std::nullopt;
        z = detail::null_space_basis(A_eq);
    }

    const auto feasible_at = [&](const Eigen::VectorXd& x) {
        if (A_in.rows() == 0) return true;
        const Eigen::VectorXd viol = A_in * x - b_in;
        for (Eigen::Index i = 0; i < viol.size(); ++i) {
            if (viol[i] > feas_tol * (1.0 + std::abs(b_in[i]))) return false;
        }
        return true;
    };

    if (feasible_at(x_base)) return x_base;
    if (z.cols() == 0) return std::nullopt;

    // Reduced inequalities: At zt <= bt, with zt in R^{nz} and a worst-violation
    // variable appended.
    const Eigen::Index nz = z.cols();
    Eigen::VectorXd z_ref = Eigen::VectorXd::Zero(nz);
    if (reference && reference->size() == n) {
        z_ref = z.transpose() * (*reference - x_base);
    }
    const Eigen::MatrixXd at = A_in * z;
    const Eigen::VectorXd bt = b_in - A_in * x_base;

    const double delta = 1e-8;
    Eigen::MatrixXd p1 = delta * Eigen::MatrixXd::Identity(nz + 1, nz + 1);
    Eigen::VectorXd q1 = Eigen::VectorXd::Zero(nz + 1);
    q1.head(nz) = -delta * z_ref;
    q1[nz] = 1.0;

    Eigen::MatrixXd a1(at.rows() + 1, nz + 1);
    a1.setZero();
    a1.topLeftCorner(at.rows(), nz) = at;
    a1.col(nz).head(at.rows()).setConstant(-1.0);
    a1(at.rows(), nz) = -1.0;  // t >= -1 keeps the subproblem bounded
    Eigen::VectorXd b1(at.rows() + 1);
    b1.head(at.rows()) = bt;
    b1[at.rows()] = 1.0;

    const double t0 = std::max(0.0, (at * z_ref - bt).maxCoeff()) * (1.0 + 1e-6) + 1e-3;
    Eigen::VectorXd start(nz + 1);
    start.head(nz) = z_ref;
    start[nz] = t0;

    const int max_iter = 100 * static_cast<int>(nz + 1 + a1.rows());
    const auto r = detail::active_set_loop(p1, q1, Eigen::MatrixXd(0, nz + 1), a1, b1, start,
                                           1e-10, max_iter);
    const Eigen::VectorXd candidate = x_base + z * r.x.head(nz);
    if (feasible_at(candidate)) return candidate;
    return std::nullopt;
}

/// Dense convex QP solve by the primal active-set method. status=optimal
/// guarantees kkt_residual <= tol.
///
/// The problem is equilibrated internally (objective normalized, constraint
/// rows scaled to unit size); x is unaffected, multipliers are mapped back,
/// and the reported kkt_residual refers to the equilibrated problem. The
/// free function kkt_residual() evaluates raw residuals.
inline QpSolution solve(const QuadraticProgram& qp_raw, const QpOptions& options = {}) {
    qp_raw.validate();
    if (options.tol <= 0.0) throw ValidationError("qp: tol must be positive");
    const Eigen::Index n = qp_raw.vars();

    const double obj_scale =
        std::max({qp_raw.P.size() > 0 ? qp_raw.P.cwiseAbs().maxCoeff() : 0.0,
                  qp_raw.q.size() > 0 ? qp_raw.q.cwiseAbs().maxCoeff() : 0.0, 1e-300});
    QuadraticProgram qp = qp_raw;
    qp.P /= obj_scale;
    qp.q /= obj_scale;
    Eigen::VectorXd eq_row_scale(qp.eq_count());
    for (Eigen::Index i = 0; i < qp.eq_count(); ++i) {
        eq_row_scale[i] = std::max(qp.A_eq.row(i).cwiseAbs().maxCoeff(), 1e-300);
        qp.A_eq.row(i) /= eq_row_scale[i];
        qp.b_eq[i] /= eq_row_scale[i];
    }
    Eigen::VectorXd in_row_scale(qp.in_count());
    for (Eigen::Index i = 0; i < qp.in_count(); ++i) {
        in_row_scale[i] = std::max(qp.A_in.row(i).cwiseAbs().maxCoeff(), 1e-300);
        qp.A_in.row(i) /= in_row_scale[i];
        qp.b_in[i] /= in_row_scale[i];
    }

    const Eigen::MatrixXd p_sym = cekf::detail::symmetrized(qp.P);
    const int max_iter = options.max_iter > 0
                             ? options.max_iter
                             : 100 * static_cast<int>(n + qp.in_count());

    QpSolution sol;
    sol.eq_multipliers = Eigen::VectorXd::Zero(qp.eq_count());
    sol.in_multipliers = Eigen::VectorXd::Zero(qp.in_count());

    // Phase 1.
    Eigen::VectorXd x0;
    if (options.warm_start && options.warm_start->size() == n) {
        bool ok = qp.eq_count() == 0 ||
                  (qp.A_eq * *options.warm_start - qp.b_eq).cwiseAbs().maxCoeff() <=
                      1e-9 * (1.0 + qp.b_eq.cwiseAbs().maxCoeff());
        if (ok && qp.in_count() > 0) {
            const Eigen::VectorXd viol = qp.A_in * *options.warm_start - qp.b_in;
            for (Eigen::Index i = 0; i < viol.size() && ok; ++i) {
                ok = viol[i] <= 1e-9 * (1.0 + std::abs(qp.b_in[i]));
            }
        }
        if (ok) x0 = *options.warm_start;
    }
    if (x0.size() == 0) {
        const auto feasible =
            find_feasible_point(qp.A_eq, qp.b_eq, qp.A_in, qp.b_in, 1e-9, options.warm_start);
        if (!feasible) {
            sol.status = QpStatus::infeasible;
            sol.x = Eigen::VectorXd::Zero(n);
            return sol;
        }
        x0 = *feasible;
    }

    auto r = detail::active_set_loop(p_sym, qp.q, qp.A_eq, qp.A_in, qp.b_in, x0, options.tol,
                                     max_iter);
    sol.iterations = r.iterations;
    sol.x = r.x;

    const auto fill_multipliers = [&](const Eigen::VectorXd& nu, const std::vector<int>& working) {
        sol.eq_multipliers = nu.size() >= qp.eq_count() ? nu.head(qp.eq_count()).eval()
                                                        : Eigen::VectorXd::Zero(qp.eq_count());
        sol.in_multipliers.setZero();
        for (std::size_t i = 0; i < working.size(); ++i) {
            const double mu = nu[qp.eq_count() + static_cast<Eigen::Index>(i)];
            sol.in_multipliers[working[i]] = std::max(mu, 0.0);
        }
    };

    // Multipliers of the equilibrated problem map back through the scales.
    const auto unscale_multipliers = [&] {
        for (Eigen::Index i = 0; i < qp.eq_count(); ++i) {
            sol.eq_multipliers[i] *= obj_scale / eq_row_scale[i];
        }
        for (Eigen::Index i = 0; i < qp.in_count(); ++i) {
            sol.in_multipliers[i] *= obj_scale / in_row_scale[i];
        }
    };

    if (r.status == QpStatus::unbounded) {
        sol.status = QpStatus::unbounded;
        return sol;
    }

    if (r.status == QpStatus::optimal) {
        // Polish: exact equality-constrained solve on the final working set,
        // removing the regularization error of the in-loop steps.
        const Eigen::MatrixXd abar = detail::stack_working(qp.A_eq, qp.A_in, r.working);
        const Eigen::Index m = abar.rows();
        Eigen::MatrixXd kkt(n + m, n + m);
        kkt.setZero();
        kkt.topLeftCorner(n, n) = p_sym;
        kkt.topRightCorner(n, m) = abar.transpose();
        kkt.bottomLeftCorner(m, n) = abar;
        Eigen::VectorXd rhs(n + m);
        rhs.head(n) = -qp.q;
        rhs.segment(n, qp.eq_count()) = qp.b_eq;
        for (std::size_t i = 0; i < r.working.size(); ++i) {
            rhs[n + qp.eq_count() + static_cast<Eigen::Index>(i)] = qp.b_in[r.working[i]];
        }
        const Eigen::VectorXd polished = kkt.completeOrthogonalDecomposition().solve(rhs);
        const double sys_resid = (kkt * polished - rhs).cwiseAbs().maxCoeff();
        if (sys_resid <= 1e-8 * (1.0 + rhs.cwiseAbs().maxCoeff())) {
            const Eigen::VectorXd x_p = polished.head(n);
            bool ok = qp.in_count() == 0;
            if (!ok) {
                const Eigen::VectorXd viol = qp.A_in * x_p - qp.b_in;
                ok = true;
                for (Eigen::Index i = 0; i < viol.size(); ++i) {
                    if (viol[i] > options.tol * (1.0 + std::abs(qp.b_in[i]))) ok = false;
                }
            }
            if (ok) {
                sol.x = x_p;
                fill_multipliers(polished.tail(m), r.working);
            } else {
                fill_multipliers(r.nu, r.working);
            }
        } else {
            fill_multipliers(r.nu, r.working);
        }
        sol.kkt_residual = kkt_residual(qp, sol.x, sol.eq_multipliers, sol.in_multipliers);
        sol.status = sol.kkt_residual <= options.tol ? QpStatus::optimal : QpStatus::max_iterations;
        unscale_multipliers();
        return sol;
    }

    // Iteration cap: report the best iterate with whatever multipliers we have.
    fill_multipliers(r.nu.size() > 0 ? r.nu
                                     : Eigen::VectorXd::Zero(qp.eq_count() +
                                                             static_cast<Eigen::Index>(r.working.size())),
                     r.working);
    sol.kkt_residual = kkt_residual(qp, sol.x, sol.eq_multipliers, sol.in_multipliers);
    sol.status = QpStatus::max_iterations;
    unscale_multipliers();
    return sol;
}

/// Test oracle: enumerate every active set of inequality rows, solve the
/// corresponding equality-constrained KKT system, and return the best
/// feasible candidate with nonnegative multipliers. Exponential in m_i.
inline QpSolution brute_force_solve(const QuadraticProgram& qp, double tol = 1e-8) {
    qp.validate();
    const Eigen::Index n = qp.vars();
    const Eigen::Index m_i = qp.in_count();
    if (m_i > 20) throw ValidationError("brute_force_solve: too many inequality rows");
    const Eigen::MatrixXd p_sym = cekf::detail::symmetrized(qp.P);

    QpSolution best;
    best.status = QpStatus::infeasible;
    best.x = Eigen::VectorXd::Zero(n);
    best.eq_multipliers = Eigen::VectorXd::Zero(qp.eq_count());
    best.in_multipliers = Eigen::VectorXd::Zero(m_i);
    double best_obj = std::numeric_limits<double>::infinity();

    const double b_scale =
        1.0 + std::max(qp.b_in.size() > 0 ? qp.b_in.cwiseAbs().maxCoeff() : 0.0,
                       qp.b_eq.size() > 0 ? qp.b_eq.cwiseAbs().maxCoeff() : 0.0);

    for (std::uint64_t mask = 0; mask < (1ULL << m_i); ++mask) {
        std::vector<int> active;
        for (Eigen::Index i = 0; i < m_i; ++i) {
            if (mask & (1ULL << i)) active.push_back(static_cast<int>(i));
        }
        const Eigen::MatrixXd abar = detail::stack_working(qp.A_eq, qp.A_in, active);
        const Eigen::Index m = abar.rows();

        Eigen::MatrixXd kkt(n + m, n + m);
        kkt.setZero();
        kkt.topLeftCorner(n, n) = p_sym;
        kkt.topRightCorner(n, m) = abar.transpose();
        kkt.bottomLeftCorner(m, n) = abar;
        Eigen::VectorXd rhs(n + m);
        rhs.head(n) = -qp.q;
        rhs.segment(n, qp.eq_count()) = qp.b_eq;
        for (std::size_t i = 0; i < active.size(); ++i) {
            rhs[n + qp.eq_count() + static_cast<Eigen::Index>(i)] = qp.b_in[active[i]];
        }

        const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
        if ((kkt * sol - rhs).cwiseAbs().maxCoeff() > tol * (1.0 + rhs.cwiseAbs().maxCoeff())) {
            continue;  // inconsistent active set
        }
        const Eigen::VectorXd x = sol.head(n);
        const Eigen::VectorXd nu = sol.tail(m);

        bool ok = true;
        if (qp.eq_count() > 0) {
            ok = (qp.A_eq * x - qp.b_eq).cwiseAbs().maxCoeff() <= tol * b_scale;
        }
        for (Eigen::Index i = 0; i < m_i && ok; ++i) {
            ok = qp.A_in.row(i).dot(x) <= qp.b_in[i] + tol * (1.0 + std::abs(qp.b_in[i]));
        }
        const double mu_scale = 1.0 + (nu.size() > 0 ? nu.cwiseAbs().maxCoeff() : 0.0);
        for (std::size_t i = 0; i < active.size() && ok; ++i) {
            ok = nu[qp.eq_count() + static_cast<Eigen::Index>(i)] >= -tol * mu_scale;
        }
        if (!ok) continue;

        const double obj = qp.objective(x);
        if (best.status != QpStatus::optimal || obj < best_obj - 1e-12 * (1.0 + std::abs(best_obj))) {
            best_obj = obj;
            best.x = x;
            best.eq_multipliers = nu.head(qp.eq_count());
            best.in_multipliers.setZero();
            for (std::size_t i = 0; i < active.size(); ++i) {
                best.in_multipliers[active[i]] =
                    std::max(nu[qp.eq_count() + static_cast<Eigen::Index>(i)], 0.0);
            }
            best.status = QpStatus::optimal;
        }
    }
    if (best.status == QpStatus::optimal) {
        best.kkt_residual = kkt_residual(qp, best.x, best.eq_multipliers, best.in_multipliers);
    }
    return best;
}

}  // namespace cekf::qp
