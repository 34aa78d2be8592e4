#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cekf/detail/linalg.hpp"
#include "cekf/ensemble.hpp"
#include "cekf/errors.hpp"
#include "cekf/random.hpp"

namespace cekf {

/// Inverse problem y = G(u) + eta, eta ~ N(0, Gamma): forward map, data and
/// noise covariance, plus the perturbed-observation flag.
struct InverseProblem {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> forward;  // G: R^p -> R^k
    Eigen::VectorXd data;                                            // y
    Eigen::MatrixXd obs_cov;                                         // Gamma, PD
    int perturb_flag = 1;

    Eigen::Index data_dim() const { return data.size(); }

    void validate() const {
        if (!forward) throw ValidationError("InverseProblem: missing forward map");
        if (obs_cov.rows() != data_dim() || obs_cov.cols() != data_dim()) {
            throw ValidationError("InverseProblem: covariance dimension mismatch");
        }
        if (perturb_flag != 0 && perturb_flag != 1) {
            throw ValidationError("InverseProblem: perturb flag must be 0 or 1");
        }
        Eigen::LLT<Eigen::MatrixXd> llt(obs_cov);
        if (llt.info() != Eigen::Success) {
            throw ValidationError("InverseProblem: covariance must be positive definite");
        }
    }
};

/// Block empirical covariances of the lifted vector (u, w) with w = G(u),
/// assembled from one common set of anomalies with the 1/N divisor.
struct BlockStats {
    Eigen::VectorXd u_mean;      // p
    Eigen::VectorXd w_mean;      // k, the mean of the forward evaluations
    Eigen::MatrixXd c_uw;        // p x k
    Eigen::MatrixXd c_ww;        // k x k PSD
    Eigen::MatrixXd c_uu;        // p x p PSD
    Eigen::MatrixXd u_anomalies; // p x N
    Eigen::MatrixXd w_anomalies; // k x N
    double divisor = 0.0;
};

/// Forward evaluations G(u^(n)) as the columns of a k x N matrix;
/// non-finite output is reported with the member index.
inline Eigen::MatrixXd evaluate_forward(const InverseProblem& problem, const Ensemble& u_ensemble,
                                        int iteration = -1) {
    Eigen::MatrixXd out(problem.data_dim(), u_ensemble.size());
    for (Eigen::Index n = 0; n < u_ensemble.size(); ++n) {
        Eigen::VectorXd w;
        try {
            w = problem.forward(u_ensemble.member(n));
        } catch (const Error& e) {
            throw ForwardModelError(std::string(e.what()) + " (member " + std::to_string(n) +
                                    (iteration >= 0 ? ", iteration " + std::to_string(iteration)
                                                    : std::string()) +
                                    ")");
        }
        if (w.size() != problem.data_dim() || !w.allFinite()) {
            throw ForwardModelError("forward map returned non-finite output for member " +
                                    std::to_string(n) +
                                    (iteration >= 0 ? " at iteration " + std::to_string(iteration)
                                                    : std::string()));
        }
        out.col(n) = w;
    }
    return out;
}

inline BlockStats block_stats(const Ensemble& u_ensemble, const Eigen::MatrixXd& evaluations) {
    if (evaluations.cols() != u_ensemble.size()) {
        throw ValidationError("block_stats: evaluation count mismatch");
    }
    if (!evaluations.allFinite()) {
        throw ForwardModelError("block_stats: non-finite forward evaluations");
    }
    BlockStats s;
    s.divisor = static_cast<double>(u_ensemble.size());
    s.u_mean = u_ensemble.members().rowwise().mean();
    s.w_mean = evaluations.rowwise().mean();
    s.u_anomalies = u_ensemble.members().colwise() - s.u_mean;
    s.w_anomalies = evaluations.colwise() - s.w_mean;
    s.c_uw = s.u_anomalies * s.w_anomalies.transpose() / s.divisor;
    s.c_ww = detail::symmetrized(s.w_anomalies * s.w_anomalies.transpose() / s.divisor);
    s.c_uu = detail::symmetrized(s.u_anomalies * s.u_anomalies.transpose() / s.divisor);
    return s;
}

/// Per-member data copies y^(n) for one EKI iteration, drawn from
/// substream (seed, kEkiPerturbation, iteration, n).
inline Eigen::MatrixXd eki_perturb_observations(const InverseProblem& problem, Eigen::Index n,
                                                int iteration, std::uint64_t seed) {
    Eigen::MatrixXd out(problem.data_dim(), n);
    if (problem.perturb_flag == 0) {
        out.colwise() = problem.data;
        return out;
    }
    const Eigen::MatrixXd factor = Eigen::LLT<Eigen::MatrixXd>(problem.obs_cov).matrixL();
    for (Eigen::Index i = 0; i < n; ++i) {
        rng::Stream stream(rng::derive(seed, {rng::kEkiPerturbation,
                                              static_cast<std::uint64_t>(iteration),
                                              static_cast<std::uint64_t>(i)}));
        out.col(i) = problem.data + factor * stream.gaussian_vector(problem.data_dim());
    }
    return out;
}

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> innovation_factor(const BlockStats& s,
                                                     const InverseProblem& problem) {
    Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(s.c_ww + problem.obs_cov));
    if (llt.info() != Eigen::Success) {
        throw NumericalError("eki: C_ww + Gamma not positive definite");
    }
    return llt;
}

}  // namespace detail

/// u^(n) <- u^(n) + C_uw (C_ww + Gamma)^(-1) (y^(n) - G(u^(n))).
inline Ensemble eki_update(const Ensemble& u_ensemble, const Eigen::MatrixXd& evaluations,
                           const BlockStats& stats, const InverseProblem& problem,
                           const Eigen::MatrixXd& perturbed_observations) {
    const auto llt = detail::innovation_factor(stats, problem);
    const Eigen::MatrixXd innovations = perturbed_observations - evaluations;
    return Ensemble(u_ensemble.members() + stats.c_uw * llt.solve(innovations));
}

inline Ensemble eki_update(const Ensemble& u_ensemble, const Eigen::MatrixXd& evaluations,
                           const InverseProblem& problem,
                           const Eigen::MatrixXd& perturbed_observations) {
    return eki_update(u_ensemble, evaluations, block_stats(u_ensemble, evaluations), problem,
                      perturbed_observations);
}

/// w^(n) = G(u^(n)) + C_ww (C_ww + Gamma)^(-1) (y^(n) - G(u^(n))); shares the
/// y^(n) draws with eki_update.
inline Eigen::MatrixXd w_update(const Eigen::MatrixXd& evaluations, const BlockStats& stats,
                                const InverseProblem& problem,
                                const Eigen::MatrixXd& perturbed_observations) {
    const auto llt = detail::innovation_factor(stats, problem);
    const Eigen::MatrixXd innovations = perturbed_observations - evaluations;
    return evaluations + stats.c_ww * llt.solve(innovations);
}

inline Eigen::MatrixXd w_update(const Ensemble& u_ensemble, const Eigen::MatrixXd& evaluations,
                                const InverseProblem& problem,
                                const Eigen::MatrixXd& perturbed_observations) {
    return w_update(evaluations, block_stats(u_ensemble, evaluations), problem,
                    perturbed_observations);
}

/// Iteration history: u-ensembles for j = 0..J and the forward evaluations
/// consumed by each update (j = 0..J-1).
struct EkiHistory {
    std::vector<Ensemble> parameters;
    std::vector<Eigen::MatrixXd> evaluations;
    std::uint64_t seed = 0;
};

inline EkiHistory eki_run(const InverseProblem& problem, const Ensemble& initial, int iterations,
                          std::uint64_t seed) {
    problem.validate();
    if (iterations < 0) throw ValidationError("eki_run: iteration count must be nonnegative");
    EkiHistory history;
    history.seed = seed;
    history.parameters.push_back(initial);
    Ensemble current = initial;
    for (int j = 0; j < iterations; ++j) {
        const Eigen::MatrixXd evals = evaluate_forward(problem, current, j);
        const Eigen::MatrixXd ys = eki_perturb_observations(problem, current.size(), j, seed);
        Ensemble next = eki_update(current, evals, problem, ys);
        history.evaluations.push_back(evals);
        history.parameters.push_back(next);
        current = std::move(next);
    }
    return history;
}

/// Data misfit |y - G(u)|_Gamma of a single parameter vector.
inline double data_misfit(const InverseProblem& problem, const Eigen::VectorXd& evaluation) {
    const Eigen::VectorXd r = problem.data - evaluation;
    return std::sqrt(r.dot(Eigen::LLT<Eigen::MatrixXd>(problem.obs_cov).solve(r)));
}

}  // namespace cekf
