#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cekf/detail/linalg.hpp"
#include "cekf/ensemble.hpp"
#include "cekf/errors.hpp"
#include "cekf/random.hpp"

namespace cekf {

/// Discrete-time model: state transition family Psi_j, linear observation
/// operator H, process covariance Sigma (PSD), observation covariance Gamma
/// (PD) and the perturbed-observation flag s.
struct FilterModel {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)> transition;  // Psi_j(v)
    Eigen::MatrixXd obs_operator;  // H: k x d
    Eigen::MatrixXd process_cov;   // Sigma: d x d
    Eigen::MatrixXd obs_cov;       // Gamma: k x k
    int perturb_flag = 1;          // s in {0, 1}

    Eigen::Index state_dim() const { return obs_operator.cols(); }
    Eigen::Index obs_dim() const { return obs_operator.rows(); }

    void validate() const {
        if (!transition) throw ValidationError("FilterModel: missing transition map");
        if (perturb_flag != 0 && perturb_flag != 1) {
            throw ValidationError("FilterModel: perturb flag must be 0 or 1");
        }
        if (process_cov.rows() != state_dim() || process_cov.cols() != state_dim()) {
            throw ValidationError("FilterModel: process covariance dimension mismatch");
        }
        if (obs_cov.rows() != obs_dim() || obs_cov.cols() != obs_dim()) {
            throw ValidationError("FilterModel: observation covariance dimension mismatch");
        }
        Eigen::LLT<Eigen::MatrixXd> llt(obs_cov);
        if (llt.info() != Eigen::Success) {
            throw ValidationError("FilterModel: observation covariance must be positive definite");
        }
        detail::psd_factor(process_cov);  // throws if not PSD
    }

    /// Autonomous dynamics wrapped as a constant family.
    static std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)> autonomous(
        std::function<Eigen::VectorXd(const Eigen::VectorXd&)> psi) {
        return [psi = std::move(psi)](const Eigen::VectorXd& v, int) { return psi(v); };
    }
};

enum class UpdateVariant { gain, range };

/// Everything a filter run produced, step by step.
struct FilterRun {
    std::vector<Ensemble> predicted;
    std::vector<Ensemble> analysis;
    std::vector<Eigen::MatrixXd> observation_perturbations;  // k x N per step, y^(n) columns
    std::uint64_t seed = 0;
};

struct Prediction {
    Ensemble ensemble;
    EnsembleStats stats;
};

/// Prediction step: v_hat^(n) = Psi_j(v^(n)) + xi^(n), xi ~ N(0, Sigma).
/// Noise for member n comes from substream (seed, kProcessNoise, step, n).
inline Prediction predict(const Ensemble& ensemble, const FilterModel& model, int step,
                          std::uint64_t seed) {
    const Eigen::Index n = ensemble.size();
    const Eigen::Index d = ensemble.dim();
    const bool has_noise = model.process_cov.cwiseAbs().maxCoeff() > 0.0;
    const Eigen::MatrixXd noise_factor =
        has_noise ? detail::psd_factor(model.process_cov) : Eigen::MatrixXd();

    Eigen::MatrixXd out(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd mapped = model.transition(ensemble.member(i), step);
        if (mapped.size() != d || !mapped.allFinite()) {
            throw ForwardModelError("predict: transition map failed for member " +
                                    std::to_string(i) + " at step " + std::to_string(step));
        }
        if (has_noise) {
            rng::Stream stream(rng::derive(seed, {rng::kProcessNoise,
                                                  static_cast<std::uint64_t>(step),
                                                  static_cast<std::uint64_t>(i)}));
            mapped += noise_factor * stream.gaussian_vector(d);
        }
        out.col(i) = mapped;
    }
    Ensemble predicted(std::move(out));
    EnsembleStats stats = compute_stats(predicted);
    return {std::move(predicted), std::move(stats)};
}

/// Per-member data copies y^(n) = y + s * eta^(n), eta ~ N(0, Gamma), as the
/// columns of a k x N matrix. Member n draws from substream
/// (seed, kObsPerturbation, step, n).
inline Eigen::MatrixXd perturb_observations(const Eigen::VectorXd& y, const FilterModel& model,
                                            Eigen::Index n, int step, std::uint64_t seed) {
    const Eigen::Index k = y.size();
    Eigen::MatrixXd out(k, n);
    if (model.perturb_flag == 0) {
        out.colwise() = y;
        return out;
    }
    const Eigen::MatrixXd factor = Eigen::LLT<Eigen::MatrixXd>(model.obs_cov).matrixL();
    for (Eigen::Index i = 0; i < n; ++i) {
        rng::Stream stream(rng::derive(seed, {rng::kObsPerturbation,
                                              static_cast<std::uint64_t>(step),
                                              static_cast<std::uint64_t>(i)}));
        out.col(i) = y + factor * stream.gaussian_vector(k);
    }
    return out;
}

/// Kalman gain K = C H^T (H C H^T + Gamma)^(-1), solved in data space.
inline Eigen::MatrixXd kalman_gain(const EnsembleStats& stats, const FilterModel& model) {
    const Eigen::MatrixXd& h = model.obs_operator;
    const Eigen::MatrixXd cht = stats.covariance * h.transpose();
    const Eigen::MatrixXd s = detail::symmetrized(h * cht + model.obs_cov);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("kalman_gain: innovation covariance not positive definite");
    }
    return llt.solve(cht.transpose()).transpose();
}

/// The state-space form K = C (H^T Gamma^(-1) H C + I)^(-1) H^T Gamma^(-1),
/// used to verify the gain identity numerically.
inline Eigen::MatrixXd kalman_gain_alternative(const EnsembleStats& stats,
                                               const FilterModel& model) {
    const Eigen::Index d = stats.dim();
    const Eigen::MatrixXd& h = model.obs_operator;
    const Eigen::MatrixXd ht_gi = Eigen::LLT<Eigen::MatrixXd>(model.obs_cov)
                                      .solve(h)
                                      .transpose();  // H^T Gamma^{-1}
    const Eigen::MatrixXd m = ht_gi * h * stats.covariance + Eigen::MatrixXd::Identity(d, d);
    return stats.covariance * Eigen::PartialPivLU<Eigen::MatrixXd>(m).solve(ht_gi);
}

/// Gain-based analysis: v^(n) = (I - K H) v_hat^(n) + K y^(n).
inline Ensemble analysis_update(const Ensemble& predicted, const EnsembleStats& stats,
                                const FilterModel& model,
                                const Eigen::MatrixXd& perturbed_observations) {
    if (perturbed_observations.cols() != predicted.size() ||
        perturbed_observations.rows() != model.obs_dim()) {
        throw ValidationError("analysis_update: perturbed observation shape mismatch");
    }
    const Eigen::MatrixXd k = kalman_gain(stats, model);
    const Eigen::MatrixXd innovations =
        perturbed_observations - model.obs_operator * predicted.members();
    return Ensemble(predicted.members() + k * innovations);
}

/// Analysis by minimizing J(b) = 1/2 |y^(n) - H v_hat^(n) - H B b|^2_Gamma
/// + (1/2N) |b|^2 over b in R^N and reconstructing v = v_hat + B b. Agrees
/// with the gain form for shared observation draws.
inline Ensemble range_update(const Ensemble& predicted, const EnsembleStats& stats,
                             const FilterModel& model,
                             const Eigen::MatrixXd& perturbed_observations) {
    if (perturbed_observations.cols() != predicted.size()) {
        throw ValidationError("range_update: perturbed observation shape mismatch");
    }
    const Eigen::Index n = predicted.size();
    const Eigen::MatrixXd hb = model.obs_operator * stats.anomalies / stats.divisor;  // k x N
    const Eigen::LLT<Eigen::MatrixXd> gamma(model.obs_cov);
    const Eigen::MatrixXd gi_hb = gamma.solve(hb);
    const Eigen::MatrixXd p = detail::symmetrized(hb.transpose() * gi_hb) +
                              Eigen::MatrixXd::Identity(n, n) / stats.divisor;
    const Eigen::LLT<Eigen::MatrixXd> p_llt(p);

    Eigen::MatrixXd out = predicted.members();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd misfit =
            perturbed_observations.col(i) - model.obs_operator * predicted.member(i);
        const Eigen::VectorXd b = p_llt.solve(gi_hb.transpose() * misfit);
        out.col(i) += stats.anomalies * b / stats.divisor;
    }
    return Ensemble(std::move(out));
}

/// Strictly convex surrogate with C_eps = C + eps*I, solved by its normal
/// equations. Converges to the gain update as eps -> 0; retained as a test
/// oracle for that limit.
inline Eigen::VectorXd regularized_update(const Eigen::VectorXd& predicted_member,
                                          const EnsembleStats& stats, const FilterModel& model,
                                          const Eigen::VectorXd& observation, double eps) {
    if (eps <= 0.0) throw ValidationError("regularized_update: eps must be positive");
    const Eigen::Index d = stats.dim();
    const Eigen::MatrixXd& h = model.obs_operator;
    Eigen::MatrixXd c_eps = stats.covariance;
    c_eps.diagonal().array() += eps;
    const Eigen::LLT<Eigen::MatrixXd> c_llt(c_eps);
    const Eigen::LLT<Eigen::MatrixXd> gamma(model.obs_cov);
    const Eigen::MatrixXd a =
        h.transpose() * gamma.solve(h) + c_llt.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::VectorXd rhs =
        h.transpose() * gamma.solve(observation) + c_llt.solve(predicted_member);
    return Eigen::LDLT<Eigen::MatrixXd>(detail::symmetrized(a)).solve(rhs);
}

/// Full filter loop: prediction plus the chosen update variant, one data
/// vector per step. Observation perturbation draws are recorded so either
/// variant can be replayed against them.
inline FilterRun filter_run(const FilterModel& model, const Ensemble& initial,
                            const std::vector<Eigen::VectorXd>& data, std::uint64_t seed,
                            UpdateVariant variant = UpdateVariant::gain) {
    model.validate();
    FilterRun run;
    run.seed = seed;
    Ensemble current = initial;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const int step = static_cast<int>(j);
        auto pred = predict(current, model, step, seed);
        const Eigen::MatrixXd ys =
            perturb_observations(data[j], model, current.size(), step, seed);
        Ensemble updated = variant == UpdateVariant::gain
                               ? analysis_update(pred.ensemble, pred.stats, model, ys)
                               : range_update(pred.ensemble, pred.stats, model, ys);
        run.predicted.push_back(std::move(pred.ensemble));
        run.observation_perturbations.push_back(ys);
        run.analysis.push_back(updated);
        current = std::move(updated);
    }
    return run;
}

}  // namespace cekf
