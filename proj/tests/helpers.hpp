#pragma once

#include <Eigen/Dense>

#include "cekf/ensemble.hpp"
#include "cekf/enkf.hpp"
#include "cekf/random.hpp"

namespace test_helpers {

inline Eigen::MatrixXd random_matrix(int rows, int cols, cekf::rng::Stream& stream) {
    Eigen::MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j) m.col(j) = stream.gaussian_vector(rows);
    return m;
}

inline Eigen::MatrixXd random_psd(int n, cekf::rng::Stream& stream) {
    const Eigen::MatrixXd a = random_matrix(n, n, stream);
    return a * a.transpose() / n;
}

inline Eigen::MatrixXd random_pd(int n, cekf::rng::Stream& stream) {
    return random_psd(n, stream) + 0.2 * Eigen::MatrixXd::Identity(n, n);
}

inline cekf::Ensemble random_ensemble(int d, int n, cekf::rng::Stream& stream) {
    return cekf::Ensemble(random_matrix(d, n, stream));
}

/// Identity-dynamics model with the given operators, for update-only tests.
inline cekf::FilterModel static_model(Eigen::MatrixXd h, Eigen::MatrixXd gamma, int s = 0) {
    cekf::FilterModel model;
    const Eigen::Index d = h.cols();
    model.transition = cekf::FilterModel::autonomous([](const Eigen::VectorXd& v) { return v; });
    model.obs_operator = std::move(h);
    model.process_cov = Eigen::MatrixXd::Zero(d, d);
    model.obs_cov = std::move(gamma);
    model.perturb_flag = s;
    return model;
}

}  // namespace test_helpers
