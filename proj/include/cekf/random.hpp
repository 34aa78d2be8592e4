#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace cekf::rng {

// Noise stream layout. Every Gaussian draw in the library comes from a
// substream addressed by (master seed, purpose, step/iteration, member),
// so per-member draws are independent of evaluation order and a test can
// regenerate any single stream in isolation.
enum Purpose : std::uint64_t {
    kProcessNoise = 1,     // xi in the prediction step
    kObsPerturbation = 2,  // eta in perturbed observations (EnKF)
    kEkiPerturbation = 3,  // eta in perturbed observations (EKI)
    kInitialEnsemble = 4,  // initial ensemble / rejection sampling
    kDataNoise = 5,        // synthetic-data generation
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a substream seed from a master seed and a path of indices.
inline std::uint64_t derive(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t p : path) {
        s = splitmix64(s ^ (p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2)));
    }
    return s;
}

/// Deterministic N(0,1) stream: mt19937_64 bits mapped to [0,1) doubles
/// (top 53 bits) and fed through Box-Muller. Avoids std::normal_distribution,
/// whose output sequence is implementation-defined.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}

    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Eigen::VectorXd gaussian_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
        return v;
    }

    /// Uniform draw on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cekf::rng
