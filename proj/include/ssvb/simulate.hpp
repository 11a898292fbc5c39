#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"

namespace ssvb {

/// `count` equidistant times from t0 to t1 inclusive.
inline std::vector<double> equidistant_grid(double t0, double t1, int count) {
    require(count >= 2, "grid needs at least two points");
    require(t1 > t0, "grid needs t0 < t1");
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i)
        g[i] = (i == count - 1) ? t1 : t0 + (t1 - t0) * i / (count - 1);
    return g;
}

/// Truth curve from (theta, x0) plus iid N(0, noise_var) noise on every entry.
template <OdeModel Sys>
ObservationSet simulate_dataset(const Sys& sys, const Vector& theta, const Vector& x0,
                                const std::vector<double>& grid, double noise_var, std::uint64_t seed) {
    require(noise_var >= 0.0, "noise variance must be nonnegative");
    require(theta.size() == sys.dim_params(), "theta has wrong dimension");
    ObservationSet d;
    d.times = grid;
    d.y = integrate(sys, x0, theta, grid);
    if (noise_var > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, std::sqrt(noise_var));
        for (Index i = 0; i < d.y.rows(); ++i)
            for (Index j = 0; j < d.y.cols(); ++j)
                d.y(i, j) += noise(rng);
    }
    d.truth = TruthInfo{theta, x0, noise_var};
    return d;
}

} // namespace ssvb
