#pragma once

// Data-driven choice of the substep count m and the state-noise variance tau:
// simulate trajectories from prior draws and measure how far one transition
// lands from the exact solution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/vb.hpp"

namespace ssvb {

inline constexpr double kTauFloor = 1e-12;
inline constexpr double kTauFidelityLimit = 1e-4;
inline constexpr int kMaxTuningSteps = 16;

/// Rounds up to the decade above the leading digit: 0.000389 -> 0.001,
/// 0.0061 -> 0.01. Zero maps to kTauFloor.
inline double round_up_decade(double x) {
    require(x >= 0.0 && std::isfinite(x), "value to round must be finite and nonnegative");
    if (x == 0.0)
        return kTauFloor;
    return std::max(kTauFloor, std::pow(10.0, std::floor(std::log10(x)) + 1.0));
}

/// Mean of the middle half of the sorted values (25th..75th percentile block).
inline double middle_half_mean(std::vector<double> v) {
    require(!v.empty(), "no values to average");
    std::sort(v.begin(), v.end());
    const std::size_t drop = v.size() / 4;
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(drop);
    const auto last = v.end() - static_cast<std::ptrdiff_t>(drop);
    return std::accumulate(first, last, 0.0) / static_cast<double>(last - first);
}

struct TauEstimate {
    double tau = 0.0;
    double averaged_variance = 0.0;
    std::vector<double> variances;  // accepted draws, in draw order
    int attempts = 0;
};

struct TuningOptions {
    int target_draws = 100;
    int max_attempts = 1000;
    int min_draws = 50;
};

/// Discrepancy variance for one trajectory: sample variance of all entries of
/// d_i = g^(m)(s(t_{i-1})) - s(t_i), i = 1..n.
template <OdeModel Sys>
double discrepancy_variance(const Sys& sys, const Matrix& traj, const std::vector<double>& times,
                            const Vector& theta, int m) {
    const Index n = static_cast<Index>(times.size()) - 1;
    const Index p = traj.cols();
    Matrix d(n, p);
    for (Index i = 1; i <= n; ++i) {
        const Vector g = transition(sys, traj.row(i - 1).transpose(), times[i - 1], theta,
                                    TransitionConfig{m, times[i] - times[i - 1]});
        d.row(i - 1) = g.transpose() - traj.row(i);
    }
    const double mean = d.mean();
    const double count = static_cast<double>(d.size());
    if (count < 2)
        return 0.0;
    return (d.array() - mean).square().sum() / (count - 1.0);
}

/// Reasonable tau for a given m. Accepts a prior draw when its trajectory from
/// x0_start stays inside [min Y - 3 range, max Y + 3 range] per coordinate.
template <OdeModel Sys>
TauEstimate reasonable_tau(const Sys& sys, const ObservationSet& data, const PriorConfig& pr,
                           const Vector& x0_start, int m, std::uint64_t seed,
                           const TuningOptions& opt = {}) {
    validate(data);
    require(m >= 1, "step count m must be >= 1");
    const Index q = sys.dim_params();
    const Index p = data.dim();
    require(pr.theta_lower.size() == q && pr.theta_upper.size() == q, "theta prior has wrong size");
    for (Index k = 0; k < q; ++k)
        require(std::isfinite(pr.theta_lower[k]) && std::isfinite(pr.theta_upper[k]),
                "tau selection needs finite theta prior bounds");
    require(x0_start.size() == p, "x0 start has wrong dimension");

    const Vector ymin = data.y.colwise().minCoeff().transpose();
    const Vector ymax = data.y.colwise().maxCoeff().transpose();
    const Vector range = ymax - ymin;
    const Vector lo = ymin - 3.0 * range;
    const Vector hi = ymax + 3.0 * range;

    std::mt19937_64 rng(seed);
    TauEstimate est;
    Vector theta(q);
    while (static_cast<int>(est.variances.size()) < opt.target_draws && est.attempts < opt.max_attempts) {
        ++est.attempts;
        for (Index k = 0; k < q; ++k)
            theta[k] = std::uniform_real_distribution<double>(pr.theta_lower[k], pr.theta_upper[k])(rng);
        Matrix traj;
        try {
            traj = integrate(sys, x0_start, theta, data.times);
        } catch (const NumericError&) {
            continue;
        }
        bool inside = true;
        for (Index j = 0; j < p && inside; ++j)
            inside = traj.col(j).minCoeff() >= lo[j] && traj.col(j).maxCoeff() <= hi[j];
        if (!inside)
            continue;
        try {
            est.variances.push_back(discrepancy_variance(sys, traj, data.times, theta, m));
        } catch (const NumericError&) {
            continue;
        }
    }
    if (static_cast<int>(est.variances.size()) < opt.min_draws)
        throw ConfigError("only " + std::to_string(est.variances.size()) + " of " +
                          std::to_string(est.attempts) +
                          " prior draws stayed near the data; tighten the theta priors");
    est.averaged_variance = middle_half_mean(est.variances);
    est.tau = round_up_decade(est.averaged_variance);
    return est;
}

struct TuningResult {
    int m = 1;
    double tau = 0.0;
    std::vector<double> variances;        // accepted sample variances at the chosen m
    std::vector<double> tau_per_m;        // tau found for m = 1, 2, ...
    int draws = 0;
    bool capped = false;
};

/// Smallest m (starting at 1) whose reasonable tau is at most 1e-4; stops at m = 16.
template <OdeModel Sys>
TuningResult select_tuning(const Sys& sys, const ObservationSet& data, const PriorConfig& pr,
                           const Vector& x0_start, std::uint64_t seed, const TuningOptions& opt = {}) {
    TuningResult res;
    for (int m = 1; m <= kMaxTuningSteps; ++m) {
        TauEstimate est = reasonable_tau(sys, data, pr, x0_start, m, seed, opt);
        res.m = m;
        res.tau = est.tau;
        res.variances = std::move(est.variances);
        res.draws = est.attempts;
        res.tau_per_m.push_back(est.tau);
        if (est.tau <= kTauFidelityLimit)
            return res;
    }
    res.capped = true;
    return res;
}

/// x0 starting point from the default cubic spline smoothing of the data.
inline Vector spline_start(const ObservationSet& data) {
    const SmoothFit sm = smooth_columns(data.times, data.y, default_basis_count(data.n_points()));
    return sm.fitted.row(0).transpose();
}

} // namespace ssvb
