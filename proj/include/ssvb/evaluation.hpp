#pragma once

// Accuracy metrics, BIC model selection and the replicate benchmark.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/optimizer.hpp"
#include "ssvb/sir.hpp"
#include "ssvb/simulate.hpp"
#include "ssvb/tuning.hpp"

namespace ssvb {

struct CurveDeviation {
    double value = 0.0;  // +inf when integration failed
    bool failed = false;
};

/// Sum of squared differences, over all coordinates and observation times,
/// between the curve integrated from the posterior means and `truth_curve`.
template <OdeModel Sys>
CurveDeviation curve_deviation(const FitResult& fit, const Sys& sys, const Matrix& truth_curve) {
    require(fit.success, "curve deviation needs a successful fit");
    require(truth_curve.rows() == static_cast<Index>(fit.times.size()) &&
                truth_curve.cols() == sys.dim_state(),
            "truth curve does not match the fit's time grid");
    try {
        const Matrix est = integrate(sys, fit.x0_mean, fit.theta_mean, fit.times);
        const double v = (est - truth_curve).squaredNorm();
        if (!std::isfinite(v))
            return {std::numeric_limits<double>::infinity(), true};
        return {v, false};
    } catch (const NumericError&) {
        return {std::numeric_limits<double>::infinity(), true};
    }
}

/// BIC = k ln(N_obs) - 2 loglik with the Gaussian likelihood at the posterior
/// state means and lambda = A/B; k = #ODE parameters + p + 1.
inline double bic(const FitResult& fit, const ObservationSet& data) {
    require(fit.success, "BIC needs a successful fit");
    const double k = static_cast<double>(fit.theta_mean.size() + data.dim() + 1);
    const double n_obs = static_cast<double>(data.y.size());
    return k * std::log(n_obs) - 2.0 * gaussian_loglik(data.y, fit.state.m, fit.lambda_mean);
}

struct BicCandidate {
    int count = 0;
    double bic = std::numeric_limits<double>::infinity();
    FitResult fit;
};

struct BicReport {
    int chosen = 0;
    std::size_t chosen_index = 0;
    std::vector<BicCandidate> candidates;
};

/// Fits each candidate basis count with `fit_fn(count)` and keeps the lowest
/// BIC (ties go to the smaller count). Failed fits are skipped.
inline BicReport bic_select(const ObservationSet& data, const std::vector<int>& counts,
                            const std::function<FitResult(int)>& fit_fn) {
    require(!counts.empty(), "BIC selection needs at least one candidate");
    BicReport rep;
    bool any = false;
    for (int c : counts) {
        BicCandidate cand;
        cand.count = c;
        cand.fit = fit_fn(c);
        if (cand.fit.success) {
            cand.bic = bic(cand.fit, data);
            const bool better = !any || cand.bic < rep.candidates[rep.chosen_index].bic ||
                                (cand.bic == rep.candidates[rep.chosen_index].bic && c < rep.chosen);
            if (better) {
                rep.chosen = c;
                rep.chosen_index = rep.candidates.size();
            }
            any = true;
        }
        rep.candidates.push_back(std::move(cand));
    }
    if (!any)
        throw NumericError("every BIC candidate fit failed");
    return rep;
}

/// One simulation study: replicate r simulates with seed + r, tunes (unless
/// m and tau are fixed) and fits with the same seed.
struct BenchProtocol {
    Vector theta;
    Vector x0;
    double t0 = 0.0;
    double t1 = 1.0;
    int points = 2;
    double noise_var = 0.0;
    PriorConfig priors;  // empty x0 bounds are chosen from each data set
    std::optional<int> m_steps;
    std::optional<double> tau;
    FitConfig fit;
    std::uint64_t seed = 1;
    int replicates = 1;
    int jobs = 1;
};

struct ReplicateOutcome {
    std::uint64_t seed = 0;
    bool success = false;
    std::string message;
    int m_steps = 0;
    double tau = 0.0;
    Vector theta;
    Vector x0;
    double lambda = 0.0;
    double deviation = std::numeric_limits<double>::infinity();
    bool deviation_failed = false;
    int restarts = 0;
    double fit_seconds = 0.0;
    double tune_seconds = 0.0;
};

struct TimingStats {
    double mean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct BenchReport {
    std::vector<std::string> names;  // ODE parameters then initial states
    Vector truth;
    Vector mab;
    Vector ssd;
    int successes = 0;
    std::vector<ReplicateOutcome> replicates;
    TimingStats fit_seconds;
    double wall_seconds = 0.0;
};

inline TimingStats timing_stats(std::vector<double> v) {
    TimingStats s;
    if (v.empty())
        return s;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v)
        sum += x;
    s.mean = sum / static_cast<double>(v.size());
    const std::size_t h = v.size() / 2;
    s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    s.min = v.front();
    s.max = v.back();
    return s;
}

/// MAB and SSD per column of `estimates` (one row per successful replicate).
inline void summarize(const Matrix& estimates, const Vector& truth, Vector& mab, Vector& ssd) {
    const Index r = estimates.rows();
    mab = Vector::Zero(truth.size());
    ssd = Vector::Zero(truth.size());
    if (r == 0)
        return;
    for (Index k = 0; k < truth.size(); ++k) {
        const auto col = estimates.col(k).array();
        mab[k] = (col - truth[k]).abs().mean();
        if (r > 1)
            ssd[k] = std::sqrt((col - col.mean()).square().sum() / static_cast<double>(r - 1));
    }
}

template <OdeModel Sys>
ReplicateOutcome run_replicate(const Sys& sys, const BenchProtocol& proto, int r) {
    ReplicateOutcome out;
    out.seed = proto.seed + static_cast<std::uint64_t>(r);
    try {
        const auto grid = equidistant_grid(proto.t0, proto.t1, proto.points);
        const ObservationSet data =
            simulate_dataset(sys, proto.theta, proto.x0, grid, proto.noise_var, out.seed);
        FitConfig cfg = proto.fit;
        cfg.seed = out.seed;
        const auto t_tune = std::chrono::steady_clock::now();
        if (proto.m_steps && proto.tau) {
            cfg.m_steps = *proto.m_steps;
            cfg.tau = *proto.tau;
        } else {
            const TuningResult tr = select_tuning(sys, data, proto.priors, spline_start(data), out.seed);
            cfg.m_steps = proto.m_steps.value_or(tr.m);
            cfg.tau = proto.tau.value_or(tr.tau);
        }
        out.tune_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_tune).count();
        out.m_steps = cfg.m_steps;
        out.tau = cfg.tau;
        const FitResult fit_res = fit(data, sys, proto.priors, cfg);
        out.success = fit_res.success;
        out.message = fit_res.message;
        out.restarts = fit_res.restarts;
        out.fit_seconds = fit_res.seconds;
        if (fit_res.success) {
            out.theta = fit_res.theta_mean;
            out.x0 = fit_res.x0_mean;
            out.lambda = fit_res.lambda_mean;
            const Matrix truth = integrate(sys, proto.x0, proto.theta, grid);
            const CurveDeviation dev = curve_deviation(fit_res, sys, truth);
            out.deviation = dev.value;
            out.deviation_failed = dev.failed;
        }
    } catch (const std::exception& e) {
        out.success = false;
        out.message = e.what();
    }
    return out;
}

/// Runs the replicates (in parallel when jobs > 1); a failing replicate is
/// recorded and excluded from MAB/SSD.
template <OdeModel Sys>
BenchReport bench(const Sys& sys, const BenchProtocol& proto) {
    require(proto.replicates >= 1, "bench needs at least one replicate");
    require(proto.theta.size() == sys.dim_params() && proto.x0.size() == sys.dim_state(),
            "bench truth has wrong dimensions");
    const auto t_start = std::chrono::steady_clock::now();
    BenchReport rep;
    rep.names = sys.param_names();
    for (const auto& s : sys.state_names())
        rep.names.push_back(s + "(t0)");
    rep.truth.resize(proto.theta.size() + proto.x0.size());
    rep.truth << proto.theta, proto.x0;
    rep.replicates.resize(static_cast<std::size_t>(proto.replicates));

    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < proto.replicates; r = next++)
            rep.replicates[static_cast<std::size_t>(r)] = run_replicate(sys, proto, r);
    };
    const int jobs = std::clamp(proto.jobs, 1, proto.replicates);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }

    std::vector<Vector> ok;
    std::vector<double> secs;
    for (const auto& o : rep.replicates) {
        if (!o.success)
            continue;
        Vector e(rep.truth.size());
        e << o.theta, o.x0;
        ok.push_back(std::move(e));
        secs.push_back(o.fit_seconds);
    }
    rep.successes = static_cast<int>(ok.size());
    Matrix est(static_cast<Index>(ok.size()), rep.truth.size());
    for (std::size_t i = 0; i < ok.size(); ++i)
        est.row(static_cast<Index>(i)) = ok[i].transpose();
    summarize(est, rep.truth, rep.mab, rep.ssd);
    rep.fit_seconds = timing_stats(secs);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

} // namespace ssvb
