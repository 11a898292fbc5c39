#pragma once

// Alternating optimization of the variational parameters: approximate
// Riemannian conjugate gradient on the means, reciprocal fixed-point
// iteration on the variances, automatic restarts on numeric trouble.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssvb/gradients.hpp"
#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/vb.hpp"

namespace ssvb {

// ---------------------------------------------------------------------------
// Flattening of u = (mu, m_0, ..., m_n) and s = (sigma^2, V_0, ..., V_n)

inline Vector flatten(const Vector& head, const Matrix& rows) {
    const Index q = head.size(), p = rows.cols();
    Vector u(q + rows.size());
    u.head(q) = head;
    for (Index i = 0; i < rows.rows(); ++i)
        u.segment(q + i * p, p) = rows.row(i).transpose();
    return u;
}

inline void unflatten(const Vector& u, Vector& head, Matrix& rows) {
    const Index q = head.size(), p = rows.cols();
    head = u.head(q);
    for (Index i = 0; i < rows.rows(); ++i)
        rows.row(i) = u.segment(q + i * p, p).transpose();
}

inline Vector flatten(const MeanGradient& g) { return flatten(g.mu, g.m); }

/// diag(sigma^2, V) times the plain gradient.
inline Vector riemannian_gradient(const MeanGradient& grad, const Vector& sigma2, const Matrix& v) {
    return flatten(grad).cwiseProduct(flatten(sigma2, v));
}

struct PolakRibiere {
    double beta = 0.0;
    bool reset = false;  // zero denominator or negative beta
};

/// beta = grad^T (gt_k - gt_{k-1}) / (gt_{k-1}^T diag(1/metric) gt_{k-1}),
/// clipped at zero. `metric` is the flattened (sigma^2, V).
inline PolakRibiere polak_ribiere(const Vector& plain_grad, const Vector& gt, const Vector& gt_prev,
                                  const Vector& metric) {
    const double num = plain_grad.dot(gt - gt_prev);
    const double den = (gt_prev.array().square() / metric.array()).sum();
    PolakRibiere out;
    if (!(den > 0.0) || !std::isfinite(den) || !std::isfinite(num)) {
        out.reset = true;
        return out;
    }
    out.beta = num / den;
    if (out.beta < 0.0) {
        out.beta = 0.0;
        out.reset = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Line search

/// Abscissa of the vertex of the parabola through three points.
inline double quadratic_vertex(double a, double fa, double b, double fb, double c, double fc) {
    const double p = (b - a) * (fb - fc);
    const double r = (b - c) * (fb - fa);
    const double den = p - r;
    if (den == 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    return b - 0.5 * ((b - a) * p - (b - c) * r) / den;
}

struct LineSearchResult {
    bool ok = false;
    double alpha = 0.0;
    double cost = 0.0;
    int evaluations = 0;
};

/// Three-point quadratic interpolation. Brackets a decrease by halving (at
/// most 20 times) or doubling the trial step, then tries the vertex of the
/// parabola through the bracket. Evaluations that throw NumericError count as
/// +inf. On success cost(alpha) < cost(0).
inline LineSearchResult line_search(const std::function<double(double)>& cost_along,
                                    double alpha_init, std::optional<double> cost_at_zero = {}) {
    constexpr int kMaxHalvings = 20;
    constexpr int kMaxDoublings = 10;
    LineSearchResult res;
    auto eval = [&](double a) {
        ++res.evaluations;
        try {
            const double v = cost_along(a);
            return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    const double f0 = cost_at_zero ? *cost_at_zero : eval(0.0);
    if (!std::isfinite(f0))
        throw NumericError("line search started from a non-finite cost");

    double a = 0.0, fa = f0;
    double b = alpha_init, fb = eval(b);
    double c, fc;
    if (!(fb < f0)) {
        c = b;
        fc = fb;
        bool found = false;
        for (int k = 0; k < kMaxHalvings; ++k) {
            b = 0.5 * c;
            fb = eval(b);
            if (fb < f0) {
                found = true;
                break;
            }
            c = b;
            fc = fb;
        }
        if (!found)
            return res;
    } else {
        c = 2.0 * b;
        fc = eval(c);
        for (int k = 0; k < kMaxDoublings && fc < fb; ++k) {
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            c = 2.0 * b;
            fc = eval(c);
        }
        if (fc < fb) {
            res.ok = true;
            res.alpha = c;
            res.cost = fc;
            return res;
        }
    }

    res.ok = true;
    res.alpha = b;
    res.cost = fb;
    if (std::isfinite(fc)) {
        const double v = quadratic_vertex(a, fa, b, fb, c, fc);
        if (std::isfinite(v) && v > a && v < c && v != b) {
            const double fv = eval(v);
            if (fv < fb) {
                res.alpha = v;
                res.cost = fv;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Mean update (conjugate gradient)

/// p_{k-1} and the previous Riemannian gradient. Starts at p = 0, gt = 1.
struct CgState {
    Vector direction;
    Vector riemannian;
    int iteration = 0;

    static CgState start(Index dim) { return {Vector::Zero(dim), Vector::Ones(dim), 0}; }
};

struct Progress {
    int iteration = 0;
    double cost = 0.0;
    std::string_view phase;
};
using ProgressFn = std::function<void(const Progress&)>;

/// Cost sequence of an attempt. kind[k] is 'm' for an accepted mean step and
/// 'v' for a completed variance update; entry 0 is the starting cost ('s').
struct CostTrace {
    std::vector<double> cost;
    std::vector<char> kind;
    void push(double c, char k) {
        cost.push_back(c);
        kind.push_back(k);
    }
};

struct MeanUpdateReport {
    int iterations = 0;
    double cost = 0.0;
    double alpha = 1.0;
    bool line_search_failed = false;
    bool stalled = false;  // failure with a negligible predicted decrease
};

namespace detail {

/// Clamp mu and m_0 into the prior box; theta stays strictly inside finite bounds.
inline void project(VariationalState& st, const PriorConfig& pr) {
    for (Index k = 0; k < st.mu.size(); ++k) {
        const double lo = pr.theta_lower[k], hi = pr.theta_upper[k];
        const double inset = (std::isfinite(lo) && std::isfinite(hi)) ? 1e-9 * (hi - lo) : 0.0;
        st.mu[k] = std::clamp(st.mu[k], lo + inset, hi - inset);
    }
    for (Index j = 0; j < st.m.cols(); ++j)
        st.m(0, j) = std::clamp(st.m(0, j), pr.x0_lower[j], pr.x0_upper[j]);
}

/// Zero direction components that push an already active bound outward.
inline void mask_active(Vector& dir, const VariationalState& st, const PriorConfig& pr) {
    const Index q = st.mu.size();
    for (Index k = 0; k < q; ++k) {
        const double lo = pr.theta_lower[k], hi = pr.theta_upper[k];
        const double inset = (std::isfinite(lo) && std::isfinite(hi)) ? 1e-9 * (hi - lo) : 0.0;
        if ((st.mu[k] <= lo + inset && dir[k] < 0) || (st.mu[k] >= hi - inset && dir[k] > 0))
            dir[k] = 0.0;
    }
    for (Index j = 0; j < st.m.cols(); ++j) {
        if ((st.m(0, j) <= pr.x0_lower[j] && dir[q + j] < 0) ||
            (st.m(0, j) >= pr.x0_upper[j] && dir[q + j] > 0))
            dir[q + j] = 0.0;
    }
}

} // namespace detail

/// Conjugate-gradient iterations on (mu, m) with the variances held fixed.
/// Stops once two consecutive accepted steps reduce the cost by a relative
/// amount below `tol`, or on line-search failure.
template <OdeModel Sys>
MeanUpdateReport update_means(VariationalState& st, const ObservationSet& data, const Sys& sys,
                              const FitConfig& cfg, const QmcSampleBank& bank, const PriorConfig& pr,
                              double tol, double alpha_init, CostTrace* trace = nullptr,
                              const ProgressFn& progress = {}) {
    const Index q = sys.dim_params();
    const Vector metric = flatten(st.sigma2, st.v);
    CgState cg = CgState::start(metric.size());

    MeanUpdateReport rep;
    rep.alpha = alpha_init;
    Sweep sw = sweep(st, data, sys, cfg, bank, pr);
    rep.cost = sw.cost;
    int small_steps = 0;

    VariationalState trial = st;
    while (rep.iterations < cfg.max_cg_iterations) {
        const Vector grad = flatten(sw.grad);
        const Vector gt = grad.cwiseProduct(metric);
        const PolakRibiere prb = polak_ribiere(grad, gt, cg.riemannian, metric);
        const Vector steepest = -gt;
        Vector dir = steepest + prb.beta * cg.direction;
        detail::mask_active(dir, st, pr);
        if (!(grad.dot(dir) < 0.0)) {
            dir = steepest;
            detail::mask_active(dir, st, pr);
        }
        const double slope = grad.dot(dir);
        if (!(slope < 0.0))
            break;

        const Vector u0 = flatten(st.mu, st.m);
        auto along = [&](const Vector& d) {
            return [&, d](double alpha) {
                unflatten(u0 + alpha * d, trial.mu, trial.m);
                detail::project(trial, pr);
                return cost(trial, data, sys, cfg, bank, pr);
            };
        };
        LineSearchResult ls = line_search(along(dir), rep.alpha, rep.cost);
        if (!ls.ok && dir != steepest) {
            dir = steepest;
            detail::mask_active(dir, st, pr);
            ls = line_search(along(dir), rep.alpha, rep.cost);
        }
        if (!ls.ok) {
            rep.line_search_failed = true;
            rep.stalled = -grad.dot(dir) < cfg.eps * std::max(1.0, std::abs(rep.cost));
            break;
        }

        unflatten(u0 + ls.alpha * dir, st.mu, st.m);
        detail::project(st, pr);
        const double rel = (rep.cost - ls.cost) / std::max(1.0, std::abs(ls.cost));
        rep.cost = ls.cost;
        rep.alpha = ls.alpha;
        ++rep.iterations;
        if (trace)
            trace->push(rep.cost, 'm');
        if (progress)
            progress({rep.iterations, rep.cost, "means"});

        cg.direction = dir;
        cg.riemannian = gt;
        ++cg.iteration;
        sw = sweep(st, data, sys, cfg, bank, pr);

        small_steps = rel < tol ? small_steps + 1 : 0;
        if (small_steps >= 2)
            break;
    }
    st.b_lambda = b_lambda_of(st.m, st.v, data.y, pr.b0);
    return rep;
}

// ---------------------------------------------------------------------------
// Full fit

struct FitDiagnostics {
    int cg_iterations = 0;
    int outer_cycles = 0;
    int line_search_failures = 0;
    int damping_events = 0;
    int numeric_failures = 0;
    bool converged = false;
    std::vector<std::string> restart_reasons;
};

struct FitResult {
    bool success = false;
    std::string message;
    VariationalState state;
    Vector theta_mean;
    Vector theta_sd;
    Vector x0_mean;
    Vector x0_sd;
    double lambda_mean = 0.0;
    CostTrace trace;
    int restarts = 0;
    double seconds = 0.0;
    FitDiagnostics diagnostics;
    PriorConfig priors;  // with the x0 bounds actually used
    FitConfig config;
    std::vector<double> times;
};

namespace detail {

/// Thrown inside an attempt when the line search cannot make progress.
struct LineSearchFailure : NumericError {
    using NumericError::NumericError;
};

inline Vector draw_theta(const PriorConfig& pr, const Vector& fallback_center, std::mt19937_64& rng) {
    Vector th(pr.theta_lower.size());
    std::normal_distribution<double> normal(0.0, 0.5);
    for (Index k = 0; k < th.size(); ++k) {
        const double lo = pr.theta_lower[k], hi = pr.theta_upper[k];
        if (std::isfinite(lo) && std::isfinite(hi))
            th[k] = std::uniform_real_distribution<double>(lo, hi)(rng);
        else
            th[k] = fallback_center[k] + normal(rng);
    }
    return th;
}

} // namespace detail

/// Runs alternating mean/variance updates until the relative cost change over
/// an outer cycle is below cfg.eps. Outer cycle j uses the CG tolerance
/// max(eps, 1e-2 * 10^-j). Numeric failures and genuine line-search failures
/// restart from a fresh prior draw, at most cfg.max_restarts times.
template <OdeModel Sys>
FitResult fit(const ObservationSet& data, const Sys& sys, const PriorConfig& priors,
              const FitConfig& cfg, const ProgressFn& progress = {}) {
    const auto t_start = std::chrono::steady_clock::now();
    validate(data);
    validate(cfg);
    const Index q = sys.dim_params();
    require(data.dim() == sys.dim_state(), "data columns do not match the model state dimension");
    validate(priors, q);

    FitResult res;
    res.config = cfg;
    res.times = data.times;
    PriorConfig pr = priors;
    const VariationalState first = initial_state(data, pr, q, cfg.theta_start);
    res.priors = pr;
    const QmcSampleBank bank = make_bank(cfg.samples, q, data.dim(), data.n_intervals(), cfg.seed);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
        VariationalState st = first;
        if (attempt > 0) {
            const Vector th = detail::draw_theta(pr, first.mu, rng);
            st = initial_state(data, pr, q, th);
        }
        CostTrace trace;
        FitDiagnostics diag = res.diagnostics;
        try {
            // Bring the variances to their fixed point for the starting means first.
            diag.damping_events += iterate_fixed_point(st, data, sys, cfg, bank, pr).damped;
            double c = cost(st, data, sys, cfg, bank, pr);
            trace.push(c, 's');
            double alpha = cfg.alpha_init;
            bool converged = false;
            int cycle = 0;
            for (; cycle < cfg.max_outer && !converged; ++cycle) {
                const double tol = std::max(cfg.eps, 1e-2 * std::pow(10.0, -cycle));
                const MeanUpdateReport mr =
                    update_means(st, data, sys, cfg, bank, pr, tol, alpha, &trace, progress);
                diag.cg_iterations += mr.iterations;
                if (mr.line_search_failed) {
                    ++diag.line_search_failures;
                    if (!mr.stalled)
                        throw detail::LineSearchFailure("line search failed in cycle " +
                                                        std::to_string(cycle));
                }
                alpha = mr.alpha;
                const FixedPointReport fp = iterate_fixed_point(st, data, sys, cfg, bank, pr);
                diag.damping_events += fp.damped;
                const double c_new = cost(st, data, sys, cfg, bank, pr);
                trace.push(c_new, 'v');
                if (progress)
                    progress({cycle + 1, c_new, "variances"});
                const double rel = std::abs(c - c_new) / std::max(1.0, std::abs(c_new));
                c = c_new;
                if (tol <= cfg.eps && rel < cfg.eps)
                    converged = true;
            }
            diag.outer_cycles += cycle;
            diag.converged = converged;

            res.success = true;
            res.message = converged ? "converged" : "stopped at the outer-cycle limit";
            res.state = st;
            res.trace = std::move(trace);
            res.restarts = attempt;
            res.diagnostics = diag;
            break;
        } catch (const NumericError& e) {
            if (dynamic_cast<const detail::LineSearchFailure*>(&e) == nullptr)
                ++diag.numeric_failures;
            diag.restart_reasons.emplace_back(e.what());
            res.diagnostics = diag;
            res.restarts = attempt;
            res.message = std::string("restart budget exhausted; last failure: ") + e.what();
        }
    }

    if (res.success) {
        res.theta_mean = res.state.mu;
        res.theta_sd = res.state.sigma2.cwiseSqrt();
        res.x0_mean = res.state.m.row(0).transpose();
        res.x0_sd = res.state.v.row(0).transpose().cwiseSqrt();
        res.lambda_mean = res.state.a_lambda / res.state.b_lambda;
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

} // namespace ssvb
