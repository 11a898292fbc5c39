#pragma once

// Analytic gradient of the cost wrt the means (mu, m_0..m_n) and the
// fixed-point right-hand sides 2 dF_fixed/ds for the variances (sigma^2, V).

#include <algorithm>
#include <cmath>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/vb.hpp"

namespace ssvb {

struct MeanGradient {
    Vector mu;  // q
    Matrix m;   // (n+1) x p
};

struct VarianceFixedPointRhs {
    Vector sigma2;  // q
    Matrix v;       // (n+1) x p
};

/// Everything one pass over (interval, sample) pairs can produce.
struct Sweep {
    double cost = 0.0;
    MeanGradient grad;
    VarianceFixedPointRhs rhs;
};

/// One pass over all (i, s) computing transitions and Jacobians once and
/// accumulating the cost, the mean gradient and the variance right-hand sides.
template <OdeModel Sys>
Sweep sweep(const VariationalState& st, const ObservationSet& data, const Sys& sys,
            const FitConfig& cfg, const QmcSampleBank& bank, const PriorConfig& pr) {
    const Index q = sys.dim_params();
    detail::check_dims(st, data, bank, q);
    const Index n = data.n_intervals();
    const Index p = data.dim();
    const int mcount = bank.samples;
    const double w = 1.0 / (cfg.tau * mcount);

    const double a = lambda_closed_form(pr, p, n);
    const double b = b_lambda_of(st.m, st.v, data.y, pr.b0);
    const double ab = a / b;

    Sweep out;
    out.grad.mu = Vector::Zero(q);
    out.grad.m = ab * (st.m - data.y);
    out.rhs.sigma2 = Vector::Zero(q);
    out.rhs.v = Matrix::Constant(n + 1, p, ab);
    out.rhs.v.bottomRows(n).array() += 1.0 / cfg.tau;

    const Vector inv_sigma = st.sigma2.cwiseSqrt().cwiseInverse();
    const Matrix inv_sqrt_v = st.v.cwiseSqrt().cwiseInverse();

    double sq = 0.0;
    for (int s = 0; s < mcount; ++s) {
        const Vector theta = realize_theta(bank, st, s);
        const Vector ztheta = bank.z_theta.row(s).transpose();
        for (Index i = 1; i <= n; ++i) {
            const Vector xs = realize_state(bank, st, s, i - 1);
            TransitionJacobians tj;
            try {
                tj = transition_jacobians(sys, xs, data.times[i - 1], theta,
                                          TransitionConfig{cfg.m_steps, data.interval(i)});
            } catch (const NumericError& e) {
                throw detail::located(e, i, s);
            }
            const Vector r = st.m.row(i).transpose() - tj.value;
            sq += r.squaredNorm();

            const Vector jt_r = tj.jac_params.transpose() * r;
            const Vector jx_r = tj.jac_state.transpose() * r;
            out.grad.mu -= w * jt_r;
            out.grad.m.row(i) += w * r.transpose();
            out.grad.m.row(i - 1) -= w * jx_r.transpose();

            out.rhs.sigma2 -= w * (inv_sigma.array() * ztheta.array() * jt_r.array()).matrix();
            out.rhs.v.row(i - 1).array() -=
                w * inv_sqrt_v.row(i - 1).array() * bank.state_row(s, i - 1).array() *
                jx_r.transpose().array();
        }
    }

    CostTerms c;
    c.lambda_term = a * std::log(b);
    c.state_penalty = st.v.bottomRows(n).sum() / (2.0 * cfg.tau);
    c.log_sigma2 = -0.5 * st.sigma2.array().log().sum();
    c.log_v = -0.5 * st.v.array().log().sum();
    c.transition = sq / (2.0 * cfg.tau * mcount);
    out.cost = c.total();
    if (!std::isfinite(out.cost) || !out.grad.mu.allFinite() || !out.grad.m.allFinite())
        throw NumericError("non-finite cost or gradient");
    return out;
}

template <OdeModel Sys>
MeanGradient grad_means(const VariationalState& st, const ObservationSet& data, const Sys& sys,
                        const FitConfig& cfg, const QmcSampleBank& bank, const PriorConfig& pr) {
    return sweep(st, data, sys, cfg, bank, pr).grad;
}

template <OdeModel Sys>
VarianceFixedPointRhs fixed_point_rhs(const VariationalState& st, const ObservationSet& data,
                                      const Sys& sys, const FitConfig& cfg,
                                      const QmcSampleBank& bank, const PriorConfig& pr) {
    return sweep(st, data, sys, cfg, bank, pr).rhs;
}

/// F_fixed: the cost without the -1/2 log(variance) terms. Its doubled
/// gradient wrt the variances is what fixed_point_rhs returns.
template <OdeModel Sys>
double fixed_point_objective(const VariationalState& st, const ObservationSet& data, const Sys& sys,
                             const FitConfig& cfg, const QmcSampleBank& bank,
                             const PriorConfig& pr) {
    const CostTerms c = cost_terms(st, data, sys, cfg, bank, pr);
    return c.lambda_term + c.state_penalty + c.transition;
}

inline constexpr double kVarianceFloor = 1e-12;

/// Outcome of one reciprocal update.
struct FixedPointStep {
    double max_rel_change = 0.0;
    int damped = 0;  // coordinates whose rhs was not positive
};

/// Coordinates damped earlier in the current pass (sigma2 first, then V row-major).
using HeldSet = std::vector<char>;

/// New variance = 1 / rhs. A nonpositive rhs coordinate instead shrinks the
/// old variance tenfold (never below kVarianceFloor). With `held`, each
/// coordinate is damped at most once per pass.
inline FixedPointStep fixed_point_update(VariationalState& st, const VarianceFixedPointRhs& rhs,
                                         HeldSet* held = nullptr) {
    require(rhs.sigma2.size() == st.sigma2.size() && rhs.v.rows() == st.v.rows() &&
                rhs.v.cols() == st.v.cols(),
            "fixed-point rhs does not match the state");
    FixedPointStep step;
    if (held)
        held->resize(st.sigma2.size() + st.v.size(), 0);
    std::size_t slot = 0;
    auto apply = [&](double& var, double r) {
        char* h = held ? &(*held)[slot] : nullptr;
        ++slot;
        double next;
        if (r > 0.0 && std::isfinite(r)) {
            next = std::max(1.0 / r, kVarianceFloor);
        } else {
            if (h && *h)
                return;
            next = std::max(var / 10.0, kVarianceFloor);
            ++step.damped;
            if (h)
                *h = 1;
        }
        step.max_rel_change = std::max(step.max_rel_change, std::abs(next - var) / var);
        var = next;
    };
    for (Index k = 0; k < st.sigma2.size(); ++k)
        apply(st.sigma2[k], rhs.sigma2[k]);
    for (Index i = 0; i < st.v.rows(); ++i)
        for (Index j = 0; j < st.v.cols(); ++j)
            apply(st.v(i, j), rhs.v(i, j));
    return step;
}

/// Iterates the reciprocal update until the largest relative variance change
/// drops below `tol` or `max_iter` passes were made.
struct FixedPointReport {
    int iterations = 0;
    int damped = 0;
    bool converged = false;
};

template <OdeModel Sys>
FixedPointReport iterate_fixed_point(VariationalState& st, const ObservationSet& data, const Sys& sys,
                                     const FitConfig& cfg, const QmcSampleBank& bank,
                                     const PriorConfig& pr, double tol = 1e-8, int max_iter = 200) {
    FixedPointReport rep;
    // Damping at most once per pass: repeated tenfold cuts against a rhs that
    // only changes when the means move would drive the variance to the floor.
    HeldSet held;
    for (rep.iterations = 1; rep.iterations <= max_iter; ++rep.iterations) {
        const VarianceFixedPointRhs rhs = fixed_point_rhs(st, data, sys, cfg, bank, pr);
        const FixedPointStep step = fixed_point_update(st, rhs, &held);
        rep.damped += step.damped;
        if (step.max_rel_change < tol) {
            rep.converged = true;
            break;
        }
    }
    rep.iterations = std::min(rep.iterations, max_iter);
    st.b_lambda = b_lambda_of(st.m, st.v, data.y, pr.b0);
    return rep;
}

} // namespace ssvb
