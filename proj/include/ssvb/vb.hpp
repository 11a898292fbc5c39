#pragma once

// Mean-field variational family over (lambda, theta, x), the quasi-Monte Carlo
// sample bank and the reduced cost with A_lambda, B_lambda eliminated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/splines.hpp"

namespace ssvb {

/// lambda ~ Gamma(a0, b0), theta_k ~ U(theta_lower_k, theta_upper_k),
/// x0_j ~ U(x0_lower_j, x0_upper_j). Infinite theta bounds are allowed. Empty
/// x0 bounds are filled in from the data when a fit is initialized.
struct PriorConfig {
    double a0 = 1.0;
    double b0 = 1.0;
    Vector theta_lower;
    Vector theta_upper;
    Vector x0_lower;
    Vector x0_upper;
};

inline void validate(const PriorConfig& pr, Index q) {
    require(pr.a0 > 0.0 && pr.b0 > 0.0, "gamma prior needs A0 > 0 and B0 > 0");
    require(pr.theta_lower.size() == q && pr.theta_upper.size() == q,
            "theta prior bounds must have one entry per ODE parameter");
    for (Index k = 0; k < q; ++k)
        require(pr.theta_lower[k] < pr.theta_upper[k], "theta prior lower bound must be < upper bound");
    require(pr.x0_lower.size() == pr.x0_upper.size(), "x0 prior bounds differ in length");
    for (Index j = 0; j < pr.x0_lower.size(); ++j)
        require(pr.x0_lower[j] < pr.x0_upper[j], "x0 prior lower bound must be < upper bound");
}

/// Tuning and optimizer settings of one fit.
struct FitConfig {
    double tau = 1e-4;          // state-noise variance
    int m_steps = 1;            // RK4 substeps per observation interval
    int samples = 11;           // quasi-MC sample count M (odd)
    double eps = 1e-6;          // final relative cost-change tolerance
    int max_restarts = 10;
    std::uint64_t seed = 1;
    double alpha_init = 1.0;    // first line-search trial step
    int max_outer = 200;        // mean/variance alternations per attempt
    int max_cg_iterations = 5000;
    bool deterministic = true;
    std::optional<Vector> theta_start;  // overrides the prior-midpoint start
};

inline void validate(const FitConfig& c) {
    require(c.tau > 0.0, "tau must be positive");
    require(c.m_steps >= 1, "step count m must be >= 1");
    require(c.samples >= 3 && c.samples % 2 == 1, "sample count M must be odd and >= 3");
    require(c.eps > 0.0, "convergence tolerance must be positive");
    require(c.max_restarts >= 0, "max restarts must be nonnegative");
    require(c.alpha_init > 0.0, "initial line-search step must be positive");
}

/// Variational parameters. Rows of m and v are time points; v holds the
/// diagonals of the state covariances.
struct VariationalState {
    double a_lambda = 0.0;
    double b_lambda = 0.0;
    Vector mu;
    Vector sigma2;
    Matrix m;
    Matrix v;
};

// ---------------------------------------------------------------------------
// Sample bank

/// Fixed standard-normal quantile values, one independently shuffled copy per
/// variable. Column layout: z_theta is M x q; z_state is M x ((n+1) p) with the
/// entry for time i, coordinate j in column i*p + j.
struct QmcSampleBank {
    int samples = 0;
    Index dim_state = 0;
    Index n_points = 0;
    std::uint64_t seed = 0;
    Matrix z_theta;
    Matrix z_state;

    auto state_row(int s, Index i) const { return z_state.row(s).segment(i * dim_state, dim_state); }
};

/// z^(s) = F^{-1}(s/M - 1/(2M)), s = 1..M.
inline std::vector<double> qmc_base_values(int samples) {
    require(samples >= 1, "sample count must be positive");
    const boost::math::normal_distribution<double> std_normal;
    std::vector<double> z(samples);
    for (int s = 1; s <= samples; ++s) {
        const double u = static_cast<double>(s) / samples - 0.5 / samples;
        z[s - 1] = boost::math::quantile(std_normal, u);
    }
    // Exact antisymmetry keeps every column sum at zero.
    for (int s = 0; s < samples / 2; ++s) {
        const double a = 0.5 * (z[samples - 1 - s] - z[s]);
        z[s] = -a;
        z[samples - 1 - s] = a;
    }
    if (samples % 2 == 1)
        z[samples / 2] = 0.0;
    return z;
}

/// n is the number of observation intervals (n + 1 time points).
inline QmcSampleBank make_bank(int samples, Index q, Index p, Index n, std::uint64_t seed) {
    require(samples >= 3 && samples % 2 == 1, "sample count M must be odd and >= 3");
    require(p >= 1 && n >= 0 && q >= 0, "bank dimensions must be nonnegative");
    QmcSampleBank bank;
    bank.samples = samples;
    bank.dim_state = p;
    bank.n_points = n + 1;
    bank.seed = seed;
    bank.z_theta.resize(samples, q);
    bank.z_state.resize(samples, (n + 1) * p);

    const std::vector<double> base = qmc_base_values(samples);
    std::mt19937_64 rng(seed);
    std::vector<double> col(base);
    auto fill = [&](Matrix& target, Index c) {
        col = base;
        std::shuffle(col.begin(), col.end(), rng);
        for (int s = 0; s < samples; ++s)
            target(s, c) = col[s];
    };
    for (Index c = 0; c < q; ++c)
        fill(bank.z_theta, c);
    for (Index c = 0; c < bank.z_state.cols(); ++c)
        fill(bank.z_state, c);
    return bank;
}

/// Draws theta^(s) = mu + sqrt(sigma2) z, x^(s) = m + sqrt(V) z for every s.
struct RealizedSamples {
    std::vector<Vector> theta;
    std::vector<Matrix> x;
};

inline Vector realize_theta(const QmcSampleBank& bank, const VariationalState& st, int s) {
    return st.mu + (st.sigma2.cwiseSqrt().array() * bank.z_theta.row(s).transpose().array()).matrix();
}

inline Vector realize_state(const QmcSampleBank& bank, const VariationalState& st, int s, Index i) {
    return st.m.row(i).transpose() +
           (st.v.row(i).cwiseSqrt().array() * bank.state_row(s, i).array()).matrix().transpose();
}

inline RealizedSamples realize(const QmcSampleBank& bank, const VariationalState& st) {
    require(st.mu.size() == bank.z_theta.cols(), "state and bank disagree on q");
    require(st.m.rows() == bank.n_points && st.m.cols() == bank.dim_state,
            "state and bank disagree on state dimensions");
    RealizedSamples out;
    for (int s = 0; s < bank.samples; ++s) {
        out.theta.push_back(realize_theta(bank, st, s));
        Matrix xs(st.m.rows(), st.m.cols());
        for (Index i = 0; i < st.m.rows(); ++i)
            xs.row(i) = realize_state(bank, st, s, i).transpose();
        out.x.push_back(std::move(xs));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Closed-form lambda factor

/// A_lambda = A0 + p (n + 1) / 2, n = number of intervals.
inline double lambda_closed_form(const PriorConfig& pr, Index p, Index n) {
    return pr.a0 + 0.5 * static_cast<double>(p * (n + 1));
}

/// B_lambda = B0 + 1/2 sum_ij [(m_ij - y_ij)^2 + V_ij].
inline double b_lambda_of(const Matrix& m, const Matrix& v, const Matrix& y, double b0) {
    return b0 + 0.5 * ((m - y).squaredNorm() + v.sum());
}

inline double b_lambda(VariationalState& st, const ObservationSet& data, const PriorConfig& pr) {
    require(st.m.rows() == data.y.rows() && st.m.cols() == data.y.cols(),
            "state and data dimensions differ");
    st.b_lambda = b_lambda_of(st.m, st.v, data.y, pr.b0);
    return st.b_lambda;
}

// ---------------------------------------------------------------------------
// Cost

/// The reduced cost split into its additive terms (constants dropped).
struct CostTerms {
    double lambda_term = 0.0;     // A_lambda log B_lambda
    double state_penalty = 0.0;   // (1/2tau) sum_{i>=1} V_ij
    double log_sigma2 = 0.0;      // -1/2 sum log sigma_k^2
    double log_v = 0.0;           // -1/2 sum log V_ij
    double transition = 0.0;      // (1/(2 tau M)) sum_i sum_s ||m_i - g(x_{i-1}^(s), theta^(s))||^2

    double total() const { return lambda_term + state_penalty + log_sigma2 + log_v + transition; }
};

namespace detail {

inline void check_dims(const VariationalState& st, const ObservationSet& data,
                       const QmcSampleBank& bank, Index q) {
    require(st.mu.size() == q && st.sigma2.size() == q, "variational theta has wrong dimension");
    require(st.m.rows() == data.n_points() && st.m.cols() == data.dim(),
            "variational state means do not match data");
    require(st.v.rows() == st.m.rows() && st.v.cols() == st.m.cols(),
            "variational state variances do not match means");
    require(bank.z_theta.cols() == q && bank.n_points == data.n_points() &&
                bank.dim_state == data.dim(),
            "sample bank dimensions do not match the problem");
}

inline NumericError located(const NumericError& e, Index i, int s) {
    return NumericError(std::string(e.what()) + " (interval " + std::to_string(i) + ", sample " +
                        std::to_string(s + 1) + ")");
}

} // namespace detail

template <OdeModel Sys>
CostTerms cost_terms(const VariationalState& st, const ObservationSet& data, const Sys& sys,
                     const FitConfig& cfg, const QmcSampleBank& bank, const PriorConfig& pr) {
    detail::check_dims(st, data, bank, sys.dim_params());
    const Index n = data.n_intervals();
    const int mcount = bank.samples;

    CostTerms c;
    const double a = lambda_closed_form(pr, data.dim(), n);
    const double b = b_lambda_of(st.m, st.v, data.y, pr.b0);
    c.lambda_term = a * std::log(b);
    c.state_penalty = st.v.bottomRows(n).sum() / (2.0 * cfg.tau);
    c.log_sigma2 = -0.5 * st.sigma2.array().log().sum();
    c.log_v = -0.5 * st.v.array().log().sum();

    double sq = 0.0;
    const Matrix sd = st.v.cwiseSqrt();
    Vector xs(st.m.cols());
    for (int s = 0; s < mcount; ++s) {
        const Vector theta = realize_theta(bank, st, s);
        for (Index i = 1; i <= n; ++i) {
            xs.noalias() = (st.m.row(i - 1).array() + sd.row(i - 1).array() * bank.state_row(s, i - 1).array())
                               .matrix()
                               .transpose();
            try {
                const Vector g = transition(sys, xs, data.times[i - 1], theta,
                                            TransitionConfig{cfg.m_steps, data.interval(i)});
                sq += (st.m.row(i).transpose() - g).squaredNorm();
            } catch (const NumericError& e) {
                throw detail::located(e, i, s);
            }
        }
    }
    c.transition = sq / (2.0 * cfg.tau * mcount);
    return c;
}

template <OdeModel Sys>
double cost(const VariationalState& st, const ObservationSet& data, const Sys& sys,
            const FitConfig& cfg, const QmcSampleBank& bank, const PriorConfig& pr) {
    const double c = cost_terms(st, data, sys, cfg, bank, pr).total();
    if (!std::isfinite(c))
        throw NumericError("non-finite cost");
    return c;
}

// ---------------------------------------------------------------------------
// Initialization

/// Starting state: spline-smoothed means, prior-midpoint theta, moderate
/// variances. Fills empty x0 bounds in `pr` with m_0 +/- 4 residual SDs.
inline VariationalState initial_state(const ObservationSet& data, PriorConfig& pr, Index q,
                                      const std::optional<Vector>& theta_start = std::nullopt) {
    validate(data);
    const Index p = data.dim();
    // Too few points for a cubic fit: start at the data, scale from the spread.
    Matrix fitted = data.y;
    Vector resid_sd = ((data.y.rowwise() - data.y.colwise().mean()).colwise().squaredNorm() /
                       static_cast<double>(data.n_points()))
                          .cwiseSqrt()
                          .transpose();
    if (data.n_points() >= 5) {
        const SmoothFit sm = smooth_columns(data.times, data.y, default_basis_count(data.n_points()));
        fitted = sm.fitted;
        resid_sd = sm.residual_sd;
    }

    VariationalState st;
    st.m = fitted;
    if (pr.x0_lower.size() == 0) {
        pr.x0_lower.resize(p);
        pr.x0_upper.resize(p);
        for (Index j = 0; j < p; ++j) {
            const double half =
                std::max(4.0 * resid_sd[j], 1e-6 * (1.0 + std::abs(st.m(0, j))));
            pr.x0_lower[j] = st.m(0, j) - half;
            pr.x0_upper[j] = st.m(0, j) + half;
        }
    }
    require(pr.x0_lower.size() == p, "x0 prior bounds must have one entry per state");
    for (Index j = 0; j < p; ++j)
        st.m(0, j) = std::clamp(st.m(0, j), pr.x0_lower[j], pr.x0_upper[j]);

    require(!theta_start || theta_start->size() == q, "theta start must have one entry per ODE parameter");
    st.mu.resize(q);
    st.sigma2.resize(q);
    for (Index k = 0; k < q; ++k) {
        const double lo = pr.theta_lower[k], hi = pr.theta_upper[k];
        const bool finite = std::isfinite(lo) && std::isfinite(hi);
        if (theta_start)
            st.mu[k] = (*theta_start)[k];
        else if (finite)
            st.mu[k] = 0.5 * (lo + hi);
        else if (std::isfinite(lo))
            st.mu[k] = lo + 1.0;
        else if (std::isfinite(hi))
            st.mu[k] = hi - 1.0;
        else
            st.mu[k] = 0.0;
        st.sigma2[k] = finite ? std::min(1.0, std::pow((hi - lo) / 6.0, 2)) : 1.0;
    }

    st.v.resize(data.n_points(), p);
    for (Index j = 0; j < p; ++j) {
        const double var = resid_sd[j] * resid_sd[j];
        st.v.col(j).setConstant(std::max(0.1 * var, 1e-12));
    }
    st.a_lambda = lambda_closed_form(pr, p, data.n_intervals());
    st.b_lambda = b_lambda_of(st.m, st.v, data.y, pr.b0);
    return st;
}

} // namespace ssvb
