#pragma once

// Helpers for fitting the time-varying SIR model to (I, R) series.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/models.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/splines.hpp"
#include "ssvb/vb.hpp"

namespace ssvb {

/// Rough rate curves from finite differences of the data:
///   gamma ~ dR / I,  beta ~ (dI + dR) N / (I S)
/// evaluated at interval midpoints, floored at `rate_floor`, then projected
/// onto each log-rate basis by least squares.
inline Vector tvsir_start(const TvSir& sys, const ObservationSet& data, double rate_floor = 1e-3) {
    validate(data);
    require(data.dim() == 2, "TV-SIR data needs exactly two columns (I, R)");
    const double n_pop = sys.spec().population;
    const Index n = data.n_intervals();
    std::vector<double> mid(n);
    std::vector<double> log_beta(n), log_gamma(n);
    for (Index i = 1; i <= n; ++i) {
        const double h = data.interval(i);
        const double i_mid = 0.5 * (data.y(i, 0) + data.y(i - 1, 0));
        const double r_mid = 0.5 * (data.y(i, 1) + data.y(i - 1, 1));
        const double di = (data.y(i, 0) - data.y(i - 1, 0)) / h;
        const double dr = (data.y(i, 1) - data.y(i - 1, 1)) / h;
        const double s_mid = n_pop - i_mid - r_mid;
        double g = rate_floor, b = rate_floor;
        if (i_mid > 0.0) {
            g = std::max(dr / i_mid, rate_floor);
            if (s_mid > 0.0)
                b = std::max((di + dr) * n_pop / (i_mid * s_mid), rate_floor);
        }
        mid[i - 1] = 0.5 * (data.times[i] + data.times[i - 1]);
        log_beta[i - 1] = std::log(b);
        log_gamma[i - 1] = std::log(g);
    }
    const Index kb = sys.beta_count();
    const Index kg = sys.dim_params() - kb;
    require(n >= std::max(kb, kg), "TV-SIR needs at least as many intervals as basis functions per rate");
    Vector theta(sys.dim_params());
    const Vector lb = Eigen::Map<const Vector>(log_beta.data(), n);
    const Vector lg = Eigen::Map<const Vector>(log_gamma.data(), n);
    theta.head(kb) = lsq_fit(mid, lb, sys.spec().basis_beta);
    theta.tail(kg) = lsq_fit(mid, lg, sys.spec().basis_gamma);
    return theta;
}

/// Flat priors on the spline coefficients and a flat gamma prior for lambda.
inline PriorConfig tvsir_priors(const TvSir& sys, double a0 = 0.01, double b0 = 0.01) {
    PriorConfig pr;
    pr.a0 = a0;
    pr.b0 = b0;
    const double inf = std::numeric_limits<double>::infinity();
    pr.theta_lower = Vector::Constant(sys.dim_params(), -inf);
    pr.theta_upper = Vector::Constant(sys.dim_params(), inf);
    return pr;
}

/// Gaussian log-likelihood of y around the state means at noise precision lambda.
inline double gaussian_loglik(const Matrix& y, const Matrix& m, double lambda) {
    require(y.rows() == m.rows() && y.cols() == m.cols(), "loglik shape mismatch");
    require(lambda > 0.0, "precision must be positive");
    const double count = static_cast<double>(y.size());
    return 0.5 * count * (std::log(lambda) - std::log(2.0 * std::numbers::pi)) -
           0.5 * lambda * (y - m).squaredNorm();
}

} // namespace ssvb
