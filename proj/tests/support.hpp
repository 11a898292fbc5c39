#pragma once

// Independent oracles shared by the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ssvb/ssvb.hpp"

namespace testing_support {

using ssvb::Index;
using ssvb::Matrix;
using ssvb::Vector;

/// Central differences of a vector function; column k is d f / d x_k.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double rel_step = 1e-6) {
    const Vector f0 = f(x);
    Matrix j(f0.size(), x.size());
    for (Index k = 0; k < x.size(); ++k) {
        const double h = rel_step * std::max(1.0, std::abs(x[k]));
        Vector xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return j;
}

inline double fd_derivative(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Max |a - b| / max(|b|, floor) over all entries.
inline double max_rel_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
    double worst = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / std::max(std::abs(b(i, j)), floor));
    return worst;
}

/// Error relative to the largest entry of b, robust to tiny components.
inline double norm_rel_error(const Matrix& a, const Matrix& b) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Textbook RK4 on a plain callable, written without the library.
inline Vector textbook_rk4(const std::function<Vector(const Vector&, double)>& f, Vector x, double t0,
                           double t1, int steps) {
    const double h = (t1 - t0) / steps;
    double t = t0;
    for (int k = 0; k < steps; ++k) {
        const Vector a = f(x, t);
        const Vector b = f(x + 0.5 * h * a, t + 0.5 * h);
        const Vector c = f(x + 0.5 * h * b, t + 0.5 * h);
        const Vector d = f(x + h * c, t + h);
        x += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        t += h;
    }
    return x;
}

/// The defining Cox-de Boor recursion, evaluated naively with the half-open
/// convention and the right end of the domain folded into the last span.
inline double cox_de_boor(const std::vector<double>& knots, int i, int degree, double t) {
    if (degree == 0) {
        const double lo = knots[i], hi = knots[i + 1];
        if (t >= lo && t < hi)
            return 1.0;
        // closed right end: the last nonempty span owns t == knots.back()
        const double end = knots.back();
        if (t == end && hi == end && lo < hi)
            return 1.0;
        return 0.0;
    }
    double out = 0.0;
    const double d1 = knots[i + degree] - knots[i];
    const double d2 = knots[i + degree + 1] - knots[i + 1];
    if (d1 > 0.0)
        out += (t - knots[i]) / d1 * cox_de_boor(knots, i, degree - 1, t);
    if (d2 > 0.0)
        out += (knots[i + degree + 1] - t) / d2 * cox_de_boor(knots, i + 1, degree - 1, t);
    return out;
}

inline ssvb::TvSir test_tvsir(int count = 10, double population = 5e6, double t1 = 100.0) {
    return ssvb::TvSir::uniform(population, 0.0, t1, count);
}

/// Smooth rates with R0(t) oscillating around 1.3 on [0, t1].
inline Vector tvsir_truth(int count) {
    Vector th(2 * count);
    for (int l = 0; l < count; ++l) {
        const double u = static_cast<double>(l) / (count - 1);
        const double g = 0.1 + 0.03 * std::cos(2.0 * M_PI * 1.2 * u);
        th[l] = std::log(g * (1.3 + 0.5 * std::sin(2.0 * M_PI * 1.5 * u)));
        th[count + l] = std::log(g);
    }
    return th;
}

inline Vector fhn_theta() { return (Vector(3) << 0.2, 0.2, 3.0).finished(); }
inline Vector fhn_x0() { return (Vector(2) << -1.0, -1.0).finished(); }

inline Vector l96_theta(int p) {
    Vector th(3 * p);
    for (int j = 0; j < p; ++j)
        th.segment(3 * j, 3) << 1.0, 1.0, 8.0;
    return th;
}

inline Vector l96_x0_4() { return (Vector(4) << 1.0, 8.0, 4.0, 3.0).finished(); }

inline ssvb::ObservationSet fhn_data(std::uint64_t seed, double noise_var = 0.25) {
    return ssvb::simulate_dataset(ssvb::FitzHughNagumo{}, fhn_theta(), fhn_x0(),
                                  ssvb::equidistant_grid(0.0, 20.0, 201), noise_var, seed);
}

inline ssvb::ObservationSet l96_data(std::uint64_t seed, double noise_var = 1.0) {
    return ssvb::simulate_dataset(ssvb::Lorenz96(4), l96_theta(4), l96_x0_4(),
                                  ssvb::equidistant_grid(0.0, 5.0, 51), noise_var, seed);
}

/// Random variational state near the spline start: perturbed means, variances
/// spread over two decades.
inline ssvb::VariationalState random_state(const ssvb::ObservationSet& data, ssvb::PriorConfig pr, Index q,
                                           const Vector& theta_center, double theta_sd, std::mt19937_64& rng) {
    ssvb::VariationalState st = ssvb::initial_state(data, pr, q, theta_center);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Index k = 0; k < q; ++k) {
        st.mu[k] += theta_sd * z(rng);
        st.sigma2[k] = std::pow(10.0, -4.0 + u(rng)) * (1.0 + std::abs(st.mu[k]));
    }
    for (Index i = 0; i < st.m.rows(); ++i)
        for (Index j = 0; j < st.m.cols(); ++j) {
            st.m(i, j) += 0.05 * z(rng);
            st.v(i, j) = std::pow(10.0, -3.0 + u(rng));
        }
    return st;
}

/// |a - b| relative to |b|, falling back to an absolute 1e-8 near zero
/// (the scale 1e-4 makes both limits meet at a score of 1e-4).
inline double fd_score(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-4);
}

struct GradientCheck {
    double mean_worst = 0.0;  // over mu and every m_ij
    double rhs_worst = 0.0;   // over sigma2 and every V_ij
};

/// Five-point differences of the frozen-bank cost (means) and of the
/// variance-free objective (variances) against the analytic sweep. The cost
/// reaches 1e7 on count data, so steps stay large: 1e-3 relative for means,
/// and for variances a Richardson pair at 2e-2 and 4e-2.
template <typename Sys>
GradientCheck gradient_check(const Sys& sys, const ssvb::ObservationSet& d, const ssvb::PriorConfig& pr,
                             const ssvb::FitConfig& cfg, const ssvb::QmcSampleBank& bank,
                             const ssvb::VariationalState& st) {
    const ssvb::MeanGradient g = ssvb::grad_means(st, d, sys, cfg, bank, pr);
    const ssvb::VarianceFixedPointRhs r = ssvb::fixed_point_rhs(st, d, sys, cfg, bank, pr);
    GradientCheck out;
    ssvb::VariationalState w = st;
    auto five_point = [&](double& slot, double h, auto objective) {
        const double x = slot;
        auto at = [&](double v) {
            slot = v;
            return objective();
        };
        const double deriv = (-at(x + 2 * h) + 8 * at(x + h) - 8 * at(x - h) + at(x - 2 * h)) / (12 * h);
        slot = x;
        return deriv;
    };
    auto full = [&] { return ssvb::cost(w, d, sys, cfg, bank, pr); };
    auto fixed = [&] { return ssvb::fixed_point_objective(w, d, sys, cfg, bank, pr); };
    auto mean_fd = [&](double& slot) { return five_point(slot, 1e-3 * std::max(1.0, std::abs(slot)), full); };
    auto var_fd = [&](double& slot) {
        const double h = 2e-2 * slot;
        return 2.0 * (16.0 * five_point(slot, h, fixed) - five_point(slot, 2.0 * h, fixed)) / 15.0;
    };
    for (Index k = 0; k < st.mu.size(); ++k) {
        out.mean_worst = std::max(out.mean_worst, fd_score(g.mu[k], mean_fd(w.mu[k])));
        out.rhs_worst = std::max(out.rhs_worst, fd_score(r.sigma2[k], var_fd(w.sigma2[k])));
    }
    for (Index i = 0; i < st.m.rows(); ++i)
        for (Index j = 0; j < st.m.cols(); ++j) {
            out.mean_worst = std::max(out.mean_worst, fd_score(g.m(i, j), mean_fd(w.m(i, j))));
            out.rhs_worst = std::max(out.rhs_worst, fd_score(r.v(i, j), var_fd(w.v(i, j))));
        }
    return out;
}

} // namespace testing_support
