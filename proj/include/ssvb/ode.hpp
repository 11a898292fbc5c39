#pragma once

// Runge-Kutta transition map of an ODE, its m-fold composition over an
// observation interval, and the analytic Jacobians of both.

#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <utility>

#include "ssvb/linalg.hpp"

namespace ssvb {

/// Anything exposing f(x, t; theta) together with its analytic Jacobians.
template <typename S>
concept OdeModel = requires(const S& s, const Vector& x, double t, const Vector& theta) {
    { s.dim_state() } -> std::convertible_to<Index>;
    { s.dim_params() } -> std::convertible_to<Index>;
    { s.deriv(x, t, theta) } -> std::convertible_to<Vector>;
    { s.jac_state(x, t, theta) } -> std::convertible_to<Matrix>;
    { s.jac_params(x, t, theta) } -> std::convertible_to<Matrix>;
};

/// Type-erased system assembled from callables. Handy for ad hoc systems in
/// tests and for plugging user models into the fitting code.
struct FunctionSystem {
    using Deriv = std::function<Vector(const Vector&, double, const Vector&)>;
    using Jac = std::function<Matrix(const Vector&, double, const Vector&)>;

    Index p = 0;
    Index q = 0;
    Deriv f;
    Jac fx;
    Jac ftheta;

    Index dim_state() const { return p; }
    Index dim_params() const { return q; }
    Vector deriv(const Vector& x, double t, const Vector& th) const { return f(x, t, th); }
    Matrix jac_state(const Vector& x, double t, const Vector& th) const { return fx(x, t, th); }
    Matrix jac_params(const Vector& x, double t, const Vector& th) const { return ftheta(x, t, th); }
};

/// Number of RK4 substeps per observation interval and the interval length.
struct TransitionConfig {
    int step_count = 1;
    double interval = 0.0;
};

/// Value of a transition together with its Jacobians wrt state and parameters.
struct TransitionJacobians {
    Vector value;
    Matrix jac_state;   // p x p
    Matrix jac_params;  // p x q
};

namespace detail {

inline void check_stage(const Vector& k, const char* stage) {
    if (!k.allFinite())
        throw NumericError(std::string("non-finite Runge-Kutta stage ") + stage);
}

} // namespace detail

/// One classical RK4 step of length h starting at (x, t).
template <OdeModel Sys>
Vector rk4_step(const Sys& sys, const Vector& x, double t, double h, const Vector& theta) {
    // Same arithmetic as the textbook form, with one reused stage argument.
    Vector k1 = sys.deriv(x, t, theta);
    k1 *= h;
    detail::check_stage(k1, "K1");
    Vector arg = x + 0.5 * k1;
    Vector k2 = sys.deriv(arg, t + 0.5 * h, theta);
    k2 *= h;
    detail::check_stage(k2, "K2");
    arg.noalias() = x + 0.5 * k2;
    Vector k3 = sys.deriv(arg, t + 0.5 * h, theta);
    k3 *= h;
    detail::check_stage(k3, "K3");
    arg.noalias() = x + k3;
    Vector k4 = sys.deriv(arg, t + h, theta);
    k4 *= h;
    detail::check_stage(k4, "K4");
    arg.noalias() = x + (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    return arg;
}

/// One RK4 step plus its exact Jacobians, propagated stage by stage through
/// the chain rule. Later stages see theta both directly and through the
/// shifted state argument.
template <OdeModel Sys>
TransitionJacobians step_jacobians(const Sys& sys, const Vector& x, double t, double h,
                                   const Vector& theta) {
    const Index p = sys.dim_state();
    const Matrix eye = Matrix::Identity(p, p);

    Vector k1 = h * sys.deriv(x, t, theta);
    detail::check_stage(k1, "K1");
    Matrix jk1x = h * sys.jac_state(x, t, theta);
    Matrix jk1t = h * sys.jac_params(x, t, theta);

    const double tm = t + 0.5 * h;
    Vector x2 = x + 0.5 * k1;
    Vector k2 = h * sys.deriv(x2, tm, theta);
    detail::check_stage(k2, "K2");
    Matrix fx = sys.jac_state(x2, tm, theta);
    Matrix jk2x = h * fx * (eye + 0.5 * jk1x);
    Matrix jk2t = h * (0.5 * fx * jk1t + sys.jac_params(x2, tm, theta));

    Vector x3 = x + 0.5 * k2;
    Vector k3 = h * sys.deriv(x3, tm, theta);
    detail::check_stage(k3, "K3");
    fx = sys.jac_state(x3, tm, theta);
    Matrix jk3x = h * fx * (eye + 0.5 * jk2x);
    Matrix jk3t = h * (0.5 * fx * jk2t + sys.jac_params(x3, tm, theta));

    Vector x4 = x + k3;
    Vector k4 = h * sys.deriv(x4, t + h, theta);
    detail::check_stage(k4, "K4");
    fx = sys.jac_state(x4, t + h, theta);
    Matrix jk4x = h * fx * (eye + jk3x);
    Matrix jk4t = h * (fx * jk3t + sys.jac_params(x4, t + h, theta));

    TransitionJacobians out;
    out.value = x + (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    out.jac_state = eye + (jk1x + 2.0 * jk2x + 2.0 * jk3x + jk4x) / 6.0;
    out.jac_params = (jk1t + 2.0 * jk2t + 2.0 * jk3t + jk4t) / 6.0;
    if (!out.jac_state.allFinite() || !out.jac_params.allFinite())
        throw NumericError("non-finite Runge-Kutta Jacobian");
    return out;
}

inline void validate(const TransitionConfig& cfg) {
    require(cfg.step_count >= 1, "transition step count must be >= 1");
    require(cfg.interval > 0.0, "transition interval must be positive");
}

/// g^(m): step_count RK4 substeps of length interval/step_count.
template <OdeModel Sys>
Vector transition(const Sys& sys, const Vector& x, double t, const Vector& theta,
                  const TransitionConfig& cfg) {
    validate(cfg);
    const double hs = cfg.interval / cfg.step_count;
    Vector cur = rk4_step(sys, x, t, hs, theta);
    for (int k = 1; k < cfg.step_count; ++k)
        cur = rk4_step(sys, cur, t + k * hs, hs, theta);
    return cur;
}

/// Jacobians of g^(m) by composing the single-step Jacobians:
///   J_x <- J_x(step k) * J_x,   J_theta <- J_x(step k) * J_theta + J_theta(step k).
template <OdeModel Sys>
TransitionJacobians transition_jacobians(const Sys& sys, const Vector& x, double t,
                                         const Vector& theta, const TransitionConfig& cfg) {
    validate(cfg);
    const double hs = cfg.interval / cfg.step_count;
    TransitionJacobians acc = step_jacobians(sys, x, t, hs, theta);
    for (int k = 1; k < cfg.step_count; ++k) {
        TransitionJacobians st = step_jacobians(sys, acc.value, t + k * hs, hs, theta);
        acc.jac_params = st.jac_state * acc.jac_params + st.jac_params;
        acc.jac_state = st.jac_state * acc.jac_state;
        acc.value = std::move(st.value);
    }
    return acc;
}

/// Raised by integrate(); carries the first grid index that could not be reached.
class IntegrationError : public NumericError {
public:
    IntegrationError(Index index, double time, const std::string& cause)
        : NumericError("integration failed reaching grid index " + std::to_string(index) +
                       " (t=" + std::to_string(time) + "): " + cause),
          index_(index) {}
    Index index() const { return index_; }

private:
    Index index_;
};

/// Chained RK4 transitions over a time grid with a fixed number of substeps per
/// grid interval. Row i of the result is the state at grid[i].
template <OdeModel Sys>
Matrix integrate(const Sys& sys, const Vector& x0, const Vector& theta, std::span<const double> grid,
                 int substeps_per_interval) {
    require(!grid.empty(), "integration grid is empty");
    require(x0.size() == sys.dim_state(), "initial state has wrong dimension");
    for (std::size_t i = 1; i < grid.size(); ++i)
        require(grid[i] > grid[i - 1], "integration grid must be strictly increasing");

    const Index n = static_cast<Index>(grid.size());
    Matrix out(n, sys.dim_state());
    out.row(0) = x0.transpose();
    Vector cur = x0;
    for (Index i = 1; i < n; ++i) {
        try {
            cur = transition(sys, cur, grid[i - 1], theta,
                             TransitionConfig{substeps_per_interval, grid[i] - grid[i - 1]});
        } catch (const NumericError& e) {
            throw IntegrationError(i, grid[i], e.what());
        }
        out.row(i) = cur.transpose();
    }
    return out;
}

/// Reference-accuracy integration: doubles the substep count until the
/// solution changes by at most 1e-9 (relative) at every grid point.
template <OdeModel Sys>
Matrix integrate(const Sys& sys, const Vector& x0, const Vector& theta, std::span<const double> grid) {
    constexpr double kTol = 1e-9;
    constexpr int kMaxSubsteps = 1 << 14;
    int substeps = 8;
    Matrix coarse = integrate(sys, x0, theta, grid, substeps);
    while (substeps < kMaxSubsteps) {
        substeps *= 2;
        Matrix fine = integrate(sys, x0, theta, grid, substeps);
        const double change =
            ((fine - coarse).array().abs() / (1.0 + fine.array().abs())).maxCoeff();
        coarse = std::move(fine);
        if (change <= kTol)
            break;
    }
    return coarse;
}

} // namespace ssvb
