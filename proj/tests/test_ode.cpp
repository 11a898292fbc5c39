#include <gtest/gtest.h>

#include <boost/numeric/odeint.hpp>
#include <random>

#include "support.hpp"

using namespace ssvb;
using namespace testing_support;

namespace {

FunctionSystem decay() {
    FunctionSystem s;
    s.p = 1;
    s.q = 1;
    s.f = [](const Vector& x, double, const Vector& th) { return Vector(-th[0] * x); };
    s.fx = [](const Vector&, double, const Vector& th) { return Matrix::Constant(1, 1, -th[0]); };
    s.ftheta = [](const Vector& x, double, const Vector&) { return Matrix::Constant(1, 1, -x[0]); };
    return s;
}

// x' = theta, linear in theta with K's independent of x.
FunctionSystem forcing() {
    FunctionSystem s;
    s.p = 1;
    s.q = 1;
    s.f = [](const Vector&, double, const Vector& th) { return Vector(th); };
    s.fx = [](const Vector&, double, const Vector&) { return Matrix::Zero(1, 1); };
    s.ftheta = [](const Vector&, double, const Vector&) { return Matrix::Identity(1, 1); };
    return s;
}

FunctionSystem still() {
    FunctionSystem s;
    s.p = 2;
    s.q = 0;
    s.f = [](const Vector&, double, const Vector&) { return Vector::Zero(2).eval(); };
    s.fx = [](const Vector&, double, const Vector&) { return Matrix::Zero(2, 2).eval(); };
    s.ftheta = [](const Vector&, double, const Vector&) { return Matrix::Zero(2, 0).eval(); };
    return s;
}

// x' = x^2 blows up at t = 1 / x0.
FunctionSystem blowup() {
    FunctionSystem s;
    s.p = 1;
    s.q = 1;
    s.f = [](const Vector& x, double, const Vector&) { return Vector(x.array().square()); };
    s.fx = [](const Vector& x, double, const Vector&) { return Matrix::Constant(1, 1, 2.0 * x[0]); };
    s.ftheta = [](const Vector&, double, const Vector&) { return Matrix::Zero(1, 1); };
    return s;
}

// Time-dependent forcing exercises the stage times.
FunctionSystem forced() {
    FunctionSystem s;
    s.p = 2;
    s.q = 2;
    s.f = [](const Vector& x, double t, const Vector& th) {
        Vector d(2);
        d << th[0] * x[1] + std::sin(t), -x[0] * x[1] * th[1] + t * t;
        return d;
    };
    s.fx = [](const Vector& x, double, const Vector& th) {
        Matrix j(2, 2);
        j << 0.0, th[0], -x[1] * th[1], -x[0] * th[1];
        return j;
    };
    s.ftheta = [](const Vector& x, double, const Vector&) {
        Matrix j(2, 2);
        j << x[1], 0.0, 0.0, -x[0] * x[1];
        return j;
    };
    return s;
}

template <typename Sys>
std::function<Vector(const Vector&, double)> as_callable(const Sys& sys, const Vector& th) {
    return [&sys, th](const Vector& x, double t) { return sys.deriv(x, t, th); };
}

template <typename Sys>
void expect_step_jacobians(const Sys& sys, const Vector& x, double t, double h, const Vector& th,
                           double tol) {
    const TransitionJacobians tj = step_jacobians(sys, x, t, h, th);
    EXPECT_LT(norm_rel_error(tj.value, rk4_step(sys, x, t, h, th)), 1e-15);
    const Matrix jx = fd_jacobian([&](const Vector& xx) { return rk4_step(sys, xx, t, h, th); }, x);
    const Matrix jt = fd_jacobian([&](const Vector& tt) { return rk4_step(sys, x, t, h, tt); }, th);
    EXPECT_LT(norm_rel_error(tj.jac_state, jx), tol);
    EXPECT_LT(norm_rel_error(tj.jac_params, jt), tol);
}

} // namespace

TEST(Rk4, DecayTwoSubstepsMatchesSquaredTaylorPolynomial) {
    const auto taylor4 = [](double h) { return 1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24; };
    const Vector out = transition(decay(), Vector::Ones(1), 0.0, Vector::Ones(1), TransitionConfig{2, 0.1});
    EXPECT_NEAR(out[0], std::pow(taylor4(0.05), 2), 1e-15);
    // RK4 with h = 0.05 is within 1e-8 of exp(-0.1)
    EXPECT_NEAR(out[0], std::exp(-0.1), 1e-8);
}

TEST(Rk4, StepMatchesTextbookImplementation) {
    const FitzHughNagumo fhn;
    const Vector x = (Vector(2) << 0.3, -0.7).finished();
    EXPECT_LT(norm_rel_error(rk4_step(fhn, x, 0.0, 0.1, fhn_theta()),
                             textbook_rk4(as_callable(fhn, fhn_theta()), x, 0.0, 0.1, 1)),
              1e-15);
    const Lorenz96 l96(5);
    const Vector y = (Vector(5) << 1, 2, -3, 4, 0.5).finished();
    EXPECT_LT(norm_rel_error(transition(l96, y, 0.0, l96_theta(5), TransitionConfig{3, 0.1}),
                             textbook_rk4(as_callable(l96, l96_theta(5)), y, 0.0, 0.1, 3)),
              1e-14);
    const FunctionSystem frc = forced();
    const Vector th = (Vector(2) << 0.8, 0.3).finished();
    EXPECT_LT(norm_rel_error(transition(frc, x, 1.5, th, TransitionConfig{4, 0.2}),
                             textbook_rk4(as_callable(frc, th), x, 1.5, 1.7, 4)),
              1e-14);
}

TEST(Rk4, NonFiniteStageRaises) {
    FitzHughNagumo fhn;
    const Vector th = (Vector(3) << 0.2, 0.2, 3.0).finished();
    Vector x(2);
    x << std::numeric_limits<double>::infinity(), 0.0;
    EXPECT_THROW(rk4_step(fhn, x, 0.0, 0.1, th), NumericError);
}

TEST(Rk4, StepJacobiansMatchFiniteDifferences) {
    expect_step_jacobians(FitzHughNagumo{}, (Vector(2) << -1.2, 0.4).finished(), 0.0, 0.1, fhn_theta(), 1e-7);
    expect_step_jacobians(Lorenz96(4), l96_x0_4(), 0.0, 0.05, l96_theta(4), 1e-7);
    expect_step_jacobians(forced(), (Vector(2) << 0.5, -1.5).finished(), 2.0, 0.3,
                          (Vector(2) << 0.8, 0.3).finished(), 1e-7);
    const TvSir sir = test_tvsir(10);
    expect_step_jacobians(sir, (Vector(2) << 300.0, 120.0).finished(), 37.0, 1.0, tvsir_truth(10), 1e-6);
}

TEST(Rk4, TransitionJacobiansMatchFiniteDifferencesForAllStepCounts) {
    for (int m = 1; m <= 4; ++m) {
        SCOPED_TRACE(m);
        const Lorenz96 l96(4);
        const TransitionConfig cfg{m, 0.1};
        const TransitionJacobians tj = transition_jacobians(l96, l96_x0_4(), 0.0, l96_theta(4), cfg);
        const Matrix jx = fd_jacobian(
            [&](const Vector& x) { return transition(l96, x, 0.0, l96_theta(4), cfg); }, l96_x0_4());
        const Matrix jt = fd_jacobian(
            [&](const Vector& t) { return transition(l96, l96_x0_4(), 0.0, t, cfg); }, l96_theta(4));
        EXPECT_LT(norm_rel_error(tj.jac_state, jx), 1e-7);
        EXPECT_LT(norm_rel_error(tj.jac_params, jt), 1e-7);
        EXPECT_LT(norm_rel_error(tj.value, transition(l96, l96_x0_4(), 0.0, l96_theta(4), cfg)), 1e-15);
    }
}

TEST(Rk4, CompositionIdentity) {
    const FitzHughNagumo fhn;
    const Vector x = (Vector(2) << -1.0, 1.0).finished();
    const Vector six = transition(fhn, x, 0.0, fhn_theta(), TransitionConfig{6, 0.3});
    const Vector half = transition(fhn, x, 0.0, fhn_theta(), TransitionConfig{3, 0.15});
    const Vector twice = transition(fhn, half, 0.15, fhn_theta(), TransitionConfig{3, 0.15});
    EXPECT_LT(norm_rel_error(six, twice), 1e-12);
}

TEST(Rk4, GlobalErrorIsFourthOrder) {
    const Lorenz96 l96(4);
    const std::vector<double> span{0.0, 0.1};
    const Vector exact = integrate(l96, l96_x0_4(), l96_theta(4), span).row(1).transpose();
    const double e1 = (transition(l96, l96_x0_4(), 0.0, l96_theta(4), TransitionConfig{2, 0.1}) - exact).norm();
    const double e2 = (transition(l96, l96_x0_4(), 0.0, l96_theta(4), TransitionConfig{4, 0.1}) - exact).norm();
    EXPECT_GT(e1 / e2, 14.0);
    EXPECT_LT(e1 / e2, 18.0);
}

TEST(Integrate, LinearDecayMatchesExponential) {
    const std::vector<double> grid{0.0, 0.5, 1.0, 2.0};
    const Matrix traj = integrate(decay(), Vector::Ones(1), Vector::Constant(1, 0.7), grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
        EXPECT_NEAR(traj(static_cast<Index>(i), 0), std::exp(-0.7 * grid[i]), 1e-10);
}

TEST(Integrate, FixedSubstepsMatchChainedTransitions) {
    const FitzHughNagumo fhn;
    const std::vector<double> grid{0.0, 0.1, 0.3, 0.35};
    const Matrix traj = integrate(fhn, fhn_x0(), fhn_theta(), grid, 2);
    Vector x = fhn_x0();
    for (std::size_t i = 1; i < grid.size(); ++i) {
        x = textbook_rk4(as_callable(fhn, fhn_theta()), x, grid[i - 1], grid[i], 2);
        EXPECT_LT(norm_rel_error(traj.row(static_cast<Index>(i)).transpose(), x), 1e-14);
    }
}

TEST(Integrate, BlowUpReportsGridIndex) {
    const std::vector<double> grid{0.0, 0.5, 0.9, 1.5, 2.0};
    try {
        integrate(blowup(), Vector::Ones(1), Vector::Zero(1), grid, 4);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        // the solution is finite up to t = 1
        EXPECT_GE(e.index(), 3);
    }
}

TEST(Integrate, RejectsBadGrid) {
    const std::vector<double> grid{0.0, 1.0, 1.0};
    EXPECT_THROW(integrate(decay(), Vector::Ones(1), Vector::Ones(1), grid, 1), ConfigError);
    EXPECT_THROW(transition(decay(), Vector::Ones(1), 0.0, Vector::Ones(1), TransitionConfig{0, 0.1}),
                 ConfigError);
}

TEST(Rk4, SingleStepDecayIsTaylorTruncation) {
    const double h = 0.1;
    const double taylor = 1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24;
    EXPECT_NEAR(rk4_step(decay(), Vector::Ones(1), 0.0, h, Vector::Ones(1))[0], taylor, 4e-16);
    const TransitionJacobians tj = step_jacobians(decay(), Vector::Ones(1), 0.0, h, Vector::Ones(1));
    EXPECT_NEAR(tj.jac_state(0, 0), taylor, 4e-16);
    const TransitionJacobians two =
        transition_jacobians(decay(), Vector::Ones(1), 0.0, Vector::Ones(1), TransitionConfig{2, h});
    const double half = 1 - 0.05 + 0.05 * 0.05 / 2 - std::pow(0.05, 3) / 6 + std::pow(0.05, 4) / 24;
    EXPECT_NEAR(two.jac_state(0, 0), half * half, 1e-15);
}

TEST(Rk4, ConstantDynamicsIsIdentity) {
    const Vector x = (Vector(2) << 3.0, -2.0).finished();
    EXPECT_EQ(rk4_step(still(), x, 4.2, 0.7, Vector()), x);
    EXPECT_EQ(transition(still(), x, 0.0, Vector(), TransitionConfig{5, 2.0}), x);
    const Matrix traj = integrate(still(), x, Vector(), std::vector<double>{0.0, 1.0, 3.0});
    for (Index i = 0; i < traj.rows(); ++i)
        EXPECT_EQ(traj.row(i).transpose(), x);
}

TEST(Rk4, ParameterJacobianOfConstantForcingIsStep) {
    const TransitionJacobians tj = step_jacobians(forcing(), Vector::Zero(1), 0.0, 0.1, Vector::Constant(1, 2.5));
    EXPECT_DOUBLE_EQ(tj.jac_params(0, 0), 0.1);
    EXPECT_DOUBLE_EQ(tj.jac_state(0, 0), 1.0);
}

TEST(Rk4, SingleSubstepTransitionIsBitIdenticalToStep) {
    const FitzHughNagumo fhn;
    const Vector a = rk4_step(fhn, fhn_x0(), 0.3, 0.1, fhn_theta());
    const Vector b = transition(fhn, fhn_x0(), 0.3, fhn_theta(), TransitionConfig{1, 0.1});
    EXPECT_EQ(a, b);
    const TransitionJacobians s = step_jacobians(fhn, fhn_x0(), 0.3, 0.1, fhn_theta());
    const TransitionJacobians t = transition_jacobians(fhn, fhn_x0(), 0.3, fhn_theta(), TransitionConfig{1, 0.1});
    EXPECT_EQ(s.jac_state, t.jac_state);
    EXPECT_EQ(s.jac_params, t.jac_params);
}

TEST(Rk4, FhnStepMatchesTextbookAtProtocolPoint) {
    const FitzHughNagumo fhn;
    EXPECT_LT(norm_rel_error(rk4_step(fhn, fhn_x0(), 0.0, 0.1, fhn_theta()),
                             textbook_rk4(as_callable(fhn, fhn_theta()), fhn_x0(), 0.0, 0.1, 1)),
              1e-12);
    const Lorenz96 l96(4);
    EXPECT_LT(norm_rel_error(transition(l96, l96_x0_4(), 0.0, l96_theta(4), TransitionConfig{2, 0.1}),
                             textbook_rk4(as_callable(l96, l96_theta(4)), l96_x0_4(), 0.0, 0.1, 2)),
              1e-12);
}

// >= 100 random draws per model of (x, t, theta, h, m).
TEST(Rk4, RandomJacobianDrawsMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> msteps(1, 4);
    const FitzHughNagumo fhn;
    const Lorenz96 l96(5);
    const TvSir sir = test_tvsir(8);
    double worst = 0.0;
    auto check = [&](const auto& sys, const Vector& x, double t, const Vector& th, double h) {
        const TransitionConfig cfg{msteps(rng), h};
        const TransitionJacobians tj = transition_jacobians(sys, x, t, th, cfg);
        const Matrix jx = fd_jacobian([&](const Vector& xx) { return transition(sys, xx, t, th, cfg); }, x);
        const Matrix jt = fd_jacobian([&](const Vector& tt) { return transition(sys, x, t, tt, cfg); }, th);
        worst = std::max({worst, norm_rel_error(tj.jac_state, jx), norm_rel_error(tj.jac_params, jt)});
    };
    for (int k = 0; k < 100; ++k) {
        Vector xf(2), thf(3);
        xf << 2 * u(rng), 2 * u(rng);
        thf << 0.5 * u(rng), 0.5 * u(rng), 3.0 + u(rng);
        check(fhn, xf, u(rng), thf, 0.1 + 0.05 * u(rng));

        Vector xl = 4.0 * Vector::NullaryExpr(5, [&] { return u(rng); });
        Vector tl = l96_theta(5) + 0.3 * Vector::NullaryExpr(15, [&] { return u(rng); });
        check(l96, xl, 0.0, tl, 0.05 + 0.02 * u(rng));

        Vector xs(2);
        xs << 500.0 * (1.5 + u(rng)), 300.0 * (1.5 + u(rng));
        const double t = 50.0 + 45.0 * u(rng);
        const double h = std::min(1.0, 99.9 - t);
        check(sir, xs, t, tvsir_truth(8) + 0.2 * Vector::NullaryExpr(16, [&] { return u(rng); }), h);
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Rk4, LinearInvariantPreservedBySir) {
    const TvSir sir = test_tvsir(10, 1e4);
    Vector x(2);
    x << 1200.0, 3400.0;
    // Three-state SIR with S explicit; c = (1, 1, 1) annihilates f.
    const Vector th = tvsir_truth(10);
    FunctionSystem three;
    three.p = 3;
    three.q = th.size();
    three.f = [&](const Vector& z, double t, const Vector& c) {
        const double b = sir.beta(t, c), g = sir.gamma(t, c), n = z.sum();
        Vector d(3);
        d << b * z[0] * z[2] / n - g * z[0], g * z[0], -b * z[0] * z[2] / n;
        return d;
    };
    three.fx = [](const Vector&, double, const Vector&) { return Matrix::Zero(3, 3).eval(); };
    three.ftheta = [&](const Vector&, double, const Vector&) { return Matrix::Zero(3, th.size()).eval(); };
    Vector z(3);
    z << x[0], x[1], 1e4 - x.sum();
    const Vector out = transition(three, z, 10.0, th, TransitionConfig{3, 5.0});
    EXPECT_LE(std::abs(out.sum() - z.sum()), 1e-12 * z.sum());
    // The reduced form keeps S implied; it must agree with the three-state run.
    const Vector red = transition(sir, x, 10.0, th, TransitionConfig{3, 5.0});
    EXPECT_LT(norm_rel_error(red, out.head(2)), 1e-12);
}

TEST(Integrate, FhnTruthMatchesIndependentAdaptiveIntegrator) {
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 2>;
    const FitzHughNagumo fhn;
    const std::vector<double> grid = equidistant_grid(0.0, 20.0, 201);
    const Matrix traj = integrate(fhn, fhn_x0(), fhn_theta(), grid);
    const double a = 0.2, b = 0.2, c = 3.0;
    auto rhs = [&](const State& x, State& d, double) {
        d[0] = c * (x[0] - x[0] * x[0] * x[0] / 3.0 + x[1]);
        d[1] = -(x[0] - a + b * x[1]) / c;
    };
    State x{-1.0, -1.0};
    auto stepper = odeint::make_dense_output(1e-12, 1e-12, odeint::runge_kutta_dopri5<State>());
    std::vector<State> ref;
    odeint::integrate_times(stepper, rhs, x, grid.begin(), grid.end(), 1e-3,
                            [&](const State& s, double) { ref.push_back(s); });
    ASSERT_EQ(ref.size(), grid.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (int j = 0; j < 2; ++j)
            worst = std::max(worst, std::abs(traj(static_cast<Index>(i), j) - ref[i][j]));
    EXPECT_LT(worst, 1e-6);
}

TEST(Integrate, DecayReachesInverseE) {
    const Matrix traj = integrate(decay(), Vector::Ones(1), Vector::Ones(1), std::vector<double>{0.0, 1.0});
    EXPECT_NEAR(traj(1, 0), std::exp(-1.0), 1e-8);
}
