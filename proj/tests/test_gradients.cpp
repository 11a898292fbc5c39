#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace ssvb;
using namespace testing_support;

namespace {

// x' = theta on one coordinate; q = 0 variant has no parameters at all.
FunctionSystem constant_rate(Index q) {
    FunctionSystem s;
    s.p = 1;
    s.q = q;
    s.f = [q](const Vector&, double, const Vector& th) { return Vector::Constant(1, q ? th[0] : 0.0).eval(); };
    s.fx = [](const Vector&, double, const Vector&) { return Matrix::Zero(1, 1).eval(); };
    s.ftheta = [q](const Vector&, double, const Vector&) { return Matrix::Constant(1, q, 1.0).eval(); };
    return s;
}

ObservationSet series(std::vector<double> t, std::vector<double> y) {
    ObservationSet d;
    d.times = std::move(t);
    d.y = Eigen::Map<Vector>(y.data(), static_cast<Index>(y.size()));
    return d;
}

PriorConfig box(Index q) {
    PriorConfig pr;
    pr.theta_lower = Vector::Constant(q, -10.0);
    pr.theta_upper = Vector::Constant(q, 10.0);
    pr.x0_lower = Vector::Constant(1, -10.0);
    pr.x0_upper = Vector::Constant(1, 10.0);
    return pr;
}

VariationalState state_at(const ObservationSet& d, Index q, double mu, double var) {
    VariationalState st;
    st.mu = Vector::Constant(q, mu);
    st.sigma2 = Vector::Constant(q, var);
    st.m = d.y;
    st.v = Matrix::Constant(d.y.rows(), 1, var);
    return st;
}

} // namespace

TEST(Gradients, FhnRandomStatesMatchFiniteDifferences) {
    std::mt19937_64 rng(31);
    const ObservationSet d = fhn_data(2);
    PriorConfig pr = fhn_priors();
    FitConfig cfg;
    cfg.tau = 1e-5;
    const QmcSampleBank bank = make_bank(11, 3, 2, d.n_intervals(), 3);
    for (int k = 0; k < 3; ++k) {
        const GradientCheck c = gradient_check(FitzHughNagumo{}, d, pr, cfg, bank,
                                               random_state(d, pr, 3, fhn_theta(), 0.05, rng));
        EXPECT_LT(c.mean_worst, 1e-4);
        EXPECT_LT(c.rhs_worst, 1e-4);
    }
}

TEST(Gradients, Lorenz96TwoSubstepsMatchFiniteDifferences) {
    std::mt19937_64 rng(32);
    const ObservationSet d = l96_data(3);
    PriorConfig pr = lorenz96_priors(4);
    FitConfig cfg;
    cfg.m_steps = 2;
    const QmcSampleBank bank = make_bank(11, 12, 4, d.n_intervals(), 4);
    const GradientCheck c =
        gradient_check(Lorenz96(4), d, pr, cfg, bank, random_state(d, pr, 12, l96_theta(4), 0.05, rng));
    EXPECT_LT(c.mean_worst, 1e-4);
    EXPECT_LT(c.rhs_worst, 1e-4);
}

TEST(Gradients, ZeroDynamicsEndpointGradient) {
    const ObservationSet d = series({0.0, 1.0}, {0.3, 1.1});
    PriorConfig pr = box(0);
    FitConfig cfg;
    cfg.tau = 1e-3;
    const QmcSampleBank bank = make_bank(11, 0, 1, 1, 2);
    const VariationalState st = state_at(d, 0, 0.0, 1e-6);
    const MeanGradient g = grad_means(st, d, constant_rate(0), cfg, bank, pr);
    // m = y kills the data term; centered samples leave (m0 - m1) / tau
    EXPECT_NEAR(g.m(0, 0), (0.3 - 1.1) / 1e-3, 1e-7);
    EXPECT_NEAR(g.m(1, 0), (1.1 - 0.3) / 1e-3, 1e-7);
    EXPECT_EQ(g.mu.size(), 0);
    EXPECT_EQ(fixed_point_rhs(st, d, constant_rate(0), cfg, bank, pr).sigma2.size(), 0);
}

TEST(Gradients, ShiftLeavesSampleTermUnchanged) {
    const ObservationSet d = series({0.0, 0.5, 1.0}, {0.3, 1.1, 0.9});
    ObservationSet shifted = d;
    shifted.y.array() += 5.0;
    PriorConfig pr = box(0);
    FitConfig cfg;
    const QmcSampleBank bank = make_bank(11, 0, 1, 2, 2);
    VariationalState st = state_at(d, 0, 0.0, 1e-3);
    st.m(1, 0) = 0.7;
    VariationalState sh = st;
    sh.m.array() += 5.0;
    const MeanGradient a = grad_means(st, d, constant_rate(0), cfg, bank, pr);
    const MeanGradient b = grad_means(sh, shifted, constant_rate(0), cfg, bank, pr);
    EXPECT_LT(norm_rel_error(b.m, a.m), 1e-9);
}

TEST(Gradients, LastPointRhsIsExact) {
    std::mt19937_64 rng(5);
    const ObservationSet d = fhn_data(1);
    PriorConfig pr = fhn_priors();
    FitConfig cfg;
    cfg.tau = 1e-5;
    const QmcSampleBank bank = make_bank(11, 3, 2, d.n_intervals(), 1);
    const VariationalState st = random_state(d, pr, 3, fhn_theta(), 0.05, rng);
    const VarianceFixedPointRhs r = fixed_point_rhs(st, d, FitzHughNagumo{}, cfg, bank, pr);
    const double ab = lambda_closed_form(pr, 2, d.n_intervals()) / b_lambda_of(st.m, st.v, d.y, pr.b0);
    const Index n = d.n_intervals();
    EXPECT_DOUBLE_EQ(r.v(n, 0), ab + 1.0 / cfg.tau);
    EXPECT_DOUBLE_EQ(r.v(n, 1), ab + 1.0 / cfg.tau);

    VariationalState up = st;
    fixed_point_update(up, r);
    EXPECT_DOUBLE_EQ(up.v(n, 0), 1.0 / (ab + 1.0 / cfg.tau));
}

TEST(FixedPoint, NonPositiveRhsDampsAndKeepsPositivity) {
    VariationalState st;
    st.sigma2 = (Vector(2) << 1e-3, 1e-11).finished();
    st.v = (Matrix(1, 2) << 0.5, 2.0).finished();
    VarianceFixedPointRhs r;
    r.sigma2 = (Vector(2) << -1.0, 0.0).finished();
    r.v = (Matrix(1, 2) << 4.0, std::numeric_limits<double>::quiet_NaN()).finished();
    const FixedPointStep step = fixed_point_update(st, r);
    EXPECT_EQ(step.damped, 3);
    EXPECT_DOUBLE_EQ(st.sigma2[0], 1e-4);
    EXPECT_DOUBLE_EQ(st.sigma2[1], kVarianceFloor);
    EXPECT_DOUBLE_EQ(st.v(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(st.v(0, 1), 0.2);
}

TEST(FixedPoint, HeldCoordinateIsDampedOncePerPass) {
    VariationalState st;
    st.sigma2 = Vector::Constant(1, 1e-2);
    st.v = Matrix::Constant(1, 1, 0.5);
    VarianceFixedPointRhs r;
    r.sigma2 = Vector::Constant(1, -3.0);
    r.v = Matrix::Constant(1, 1, 8.0);
    HeldSet held;
    EXPECT_EQ(fixed_point_update(st, r, &held).damped, 1);
    EXPECT_DOUBLE_EQ(st.sigma2[0], 1e-3);
    // still nonpositive: held, not cut again
    EXPECT_EQ(fixed_point_update(st, r, &held).damped, 0);
    EXPECT_DOUBLE_EQ(st.sigma2[0], 1e-3);
    EXPECT_DOUBLE_EQ(st.v(0, 0), 0.125);
    // a positive rhs is applied as usual
    r.sigma2[0] = 4.0;
    fixed_point_update(st, r, &held);
    EXPECT_DOUBLE_EQ(st.sigma2[0], 0.25);
    // without the set every call damps
    r.sigma2[0] = -3.0;
    fixed_point_update(st, r);
    fixed_point_update(st, r);
    EXPECT_DOUBLE_EQ(st.sigma2[0], 2.5e-3);
}

TEST(FixedPoint, SameLimitFromTwoInitializations) {
    std::mt19937_64 rng(6);
    const ObservationSet d = fhn_data(1);
    PriorConfig pr = fhn_priors();
    FitConfig cfg;
    cfg.tau = 1e-5;
    const QmcSampleBank bank = make_bank(11, 3, 2, d.n_intervals(), 1);
    VariationalState a = random_state(d, pr, 3, fhn_theta(), 0.01, rng);
    VariationalState b = a;
    a.sigma2.setConstant(1e-3);
    a.v.setConstant(1e-3);
    b.sigma2.setConstant(1e-7);
    b.v.setConstant(1e-8);
    const FixedPointReport ra = iterate_fixed_point(a, d, FitzHughNagumo{}, cfg, bank, pr, 1e-10, 500);
    const FixedPointReport rb = iterate_fixed_point(b, d, FitzHughNagumo{}, cfg, bank, pr, 1e-10, 500);
    EXPECT_TRUE(ra.converged);
    EXPECT_TRUE(rb.converged);
    EXPECT_LT(max_rel_error(a.sigma2, b.sigma2), 1e-7);
    EXPECT_LT(max_rel_error(a.v, b.v), 1e-7);
    EXPECT_GT(a.v.minCoeff(), 0.0);
}

// f = theta on one interval: the frozen cost is minimized at m = y and
// mu = (y1 - y0) / h whatever the variances are.
TEST(Gradients, VanishAtAnalyticMinimum) {
    const ObservationSet d = series({0.0, 0.4}, {0.2, 1.0});
    PriorConfig pr = box(1);
    FitConfig cfg;
    cfg.tau = 1e-3;
    const QmcSampleBank bank = make_bank(11, 1, 1, 1, 8);
    const VariationalState st = state_at(d, 1, (1.0 - 0.2) / 0.4, 1e-4);
    const MeanGradient g = grad_means(st, d, constant_rate(1), cfg, bank, pr);
    EXPECT_LE(std::sqrt(g.mu.squaredNorm() + g.m.squaredNorm()), 1e-5);
}
