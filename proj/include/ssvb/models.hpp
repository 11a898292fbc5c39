#pragma once

// Bundled benchmark systems with analytic Jacobians.

#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/splines.hpp"

namespace ssvb {

/// FitzHugh-Nagumo:
///   x1' = theta3 (x1 - x1^3/3 + x2)
///   x2' = -(x1 - theta1 + theta2 x2) / theta3
/// Parameters packed as (theta1, theta2, theta3).
class FitzHughNagumo {
public:
    Index dim_state() const { return 2; }
    Index dim_params() const { return 3; }

    Vector deriv(const Vector& x, double, const Vector& th) const {
        check(th);
        Vector d(2);
        d[0] = th[2] * (x[0] - x[0] * x[0] * x[0] / 3.0 + x[1]);
        d[1] = -(x[0] - th[0] + th[1] * x[1]) / th[2];
        return d;
    }

    Matrix jac_state(const Vector& x, double, const Vector& th) const {
        check(th);
        Matrix j(2, 2);
        j << th[2] * (1.0 - x[0] * x[0]), th[2],
             -1.0 / th[2], -th[1] / th[2];
        return j;
    }

    Matrix jac_params(const Vector& x, double, const Vector& th) const {
        check(th);
        Matrix j(2, 3);
        j << 0.0, 0.0, x[0] - x[0] * x[0] * x[0] / 3.0 + x[1],
             1.0 / th[2], -x[1] / th[2], (x[0] - th[0] + th[1] * x[1]) / (th[2] * th[2]);
        return j;
    }

    std::vector<std::string> param_names() const { return {"theta1", "theta2", "theta3"}; }
    std::vector<std::string> state_names() const { return {"x1", "x2"}; }

private:
    static void check(const Vector& th) {
        if (th[2] == 0.0)
            throw NumericError("FitzHugh-Nagumo theta3 must be nonzero");
    }
};

/// Generalized Lorenz-96 on p sites with circular indexing:
///   X_j' = a_j (X_{j+1} - X_{j-2}) X_{j-1} - d_j X_j + F_j
/// Parameters are site-major triples (a_1, d_1, F_1, a_2, d_2, F_2, ...).
class Lorenz96 {
public:
    explicit Lorenz96(int sites) : p_(sites) {
        require(sites >= 3, "Lorenz-96 needs at least 3 sites");
    }

    Index dim_state() const { return p_; }
    Index dim_params() const { return 3 * p_; }
    int sites() const { return p_; }

    Vector deriv(const Vector& x, double, const Vector& th) const {
        Vector d(p_);
        for (int j = 0; j < p_; ++j)
            d[j] = th[3 * j] * (x[wrap(j + 1)] - x[wrap(j - 2)]) * x[wrap(j - 1)] -
                   th[3 * j + 1] * x[j] + th[3 * j + 2];
        return d;
    }

    Matrix jac_state(const Vector& x, double, const Vector& th) const {
        Matrix jm = Matrix::Zero(p_, p_);
        for (int j = 0; j < p_; ++j) {
            const double a = th[3 * j];
            const int jp1 = wrap(j + 1), jm1 = wrap(j - 1), jm2 = wrap(j - 2);
            jm(j, jp1) += a * x[jm1];
            jm(j, jm2) -= a * x[jm1];
            jm(j, jm1) += a * (x[jp1] - x[jm2]);
            jm(j, j) -= th[3 * j + 1];
        }
        return jm;
    }

    Matrix jac_params(const Vector& x, double, const Vector&) const {
        Matrix jm = Matrix::Zero(p_, 3 * p_);
        for (int j = 0; j < p_; ++j) {
            jm(j, 3 * j) = (x[wrap(j + 1)] - x[wrap(j - 2)]) * x[wrap(j - 1)];
            jm(j, 3 * j + 1) = -x[j];
            jm(j, 3 * j + 2) = 1.0;
        }
        return jm;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (int j = 1; j <= p_; ++j)
            for (int k = 1; k <= 3; ++k)
                out.push_back("theta_" + std::to_string(j) + "_" + std::to_string(k));
        return out;
    }
    std::vector<std::string> state_names() const {
        std::vector<std::string> out;
        for (int j = 1; j <= p_; ++j)
            out.push_back("x" + std::to_string(j));
        return out;
    }

private:
    int wrap(int j) const { return ((j % p_) + p_) % p_; }
    int p_;
};

/// Population and rate bases of the time-varying SIR model.
struct TvSirSpec {
    double population = 0.0;
    SplineBasis basis_beta;
    SplineBasis basis_gamma;
};

/// Time-varying SIR reduced to (I, R) with S = N - I - R:
///   I' = beta(t) I (N - I - R) / N - gamma(t) I
///   R' = gamma(t) I
/// beta = exp(B_beta . c_beta), gamma = exp(B_gamma . c_gamma). Parameters are
/// all c_beta followed by all c_gamma.
class TvSir {
public:
    explicit TvSir(TvSirSpec spec) : spec_(std::move(spec)) {
        require(spec_.population > 0.0, "SIR population must be positive");
        require(spec_.basis_beta.count() > 0 && spec_.basis_gamma.count() > 0,
                "SIR rate bases must be nonempty");
    }

    /// Both rates on the same clamped cubic basis over [t0, t1].
    static TvSir uniform(double population, double t0, double t1, int count) {
        SplineBasis b = SplineBasis::clamped(t0, t1, count);
        return TvSir(TvSirSpec{population, b, b});
    }

    const TvSirSpec& spec() const { return spec_; }
    Index dim_state() const { return 2; }
    Index dim_params() const { return spec_.basis_beta.count() + spec_.basis_gamma.count(); }
    Index beta_count() const { return spec_.basis_beta.count(); }

    double beta(double t, const Vector& th) const {
        return std::exp(curve_eval(spec_.basis_beta, th.head(beta_count()), clamp(spec_.basis_beta, t)));
    }
    double gamma(double t, const Vector& th) const {
        return std::exp(curve_eval(spec_.basis_gamma, th.tail(spec_.basis_gamma.count()),
                                   clamp(spec_.basis_gamma, t)));
    }

    Vector deriv(const Vector& x, double t, const Vector& th) const {
        const double b = beta(t, th), g = gamma(t, th);
        const double n = spec_.population;
        Vector d(2);
        d[0] = b * x[0] * (n - x[0] - x[1]) / n - g * x[0];
        d[1] = g * x[0];
        return d;
    }

    Matrix jac_state(const Vector& x, double t, const Vector& th) const {
        const double b = beta(t, th), g = gamma(t, th);
        const double n = spec_.population;
        Matrix j(2, 2);
        j << b * (n - 2.0 * x[0] - x[1]) / n - g, -b * x[0] / n,
             g, 0.0;
        return j;
    }

    Matrix jac_params(const Vector& x, double t, const Vector& th) const {
        const Index kb = beta_count();
        const double n = spec_.population;
        const double b = beta(t, th), g = gamma(t, th);
        Matrix j = Matrix::Zero(2, dim_params());
        const LocalBasis lb = spec_.basis_beta.local(clamp(spec_.basis_beta, t));
        const LocalBasis lg = spec_.basis_gamma.local(clamp(spec_.basis_gamma, t));
        const double infect = b * x[0] * (n - x[0] - x[1]) / n;
        for (std::size_t r = 0; r < lb.values.size(); ++r)
            j(0, lb.first + static_cast<Index>(r)) = infect * lb.values[r];
        for (std::size_t r = 0; r < lg.values.size(); ++r) {
            const Index c = kb + lg.first + static_cast<Index>(r);
            j(0, c) = -g * x[0] * lg.values[r];
            j(1, c) = g * x[0] * lg.values[r];
        }
        return j;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> out;
        for (Index l = 1; l <= beta_count(); ++l)
            out.push_back("c_beta_" + std::to_string(l));
        for (Index l = 1; l <= spec_.basis_gamma.count(); ++l)
            out.push_back("c_gamma_" + std::to_string(l));
        return out;
    }
    std::vector<std::string> state_names() const { return {"I", "R"}; }

private:
    // Substep times may land one rounding error past the last observation.
    static double clamp(const SplineBasis& b, double t) {
        const double slack = 1e-9 * (b.upper() - b.lower());
        if (t < b.lower() && t >= b.lower() - slack)
            return b.lower();
        if (t > b.upper() && t <= b.upper() + slack)
            return b.upper();
        return t;
    }

    TvSirSpec spec_;
};

inline FitzHughNagumo fitzhugh_nagumo() { return {}; }
inline Lorenz96 lorenz96(int p) { return Lorenz96(p); }
inline TvSir tv_sir(TvSirSpec spec) { return TvSir(std::move(spec)); }

// ---------------------------------------------------------------------------
// Registry of model ids used on the command line: fhn, lorenz96:<p>, tvsir:<nbasis>

using AnyModel = std::variant<FitzHughNagumo, Lorenz96, TvSir>;

/// Information only some models need (TV-SIR: time range and population).
struct ModelContext {
    double t0 = 0.0;
    double t1 = 1.0;
    std::optional<double> population;
};

inline std::string model_list() { return "fhn, lorenz96:<p> (p >= 3), tvsir:<nbasis> (nbasis >= 4)"; }

namespace detail {
inline int parse_model_int(std::string_view s, const std::string& id) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError("bad model id '" + id + "'; known models: " + model_list());
    return v;
}
} // namespace detail

inline AnyModel make_model(const std::string& id, const ModelContext& ctx = {}) {
    const std::string_view sv(id);
    if (sv == "fhn")
        return FitzHughNagumo{};
    if (sv.starts_with("lorenz96:")) {
        const int p = detail::parse_model_int(sv.substr(9), id);
        require(p >= 3, "lorenz96 needs p >= 3");
        return Lorenz96(p);
    }
    if (sv.starts_with("tvsir:")) {
        const int k = detail::parse_model_int(sv.substr(6), id);
        require(k >= 4, "tvsir needs at least 4 basis functions");
        require(ctx.population.has_value(), "tvsir models need a population (--population)");
        return TvSir::uniform(*ctx.population, ctx.t0, ctx.t1, k);
    }
    throw ConfigError("unknown model id '" + id + "'; known models: " + model_list());
}

inline Index model_dim_state(const AnyModel& m) {
    return std::visit([](const auto& s) { return s.dim_state(); }, m);
}
inline Index model_dim_params(const AnyModel& m) {
    return std::visit([](const auto& s) { return s.dim_params(); }, m);
}

} // namespace ssvb
