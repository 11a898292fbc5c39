#pragma once

// B-spline bases (Cox-de Boor) and ordinary least-squares curve fitting.

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "ssvb/linalg.hpp"

namespace ssvb {

/// Nonzero entries of a basis evaluation: values[r] belongs to basis
/// function first + r.
struct LocalBasis {
    Index first = 0;
    std::vector<double> values;
};

class SplineBasis {
public:
    SplineBasis() = default;

    SplineBasis(int degree, std::vector<double> knots) : degree_(degree), knots_(std::move(knots)) {
        require(degree_ >= 0, "spline degree must be nonnegative");
        require(static_cast<int>(knots_.size()) >= degree_ + 2,
                "spline needs at least degree + 2 knots");
        require(std::is_sorted(knots_.begin(), knots_.end()), "spline knots must be nondecreasing");
        require(lower() < upper(), "spline domain is empty");
    }

    /// Clamped basis with `count` functions: equidistant breakpoints on
    /// [t0, t1] and each end knot repeated degree + 1 times.
    static SplineBasis clamped(double t0, double t1, int count, int degree = 3) {
        require(t1 > t0, "spline range must satisfy t0 < t1");
        require(count >= degree + 1, "clamped spline needs count >= degree + 1");
        const int intervals = count - degree;
        std::vector<double> knots;
        knots.reserve(count + degree + 1);
        for (int k = 0; k < degree; ++k)
            knots.push_back(t0);
        for (int k = 0; k <= intervals; ++k)
            knots.push_back(k == intervals ? t1 : t0 + (t1 - t0) * k / intervals);
        for (int k = 0; k < degree; ++k)
            knots.push_back(t1);
        return SplineBasis(degree, std::move(knots));
    }

    int degree() const { return degree_; }
    const std::vector<double>& knots() const { return knots_; }
    Index count() const { return static_cast<Index>(knots_.size()) - degree_ - 1; }
    double lower() const { return knots_[degree_]; }
    double upper() const { return knots_[count()]; }
    bool contains(double t) const { return t >= lower() && t <= upper(); }

    /// Cox-de Boor triangle restricted to the knot span holding t. The right
    /// end of the domain is treated as closed.
    LocalBasis local(double t) const {
        std::vector<double> n(degree_ + 1);
        const Index first = local_into(t, n.data());
        return LocalBasis{first, std::move(n)};
    }

    /// Allocation-free form of local(): writes degree + 1 values to `n` and
    /// returns the index of the first one.
    Index local_into(double t, double* n) const {
        if (!contains(t)) {
            std::ostringstream os;
            os << "time " << t << " outside spline domain [" << lower() << ", " << upper() << "]";
            throw ConfigError(os.str());
        }
        const Index span = find_span(t);
        const int d = degree_;
        n[0] = 1.0;
        for (int j = 1; j <= d; ++j) {
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double right = knots_[span + r + 1] - t;
                const double left = t - knots_[span + 1 - j + r];
                const double tmp = n[r] / (right + left);
                n[r] = saved + right * tmp;
                saved = left * tmp;
            }
            n[j] = saved;
        }
        return span - d;
    }

    Vector eval(double t) const {
        Vector out = Vector::Zero(count());
        const LocalBasis lb = local(t);
        for (std::size_t r = 0; r < lb.values.size(); ++r)
            out[lb.first + static_cast<Index>(r)] = lb.values[r];
        return out;
    }

private:
    Index find_span(double t) const {
        const Index last = count() - 1;
        if (t >= knots_[last + 1]) {
            Index k = last;
            while (k > degree_ && knots_[k] == knots_[k + 1])
                --k;
            return k;
        }
        auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + last + 1, t);
        return static_cast<Index>(it - knots_.begin()) - 1;
    }

    int degree_ = 0;
    std::vector<double> knots_;
};

inline Vector basis_eval(const SplineBasis& basis, double t) { return basis.eval(t); }

inline double curve_eval(const SplineBasis& basis, const Eigen::Ref<const Vector>& coefficients, double t) {
    require(coefficients.size() == basis.count(), "coefficient count does not match basis");
    constexpr int kStack = 16;
    double stack[kStack];
    std::vector<double> heap;
    double* n = stack;
    if (basis.degree() >= kStack) {
        heap.resize(basis.degree() + 1);
        n = heap.data();
    }
    const Index first = basis.local_into(t, n);
    double acc = 0.0;
    for (int r = 0; r <= basis.degree(); ++r)
        acc += n[r] * coefficients[first + r];
    return acc;
}

inline Matrix design_matrix(const SplineBasis& basis, std::span<const double> times) {
    Matrix x(static_cast<Index>(times.size()), basis.count());
    for (std::size_t i = 0; i < times.size(); ++i)
        x.row(static_cast<Index>(i)) = basis.eval(times[i]).transpose();
    return x;
}

/// Ordinary least-squares spline coefficients.
inline Vector lsq_fit(std::span<const double> times, const Vector& values, const SplineBasis& basis) {
    require(static_cast<Index>(times.size()) == values.size(), "times and values differ in length");
    if (static_cast<Index>(times.size()) < basis.count())
        throw ConfigError("least-squares spline fit needs at least as many observations as basis "
                          "functions; use fewer basis functions");
    const Matrix x = design_matrix(basis, times);
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < basis.count())
        throw ConfigError("spline design matrix is rank deficient (rank " +
                          std::to_string(qr.rank()) + " < " + std::to_string(basis.count()) +
                          "); use fewer basis functions");
    return qr.solve(values);
}

/// Per-column cubic spline smoothing of a data matrix.
struct SmoothFit {
    SplineBasis basis;
    Matrix coefficients;  // count x p
    Matrix fitted;        // rows = times
    Vector residual_sd;   // per column
};

/// Default starting-point basis size: max(10, n/8) where n + 1 points are observed,
/// reduced when there are too few observations.
inline int default_basis_count(Index n_points) {
    const Index n = n_points - 1;
    Index c = std::max<Index>(10, n / 8);
    c = std::min<Index>(c, n_points - 1);
    return static_cast<int>(std::max<Index>(c, 4));
}

inline SmoothFit smooth_columns(std::span<const double> times, const Matrix& y, int count) {
    require(times.size() >= 2, "need at least two time points to smooth");
    SmoothFit out;
    out.basis = SplineBasis::clamped(times.front(), times.back(), count);
    const Matrix x = design_matrix(out.basis, times);
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < out.basis.count())
        throw ConfigError("spline design matrix is rank deficient; use fewer basis functions");
    out.coefficients = qr.solve(y);
    out.fitted = x * out.coefficients;
    const Matrix resid = y - out.fitted;
    const double dof = std::max<double>(1.0, static_cast<double>(y.rows() - count));
    out.residual_sd = (resid.colwise().squaredNorm().transpose() / dof).cwiseSqrt();
    return out;
}

} // namespace ssvb
