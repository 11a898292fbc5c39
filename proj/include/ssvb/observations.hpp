#pragma once

#include <optional>
#include <vector>

#include "ssvb/linalg.hpp"

namespace ssvb {

/// Generating values attached to simulated data.
struct TruthInfo {
    Vector theta;
    Vector x0;
    double noise_var = 0.0;
};

/// Observation times t_0 < ... < t_n and one p-vector per time (row i of y).
struct ObservationSet {
    std::vector<double> times;
    Matrix y;
    std::optional<TruthInfo> truth;

    Index n_points() const { return static_cast<Index>(times.size()); }
    /// Number of intervals n.
    Index n_intervals() const { return n_points() - 1; }
    Index dim() const { return y.cols(); }
    double interval(Index i) const { return times[i] - times[i - 1]; }
};

inline void validate(const ObservationSet& d) {
    require(d.times.size() >= 2, "dataset needs at least two time points");
    require(d.y.rows() == d.n_points(), "dataset rows do not match the number of times");
    require(d.y.cols() >= 1, "dataset has no state columns");
    for (std::size_t i = 1; i < d.times.size(); ++i)
        require(d.times[i] > d.times[i - 1], "dataset times must be strictly increasing");
    require(d.y.allFinite(), "dataset contains non-finite observations");
}

} // namespace ssvb
