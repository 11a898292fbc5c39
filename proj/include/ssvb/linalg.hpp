#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ssvb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Raised when an evaluation produces a non-finite number (overflowing
/// trajectories, division by a zero parameter, ...).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid arguments, dimension mismatches, malformed input files.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

template <typename Derived>
inline bool all_finite(const Eigen::MatrixBase<Derived>& a) {
    return a.allFinite();
}

template <typename Derived>
inline void require_finite(const Eigen::MatrixBase<Derived>& a, const char* where) {
    if (!a.allFinite())
        throw NumericError(std::string("non-finite value in ") + where);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond)
        throw ConfigError(msg);
}

} // namespace ssvb
