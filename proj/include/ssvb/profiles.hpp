#pragma once

// Default priors and optimizer settings per bundled model.

#include <type_traits>
#include <variant>

#include "ssvb/models.hpp"
#include "ssvb/sir.hpp"
#include "ssvb/vb.hpp"

namespace ssvb {

inline PriorConfig fhn_priors() {
    PriorConfig pr;
    pr.theta_lower = Vector(3);
    pr.theta_upper = Vector(3);
    pr.theta_lower << -0.8, -0.8, 0.0;
    pr.theta_upper << 0.8, 0.8, 8.0;
    return pr;
}

/// (0,2) x (0,2) x (0,16) for every site.
inline PriorConfig lorenz96_priors(int p) {
    PriorConfig pr;
    pr.theta_lower = Vector::Zero(3 * p);
    pr.theta_upper = Vector(3 * p);
    for (int j = 0; j < p; ++j) {
        pr.theta_upper[3 * j] = 2.0;
        pr.theta_upper[3 * j + 1] = 2.0;
        pr.theta_upper[3 * j + 2] = 16.0;
    }
    return pr;
}

inline PriorConfig default_priors(const AnyModel& model) {
    return std::visit(
        [](const auto& sys) -> PriorConfig {
            using T = std::decay_t<decltype(sys)>;
            if constexpr (std::is_same_v<T, FitzHughNagumo>)
                return fhn_priors();
            else if constexpr (std::is_same_v<T, Lorenz96>)
                return lorenz96_priors(static_cast<int>(sys.dim_state()));
            else
                return tvsir_priors(sys);
        },
        model);
}

/// TV-SIR fits: m = 1, tau = 1e-4, a small first line-search step, and a
/// tighter final tolerance because the cost decreases slowly on count data.
inline FitConfig tvsir_fit_config() {
    FitConfig c;
    c.m_steps = 1;
    c.tau = 1e-4;
    c.alpha_init = 1e-4;
    c.eps = 1e-9;
    return c;
}

} // namespace ssvb
