#pragma once

// Long-format plot data: `series,t,value` rows for the observations, the
// posterior mean trajectory and, for TV-SIR, the rate curves.

#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <variant>

#include "ssvb/models.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/optimizer.hpp"
#include "ssvb/result_json.hpp"

namespace ssvb {

inline AnyModel model_for_fit(const FitResult& fit, const FitMeta& meta) {
    require(!fit.times.empty(), "fit has no time grid");
    return make_model(meta.model, ModelContext{fit.times.front(), fit.times.back(), meta.population});
}

/// Series emitted:
///   data_<state>    observations (when `data` is given)
///   fitted_<state>  posterior state means at the observation times
///   ode_<state>     curve integrated from the posterior means of (theta, x0)
///   beta, gamma, R0 TV-SIR rates on a grid `rate_density` times finer than the data
inline void write_plotdata(std::ostream& out, const FitResult& fit, const FitMeta& meta,
                           const std::optional<ObservationSet>& data = std::nullopt, int rate_density = 4) {
    require(fit.success, "plot data needs a successful fit");
    const AnyModel model = model_for_fit(fit, meta);
    const auto names = std::visit([](const auto& s) { return s.state_names(); }, model);
    require(static_cast<Index>(names.size()) == fit.state.m.cols(), "fit does not match the model dimension");
    const Index q = model_dim_params(model);
    require(fit.theta_mean.size() == q, "fit has " + std::to_string(fit.theta_mean.size()) +
                                            " parameters but model '" + meta.model + "' needs " +
                                            std::to_string(q));

    out << "series,t,value\n" << std::setprecision(17);
    const auto& times = fit.times;
    if (data) {
        require(data->dim() == static_cast<Index>(names.size()), "data does not match the model dimension");
        for (Index j = 0; j < data->dim(); ++j)
            for (Index i = 0; i < data->n_points(); ++i)
                out << "data_" << names[j] << ',' << data->times[i] << ',' << data->y(i, j) << '\n';
    }
    for (std::size_t j = 0; j < names.size(); ++j)
        for (std::size_t i = 0; i < times.size(); ++i)
            out << "fitted_" << names[j] << ',' << times[i] << ','
                << fit.state.m(static_cast<Index>(i), static_cast<Index>(j)) << '\n';

    std::visit(
        [&](const auto& sys) {
            try {
                const Matrix curve = integrate(sys, fit.x0_mean, fit.theta_mean, times);
                for (std::size_t j = 0; j < names.size(); ++j)
                    for (std::size_t i = 0; i < times.size(); ++i)
                        out << "ode_" << names[j] << ',' << times[i] << ','
                            << curve(static_cast<Index>(i), static_cast<Index>(j)) << '\n';
            } catch (const NumericError&) {
                // The integrated curve is optional; state means are still written.
            }
            if constexpr (std::is_same_v<std::decay_t<decltype(sys)>, TvSir>) {
                const Index steps = (static_cast<Index>(times.size()) - 1) * rate_density;
                const double t0 = times.front(), t1 = times.back();
                for (const char* series : {"beta", "gamma", "R0"})
                    for (Index k = 0; k <= steps; ++k) {
                        const double t = k == steps ? t1 : t0 + (t1 - t0) * k / steps;
                        const double b = sys.beta(t, fit.theta_mean), g = sys.gamma(t, fit.theta_mean);
                        const std::string s(series);
                        out << s << ',' << t << ',' << (s == "beta" ? b : s == "gamma" ? g : b / g) << '\n';
                    }
            }
        },
        model);
}

} // namespace ssvb
