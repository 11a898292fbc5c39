#pragma once

// JSON form of fit results and of the truth metadata of simulated data.
// Non-finite numbers are written as the strings "inf", "-inf" and "nan".

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "ssvb/dataset_io.hpp"
#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/optimizer.hpp"

namespace ssvb {

using Json = nlohmann::ordered_json;

namespace json_detail {

inline Json num(double v) {
    if (std::isfinite(v))
        return v;
    if (std::isnan(v))
        return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double to_num(const Json& j) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
    }
    throw ParseError("expected a number, got " + j.dump());
}

inline Json vec(const Vector& v) {
    Json a = Json::array();
    for (Index k = 0; k < v.size(); ++k)
        a.push_back(num(v[k]));
    return a;
}

inline Vector to_vec(const Json& j) {
    if (!j.is_array())
        throw ParseError("expected an array, got " + j.dump());
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k)
        v[static_cast<Index>(k)] = to_num(j[k]);
    return v;
}

inline Json mat(const Matrix& m) {
    Json a = Json::array();
    for (Index i = 0; i < m.rows(); ++i)
        a.push_back(vec(m.row(i).transpose()));
    return a;
}

inline Matrix to_mat(const Json& j) {
    if (!j.is_array() || j.empty())
        throw ParseError("expected a nonempty array of rows");
    const Index cols = static_cast<Index>(j[0].size());
    Matrix m(static_cast<Index>(j.size()), cols);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Vector r = to_vec(j[i]);
        if (r.size() != cols)
            throw ParseError("ragged matrix rows");
        m.row(static_cast<Index>(i)) = r.transpose();
    }
    return m;
}

inline const Json& at(const Json& j, const char* key) {
    if (!j.contains(key))
        throw ParseError(std::string("missing key '") + key + "'");
    return j.at(key);
}

} // namespace json_detail

/// What a fit needs besides FitResult to be re-evaluated later.
struct FitMeta {
    std::string model;
    std::optional<double> population;
};

inline Json config_to_json(const FitConfig& c) {
    using json_detail::num;
    Json j;
    j["tau"] = num(c.tau);
    j["m_steps"] = c.m_steps;
    j["samples"] = c.samples;
    j["eps"] = num(c.eps);
    j["max_restarts"] = c.max_restarts;
    j["seed"] = c.seed;
    j["alpha_init"] = num(c.alpha_init);
    j["max_outer"] = c.max_outer;
    j["max_cg_iterations"] = c.max_cg_iterations;
    j["deterministic"] = c.deterministic;
    if (c.theta_start)
        j["theta_start"] = json_detail::vec(*c.theta_start);
    return j;
}

inline FitConfig config_from_json(const Json& j) {
    using json_detail::at;
    using json_detail::to_num;
    FitConfig c;
    c.tau = to_num(at(j, "tau"));
    c.m_steps = at(j, "m_steps").get<int>();
    c.samples = at(j, "samples").get<int>();
    c.eps = to_num(at(j, "eps"));
    c.max_restarts = at(j, "max_restarts").get<int>();
    c.seed = at(j, "seed").get<std::uint64_t>();
    c.alpha_init = to_num(at(j, "alpha_init"));
    c.max_outer = j.value("max_outer", c.max_outer);
    c.max_cg_iterations = j.value("max_cg_iterations", c.max_cg_iterations);
    c.deterministic = j.value("deterministic", c.deterministic);
    if (j.contains("theta_start"))
        c.theta_start = json_detail::to_vec(j.at("theta_start"));
    return c;
}

/// Serializes a fit. `include_timing = false` drops `seconds` so that two
/// runs with the same seed produce identical documents.
inline Json fit_to_json(const FitResult& r, const FitMeta& meta, bool include_timing = true) {
    using namespace json_detail;
    Json j;
    j["model"] = meta.model;
    if (meta.population)
        j["population"] = *meta.population;
    j["success"] = r.success;
    j["message"] = r.message;
    j["theta_mean"] = vec(r.theta_mean);
    j["theta_sd"] = vec(r.theta_sd);
    j["x0_mean"] = vec(r.x0_mean);
    j["x0_sd"] = vec(r.x0_sd);
    j["lambda_mean"] = num(r.lambda_mean);
    j["a_lambda"] = num(r.state.a_lambda);
    j["b_lambda"] = num(r.state.b_lambda);
    Json trace = Json::array();
    for (std::size_t k = 0; k < r.trace.cost.size(); ++k)
        trace.push_back(Json{{"cost", num(r.trace.cost[k])}, {"kind", std::string(1, r.trace.kind[k])}});
    j["cost_trace"] = std::move(trace);
    j["restarts"] = r.restarts;
    if (include_timing)
        j["seconds"] = r.seconds;
    j["config"] = config_to_json(r.config);
    j["priors"] = Json{{"a0", num(r.priors.a0)},
                       {"b0", num(r.priors.b0)},
                       {"theta_lower", vec(r.priors.theta_lower)},
                       {"theta_upper", vec(r.priors.theta_upper)},
                       {"x0_lower", vec(r.priors.x0_lower)},
                       {"x0_upper", vec(r.priors.x0_upper)}};
    j["diagnostics"] = Json{{"cg_iterations", r.diagnostics.cg_iterations},
                            {"outer_cycles", r.diagnostics.outer_cycles},
                            {"line_search_failures", r.diagnostics.line_search_failures},
                            {"damping_events", r.diagnostics.damping_events},
                            {"numeric_failures", r.diagnostics.numeric_failures},
                            {"converged", r.diagnostics.converged},
                            {"restart_reasons", r.diagnostics.restart_reasons}};
    j["times"] = r.times;
    if (r.success) {
        j["state_mean"] = mat(r.state.m);
        j["state_var"] = mat(r.state.v);
        j["theta_var"] = vec(r.state.sigma2);
    }
    return j;
}

/// Inverse of fit_to_json (timing and diagnostics are restored when present).
inline std::pair<FitResult, FitMeta> fit_from_json(const Json& j) {
    using namespace json_detail;
    FitResult r;
    FitMeta meta;
    meta.model = at(j, "model").get<std::string>();
    if (j.contains("population"))
        meta.population = to_num(j.at("population"));
    r.success = at(j, "success").get<bool>();
    r.message = j.value("message", std::string{});
    r.theta_mean = to_vec(at(j, "theta_mean"));
    r.theta_sd = to_vec(at(j, "theta_sd"));
    r.x0_mean = to_vec(at(j, "x0_mean"));
    r.x0_sd = to_vec(at(j, "x0_sd"));
    r.lambda_mean = to_num(at(j, "lambda_mean"));
    for (const auto& e : at(j, "cost_trace"))
        r.trace.push(to_num(at(e, "cost")), at(e, "kind").get<std::string>().at(0));
    r.restarts = at(j, "restarts").get<int>();
    r.seconds = j.contains("seconds") ? to_num(j.at("seconds")) : 0.0;
    r.config = config_from_json(at(j, "config"));
    if (j.contains("priors")) {
        const Json& p = j.at("priors");
        r.priors.a0 = to_num(at(p, "a0"));
        r.priors.b0 = to_num(at(p, "b0"));
        r.priors.theta_lower = to_vec(at(p, "theta_lower"));
        r.priors.theta_upper = to_vec(at(p, "theta_upper"));
        r.priors.x0_lower = to_vec(at(p, "x0_lower"));
        r.priors.x0_upper = to_vec(at(p, "x0_upper"));
    }
    if (j.contains("diagnostics")) {
        const Json& d = j.at("diagnostics");
        r.diagnostics.cg_iterations = d.value("cg_iterations", 0);
        r.diagnostics.outer_cycles = d.value("outer_cycles", 0);
        r.diagnostics.line_search_failures = d.value("line_search_failures", 0);
        r.diagnostics.damping_events = d.value("damping_events", 0);
        r.diagnostics.numeric_failures = d.value("numeric_failures", 0);
        r.diagnostics.converged = d.value("converged", false);
        r.diagnostics.restart_reasons = d.value("restart_reasons", std::vector<std::string>{});
    }
    r.times = at(j, "times").get<std::vector<double>>();
    if (r.success) {
        r.state.m = to_mat(at(j, "state_mean"));
        r.state.v = j.contains("state_var") ? to_mat(j.at("state_var"))
                                            : Matrix::Zero(r.state.m.rows(), r.state.m.cols());
        r.state.mu = r.theta_mean;
        r.state.sigma2 = j.contains("theta_var") ? to_vec(j.at("theta_var")) : r.theta_sd.cwiseAbs2();
        r.state.a_lambda = j.contains("a_lambda") ? to_num(j.at("a_lambda")) : r.lambda_mean;
        r.state.b_lambda = j.contains("b_lambda") ? to_num(j.at("b_lambda")) : 1.0;
        if (r.state.m.rows() != static_cast<Index>(r.times.size()))
            throw ParseError("state_mean rows do not match times");
    }
    return {std::move(r), std::move(meta)};
}

inline Json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline void write_json(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

inline std::string truth_path(const std::string& dataset_path) { return dataset_path + ".truth.json"; }

/// Writes the CSV and, for simulated data, a `<path>.truth.json` sidecar.
inline void save_dataset(const std::string& path, const ObservationSet& d) {
    write_dataset(path, d);
    if (d.truth) {
        Json j;
        j["theta"] = json_detail::vec(d.truth->theta);
        j["x0"] = json_detail::vec(d.truth->x0);
        j["noise_var"] = json_detail::num(d.truth->noise_var);
        write_json(truth_path(path), j);
    }
}

/// Reads the CSV and the truth sidecar when one exists.
inline ObservationSet load_dataset(const std::string& path) {
    ObservationSet d = read_dataset(path);
    if (std::ifstream(truth_path(path)).good()) {
        const Json j = read_json(truth_path(path));
        d.truth = TruthInfo{json_detail::to_vec(json_detail::at(j, "theta")),
                            json_detail::to_vec(json_detail::at(j, "x0")),
                            json_detail::to_num(json_detail::at(j, "noise_var"))};
    }
    return d;
}

} // namespace ssvb
