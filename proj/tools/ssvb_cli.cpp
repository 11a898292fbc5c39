// ssvb: simulate, tune, fit, bench, covid, plotdata.
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssvb/ssvb.hpp"

using namespace ssvb;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
    std::uint64_t seed = 1;
    bool deterministic = false;
    int jobs = 1;
    std::string out;
    bool verbose = false;
};

struct ModelArgs {
    std::string model;
    std::optional<double> population;
};

struct PriorArgs {
    std::string theta_lower, theta_upper, x0_lower, x0_upper;
    std::optional<double> a0, b0;
};

struct FitArgs {
    std::optional<int> m;
    std::optional<double> tau;
    std::optional<int> samples;
    std::optional<double> eps;
    std::optional<int> max_restarts;
    std::optional<double> alpha_init;
    std::optional<int> max_outer;
    std::string theta_start;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub->add_flag("--deterministic", c.deterministic, "Fixed reduction order (results never depend on --jobs)");
    sub->add_option("--jobs", c.jobs, "Parallel jobs (bench replicates)")->check(CLI::PositiveNumber);
    sub->add_option("-o,--out", c.out, "Output path");
    sub->add_flag("-v,--verbose", c.verbose, "Progress on stderr");
}

void add_model(CLI::App* sub, ModelArgs& m, bool required = true) {
    auto* o = sub->add_option("--model", m.model, "Model id: " + model_list());
    if (required)
        o->required();
    sub->add_option("--population", m.population, "Population N (tvsir models)");
}

void add_priors(CLI::App* sub, PriorArgs& p) {
    sub->add_option("--theta-lower", p.theta_lower, "Comma list of theta prior lower bounds");
    sub->add_option("--theta-upper", p.theta_upper, "Comma list of theta prior upper bounds");
    sub->add_option("--x0-lower", p.x0_lower, "Comma list of x0 prior lower bounds");
    sub->add_option("--x0-upper", p.x0_upper, "Comma list of x0 prior upper bounds");
    sub->add_option("--a0", p.a0, "Gamma prior shape for lambda");
    sub->add_option("--b0", p.b0, "Gamma prior rate for lambda");
}

void add_fit(CLI::App* sub, FitArgs& f) {
    sub->add_option("--m", f.m, "RK4 substeps per interval (default: tuned)")->check(CLI::PositiveNumber);
    sub->add_option("--tau", f.tau, "State-noise variance (default: tuned)")->check(CLI::PositiveNumber);
    sub->add_option("--samples", f.samples, "Quasi-MC sample count M (odd)");
    sub->add_option("--eps", f.eps, "Final relative cost-change tolerance");
    sub->add_option("--max-restarts", f.max_restarts, "Restart budget");
    sub->add_option("--alpha-init", f.alpha_init, "First line-search step");
    sub->add_option("--max-outer", f.max_outer, "Mean/variance alternations per attempt");
    sub->add_option("--theta-start", f.theta_start, "Comma list of theta starting values");
}

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    std::string s(buf);
    // 1e-05 -> 1e-5
    const auto e = s.find('e');
    if (e != std::string::npos) {
        std::size_t d = e + 2;
        while (d + 1 < s.size() && s[d] == '0')
            s.erase(d, 1);
    }
    return s;
}

PriorConfig build_priors(const AnyModel& model, const PriorArgs& a) {
    PriorConfig pr = default_priors(model);
    if (!a.theta_lower.empty())
        pr.theta_lower = parse_vector(a.theta_lower);
    if (!a.theta_upper.empty())
        pr.theta_upper = parse_vector(a.theta_upper);
    if (!a.x0_lower.empty())
        pr.x0_lower = parse_vector(a.x0_lower);
    if (!a.x0_upper.empty())
        pr.x0_upper = parse_vector(a.x0_upper);
    if (a.a0)
        pr.a0 = *a.a0;
    if (a.b0)
        pr.b0 = *a.b0;
    validate(pr, model_dim_params(model));
    return pr;
}

bool is_tvsir(const AnyModel& m) { return std::holds_alternative<TvSir>(m); }

FitConfig build_fit_config(const AnyModel& model, const FitArgs& a, const Common& c) {
    FitConfig cfg = is_tvsir(model) ? tvsir_fit_config() : FitConfig{};
    if (a.m)
        cfg.m_steps = *a.m;
    if (a.tau)
        cfg.tau = *a.tau;
    if (a.samples)
        cfg.samples = *a.samples;
    if (a.eps)
        cfg.eps = *a.eps;
    if (a.max_restarts)
        cfg.max_restarts = *a.max_restarts;
    if (a.alpha_init)
        cfg.alpha_init = *a.alpha_init;
    if (a.max_outer)
        cfg.max_outer = *a.max_outer;
    if (!a.theta_start.empty())
        cfg.theta_start = parse_vector(a.theta_start);
    cfg.seed = c.seed;
    cfg.deterministic = c.deterministic;
    validate(cfg);
    return cfg;
}

ProgressFn progress_printer(bool verbose) {
    if (!verbose)
        return {};
    return [](const Progress& p) {
        std::cerr << std::setw(6) << p.iteration << "  " << std::setw(10) << p.phase << "  cost "
                  << std::setprecision(12) << p.cost << '\n';
    };
}

ModelContext context_for(const ObservationSet& d, const ModelArgs& m) {
    return ModelContext{d.times.front(), d.times.back(), m.population};
}

/// Flat `key = value` files: keys without a section apply to the subcommand
/// being run, and comma lists stay a single value.
class FlatConfig : public CLI::ConfigTOML {
public:
    explicit FlatConfig(const CLI::App* app) : app_(app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        auto items = CLI::ConfigTOML::from_config(input);
        const auto subs = app_->get_subcommands();
        if (!subs.empty())
            for (auto& it : items)
                if (it.parents.empty())
                    it.parents = {subs.front()->get_name()};
        for (auto& it : items)
            if (it.inputs.size() > 1) {
                std::string joined = it.inputs.front();
                for (std::size_t k = 1; k < it.inputs.size(); ++k)
                    joined += "," + it.inputs[k];
                it.inputs = {joined};
            }
        return items;
    }

private:
    const CLI::App* app_;
};

// ---------------------------------------------------------------------------

struct SimulateArgs {
    ModelArgs model;
    std::string theta, x0;
    double t0 = 0.0, t1 = 1.0, noise_var = 0.0;
    int n = 2;
};

int cmd_simulate(const SimulateArgs& a, const Common& c) {
    const AnyModel model = make_model(a.model.model, ModelContext{a.t0, a.t1, a.model.population});
    const Vector theta = parse_vector(a.theta);
    const Vector x0 = parse_vector(a.x0);
    const auto grid = equidistant_grid(a.t0, a.t1, a.n);
    const ObservationSet d = std::visit(
        [&](const auto& sys) { return simulate_dataset(sys, theta, x0, grid, a.noise_var, c.seed); }, model);
    if (c.out.empty()) {
        write_dataset(std::cout, d);
    } else {
        save_dataset(c.out, d);
        std::cout << "wrote " << d.n_points() << " rows x " << d.dim() << " states to " << c.out << '\n';
    }
    return 0;
}

struct TuneArgs {
    ModelArgs model;
    PriorArgs priors;
    std::string data, x0_start;
};

int cmd_tune(const TuneArgs& a, const Common& c) {
    const ObservationSet d = load_dataset(a.data);
    const AnyModel model = make_model(a.model.model, context_for(d, a.model));
    const PriorConfig pr = build_priors(model, a.priors);
    const Vector start = a.x0_start.empty() ? spline_start(d) : parse_vector(a.x0_start);
    const TuningResult tr =
        std::visit([&](const auto& sys) { return select_tuning(sys, d, pr, start, c.seed); }, model);
    std::cout << "m=" << tr.m << " tau=" << fmt_num(tr.tau) << '\n';
    if (tr.capped)
        std::cerr << "warning: tau stayed above 1e-4 up to m=" << kMaxTuningSteps << '\n';
    if (!c.out.empty()) {
        Json j;
        j["m"] = tr.m;
        j["tau"] = tr.tau;
        j["tau_per_m"] = tr.tau_per_m;
        j["variances"] = tr.variances;
        j["draws"] = tr.draws;
        j["capped"] = tr.capped;
        write_json(c.out, j);
    }
    return 0;
}

struct FitCmdArgs {
    ModelArgs model;
    PriorArgs priors;
    FitArgs fit;
    std::string data;
    bool quiet = false;
};

/// Fills in tuned (m, tau) when either is missing and the TV-SIR start point.
template <typename Sys>
FitResult run_fit(const Sys& sys, const ObservationSet& d, const PriorConfig& pr, FitConfig cfg,
                  const FitArgs& a, const Common& c) {
    if (!a.m || !a.tau) {
        if constexpr (std::is_same_v<Sys, TvSir>) {
            // Unbounded coefficient priors cannot be sampled for tuning; keep the profile values.
        } else {
            const TuningResult tr = select_tuning(sys, d, pr, spline_start(d), c.seed);
            if (!a.m)
                cfg.m_steps = tr.m;
            if (!a.tau)
                cfg.tau = tr.tau;
            if (c.verbose)
                std::cerr << "tuning: m=" << tr.m << " tau=" << fmt_num(tr.tau) << '\n';
        }
    }
    if constexpr (std::is_same_v<Sys, TvSir>) {
        if (!cfg.theta_start)
            cfg.theta_start = tvsir_start(sys, d);
    }
    return fit(d, sys, pr, cfg, progress_printer(c.verbose));
}

int cmd_fit(const FitCmdArgs& a, const Common& c) {
    const ObservationSet d = load_dataset(a.data);
    const AnyModel model = make_model(a.model.model, context_for(d, a.model));
    const PriorConfig pr = build_priors(model, a.priors);
    const FitConfig cfg = build_fit_config(model, a.fit, c);
    const FitResult r = std::visit([&](const auto& sys) { return run_fit(sys, d, pr, cfg, a.fit, c); }, model);
    const Json j = fit_to_json(r, FitMeta{a.model.model, a.model.population});
    if (!a.quiet)
        std::cout << j.dump(2) << '\n';
    if (!c.out.empty())
        write_json(c.out, j);
    if (!r.success) {
        std::cerr << "fit failed: " << r.message << '\n';
        return kExitNumeric;
    }
    return 0;
}

struct BenchArgs {
    ModelArgs model;
    PriorArgs priors;
    FitArgs fit;
    std::string theta, x0, replicates_csv;
    double t0 = 0.0, t1 = 1.0, noise_var = 0.0;
    int n = 2, replicates = 10;
};

void write_bench_table(std::ostream& out, const BenchReport& r) {
    out << "parameter,truth,mab,ssd\n" << std::setprecision(10);
    for (std::size_t k = 0; k < r.names.size(); ++k) {
        const auto i = static_cast<Index>(k);
        out << r.names[k] << ',' << r.truth[i] << ',' << r.mab[i] << ',' << r.ssd[i] << '\n';
    }
}

void write_bench_replicates(std::ostream& out, const BenchReport& r) {
    out << "replicate,seed,success,m,tau,restarts,fit_seconds,tune_seconds,lambda,deviation";
    for (const auto& nm : r.names)
        out << ',' << nm;
    out << ",message\n" << std::setprecision(10);
    for (std::size_t k = 0; k < r.replicates.size(); ++k) {
        const auto& o = r.replicates[k];
        out << k << ',' << o.seed << ',' << (o.success ? 1 : 0) << ',' << o.m_steps << ',' << o.tau << ','
            << o.restarts << ',' << o.fit_seconds << ',' << o.tune_seconds << ',' << o.lambda << ','
            << o.deviation;
        for (Index i = 0; i < r.truth.size(); ++i) {
            out << ',';
            if (o.success)
                out << (i < o.theta.size() ? o.theta[i] : o.x0[i - o.theta.size()]);
        }
        std::string msg = o.message;
        for (char& ch : msg)
            if (ch == '"')
                ch = '\'';
        out << ",\"" << msg << "\"\n";
    }
}

int cmd_bench(const BenchArgs& a, const Common& c) {
    const AnyModel model = make_model(a.model.model, ModelContext{a.t0, a.t1, a.model.population});
    BenchProtocol proto;
    proto.theta = parse_vector(a.theta);
    proto.x0 = parse_vector(a.x0);
    proto.t0 = a.t0;
    proto.t1 = a.t1;
    proto.points = a.n;
    proto.noise_var = a.noise_var;
    proto.priors = build_priors(model, a.priors);
    proto.m_steps = a.fit.m;
    proto.tau = a.fit.tau;
    proto.fit = build_fit_config(model, a.fit, c);
    proto.seed = c.seed;
    proto.replicates = a.replicates;
    proto.jobs = c.deterministic ? 1 : c.jobs;
    const BenchReport r = std::visit([&](const auto& sys) { return bench(sys, proto); }, model);

    write_bench_table(std::cout, r);
    std::cout << std::setprecision(4) << "# successes " << r.successes << "/" << a.replicates
              << "; fit seconds mean " << r.fit_seconds.mean << " median " << r.fit_seconds.median
              << " min " << r.fit_seconds.min << " max " << r.fit_seconds.max << "; wall " << r.wall_seconds
              << " s\n";
    for (std::size_t k = 0; k < r.replicates.size(); ++k)
        if (!r.replicates[k].success)
            std::cerr << "replicate " << k << " failed: " << r.replicates[k].message << '\n';
    if (!c.out.empty()) {
        std::ofstream out(c.out);
        if (!out)
            throw ConfigError("cannot write '" + c.out + "'");
        write_bench_table(out, r);
    }
    if (!a.replicates_csv.empty()) {
        std::ofstream out(a.replicates_csv);
        if (!out)
            throw ConfigError("cannot write '" + a.replicates_csv + "'");
        write_bench_replicates(out, r);
    }
    return r.successes > 0 ? 0 : kExitNumeric;
}

struct CovidArgs {
    std::string confirmed, recovered, deaths, region, bases = "20,25,30,35,40";
    double population = 0.0;
    bool trim = false;
    double trim_fraction = 1e-3;
    FitArgs fit;
    std::optional<double> a0, b0;
};

int cmd_covid(const CovidArgs& a, const Common& c) {
    CsseOptions opt;
    opt.trim_flat = a.trim;
    opt.flat_fraction = a.trim_fraction;
    const CsseSeries series = ingest_csse(a.confirmed, a.recovered, a.deaths, a.region, a.population, opt);
    for (const auto& w : series.warnings)
        std::cerr << "warning: " << w << '\n';
    const ObservationSet& d = series.data;
    std::cerr << a.region << ": " << d.n_points() << " days from " << series.dates.front() << " (trimmed "
              << series.trimmed_days << ")\n";

    std::vector<int> counts;
    for (double v : parse_vector(a.bases))
        counts.push_back(static_cast<int>(v));
    const AnyModel probe = make_model("tvsir:" + std::to_string(counts.front()),
                                      ModelContext{d.times.front(), d.times.back(), a.population});
    const FitConfig base_cfg = build_fit_config(probe, a.fit, c);

    const BicReport bic_rep = bic_select(d, counts, [&](int k) {
        const TvSir sys = TvSir::uniform(a.population, d.times.front(), d.times.back(), k);
        PriorConfig pr = tvsir_priors(sys);
        if (a.a0)
            pr.a0 = *a.a0;
        if (a.b0)
            pr.b0 = *a.b0;
        FitConfig cfg = base_cfg;
        cfg.theta_start = tvsir_start(sys, d);
        const FitResult r = fit(d, sys, pr, cfg, progress_printer(c.verbose));
        std::cerr << "  " << k << " bases: " << (r.success ? "ok" : r.message) << " (" << std::setprecision(3)
                  << r.seconds << " s)\n";
        return r;
    });

    std::cout << "basis_count,bic\n" << std::setprecision(10);
    for (const auto& cand : bic_rep.candidates)
        std::cout << cand.count << ',' << cand.bic << '\n';
    std::cout << "# chosen " << bic_rep.chosen << " bases\n";

    const FitResult& best = bic_rep.candidates[bic_rep.chosen_index].fit;
    const FitMeta meta{"tvsir:" + std::to_string(bic_rep.chosen), a.population};
    const std::string prefix = c.out.empty() ? "covid" : c.out;
    write_dataset(prefix + ".data.csv", d);
    write_json(prefix + ".fit.json", fit_to_json(best, meta));
    {
        std::ofstream out(prefix + ".plot.csv");
        write_plotdata(out, best, meta, d);
    }
    {
        std::ofstream out(prefix + ".bic.csv");
        out << "basis_count,bic\n" << std::setprecision(10);
        for (const auto& cand : bic_rep.candidates)
            out << cand.count << ',' << cand.bic << '\n';
    }
    std::cerr << "wrote " << prefix << ".{data.csv,fit.json,plot.csv,bic.csv}\n";
    return 0;
}

struct PlotArgs {
    std::string fit, model, data;
};

int cmd_plotdata(const PlotArgs& a, const Common& c) {
    auto [res, meta] = fit_from_json(read_json(a.fit));
    if (!a.model.empty() && a.model != meta.model)
        throw ConfigError("fit was made with model '" + meta.model + "', not '" + a.model + "'");
    std::optional<ObservationSet> data;
    if (!a.data.empty())
        data = load_dataset(a.data);
    if (c.out.empty()) {
        write_plotdata(std::cout, res, meta, data);
    } else {
        std::ofstream out(c.out);
        if (!out)
            throw ConfigError("cannot write '" + c.out + "'");
        write_plotdata(out, res, meta, data);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"State-space variational Bayes for ODE parameter estimation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Flat key = value file; command-line flags win");
    app.config_formatter(std::make_shared<FlatConfig>(&app));
    Common common;

    SimulateArgs sim;
    auto* s_sim = app.add_subcommand("simulate", "Simulate a noisy data set from a model");
    add_common(s_sim, common);
    add_model(s_sim, sim.model);
    s_sim->add_option("--theta", sim.theta, "Comma list of ODE parameters")->required();
    s_sim->add_option("--x0", sim.x0, "Comma list of initial states")->required();
    s_sim->add_option("--t0", sim.t0, "First time")->capture_default_str();
    s_sim->add_option("--t1", sim.t1, "Last time")->required();
    s_sim->add_option("--n", sim.n, "Number of time points")->required();
    s_sim->add_option("--noise-var", sim.noise_var, "Observation noise variance")->capture_default_str();

    TuneArgs tune;
    auto* s_tune = app.add_subcommand("tune", "Choose the substep count m and tau from data");
    add_common(s_tune, common);
    add_model(s_tune, tune.model);
    add_priors(s_tune, tune.priors);
    s_tune->add_option("--data", tune.data, "Dataset CSV")->required();
    s_tune->add_option("--x0-start", tune.x0_start, "Comma list (default: spline smoothing at t0)");

    FitCmdArgs fitc;
    auto* s_fit = app.add_subcommand("fit", "Fit a model to a data set");
    add_common(s_fit, common);
    add_model(s_fit, fitc.model);
    add_priors(s_fit, fitc.priors);
    add_fit(s_fit, fitc.fit);
    s_fit->add_option("--data", fitc.data, "Dataset CSV")->required();
    s_fit->add_flag("-q,--quiet", fitc.quiet, "Do not print the result JSON");

    BenchArgs bench_a;
    auto* s_bench = app.add_subcommand("bench", "Replicate simulation study (MAB/SSD table)");
    add_common(s_bench, common);
    add_model(s_bench, bench_a.model);
    add_priors(s_bench, bench_a.priors);
    add_fit(s_bench, bench_a.fit);
    s_bench->add_option("--theta", bench_a.theta, "True ODE parameters")->required();
    s_bench->add_option("--x0", bench_a.x0, "True initial states")->required();
    s_bench->add_option("--t0", bench_a.t0, "First time")->capture_default_str();
    s_bench->add_option("--t1", bench_a.t1, "Last time")->required();
    s_bench->add_option("--n", bench_a.n, "Number of time points")->required();
    s_bench->add_option("--noise-var", bench_a.noise_var, "Observation noise variance")->capture_default_str();
    s_bench->add_option("--replicates", bench_a.replicates, "Number of data sets")->capture_default_str();
    s_bench->add_option("--replicates-csv", bench_a.replicates_csv, "Per-replicate estimates and timings");

    CovidArgs cov;
    auto* s_cov = app.add_subcommand("covid", "CSSE files -> BIC basis choice -> TV-SIR fit -> plot data");
    add_common(s_cov, common);
    add_fit(s_cov, cov.fit);
    s_cov->add_option("--confirmed", cov.confirmed, "CSSE confirmed cases CSV")->required();
    s_cov->add_option("--recovered", cov.recovered, "CSSE recovered CSV")->required();
    s_cov->add_option("--deaths", cov.deaths, "CSSE deaths CSV")->required();
    s_cov->add_option("--region", cov.region, "Country/Region (or Province/State)")->required();
    s_cov->add_option("--population", cov.population, "Population N")->required()->check(CLI::PositiveNumber);
    s_cov->add_option("--bases", cov.bases, "Candidate basis counts")->capture_default_str();
    s_cov->add_flag("--trim", cov.trim, "Drop the leading flat period");
    s_cov->add_option("--trim-fraction", cov.trim_fraction, "Flat while I < fraction * max I")
        ->capture_default_str();
    s_cov->add_option("--a0", cov.a0, "Gamma prior shape for lambda (default 0.01)");
    s_cov->add_option("--b0", cov.b0, "Gamma prior rate for lambda (default 0.01)");

    PlotArgs plot;
    auto* s_plot = app.add_subcommand("plotdata", "Long-format series,t,value CSV from a fit JSON");
    add_common(s_plot, common);
    s_plot->add_option("--fit", plot.fit, "FitResult JSON")->required();
    s_plot->add_option("--model", plot.model, "Expected model id (checked against the JSON)");
    s_plot->add_option("--data", plot.data, "Dataset CSV to include as data_* series");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (s_sim->parsed())
            return cmd_simulate(sim, common);
        if (s_tune->parsed())
            return cmd_tune(tune, common);
        if (s_fit->parsed())
            return cmd_fit(fitc, common);
        if (s_bench->parsed())
            return cmd_bench(bench_a, common);
        if (s_cov->parsed())
            return cmd_covid(cov, common);
        if (s_plot->parsed())
            return cmd_plotdata(plot, common);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitConfig;
}
