#pragma once

// Wide-format CSSE COVID-19 time series (one row per province, one column per
// day) turned into the (I, R) series used by the TV-SIR model.

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "ssvb/dataset_io.hpp"
#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"

namespace ssvb {

struct CsseTable {
    std::vector<std::string> dates;  // as written, M/D/YY
    std::vector<double> day_offsets; // days since the first date column
    std::vector<double> totals;      // region total per date
    int rows_matched = 0;
};

/// Days since 1970-01-01 for an `M/D/YY` (or `M/D/YYYY`) date.
inline int parse_csse_date(const std::string& s, const std::string& where) {
    const auto parts = [&] {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == '/') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    }();
    if (parts.size() != 3)
        throw ParseError(where + ": bad date '" + s + "', expected M/D/YY");
    const int mo = static_cast<int>(csv::to_double(parts[0], where));
    const int dd = static_cast<int>(csv::to_double(parts[1], where));
    int yy = static_cast<int>(csv::to_double(parts[2], where));
    if (parts[2].size() <= 2)
        yy += 2000;
    using namespace std::chrono;
    const year_month_day ymd{year{yy}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(dd)}};
    if (!ymd.ok())
        throw ParseError(where + ": invalid date '" + s + "'");
    return static_cast<int>(sys_days{ymd}.time_since_epoch().count());
}

/// Sums the rows of one region. Rows match on Country/Region; when none do,
/// Province/State is tried instead.
inline CsseTable parse_csse(const std::vector<std::string>& lines, const std::string& region,
                            const std::string& name) {
    if (lines.empty())
        throw ParseError(name + ": empty CSSE file");
    const auto header = csv::split(lines[0]);
    if (header.size() < 5 || csv::trim(header[0]) != "Province/State" ||
        csv::trim(header[1]) != "Country/Region")
        throw ParseError(name + ":1: expected header Province/State,Country/Region,Lat,Long,<dates>");
    CsseTable tab;
    int first_day = 0;
    for (std::size_t k = 4; k < header.size(); ++k) {
        const std::string d(csv::trim(header[k]));
        const int day = parse_csse_date(d, name + ":1");
        if (k == 4)
            first_day = day;
        tab.dates.push_back(d);
        tab.day_offsets.push_back(day - first_day);
    }
    tab.totals.assign(tab.dates.size(), 0.0);

    for (int pass = 0; pass < 2 && tab.rows_matched == 0; ++pass) {
        for (std::size_t ln = 1; ln < lines.size(); ++ln) {
            if (csv::trim(lines[ln]).empty())
                continue;
            const auto f = csv::split(lines[ln]);
            if (f.size() < 2)
                throw ParseError(name + ":" + std::to_string(ln + 1) + ": truncated row");
            if (csv::trim(f[pass == 0 ? 1 : 0]) != region)
                continue;
            const std::string where = name + ":" + std::to_string(ln + 1);
            if (f.size() != header.size())
                throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(f.size()));
            for (std::size_t k = 4; k < f.size(); ++k)
                tab.totals[k - 4] += csv::trim(f[k]).empty() ? 0.0 : csv::to_double(f[k], where);
            ++tab.rows_matched;
        }
    }
    if (tab.rows_matched == 0)
        throw ConfigError(name + ": region '" + region + "' not found");
    return tab;
}

struct CsseOptions {
    bool trim_flat = false;
    double flat_fraction = 1e-3;  // drop leading days while I < fraction * max I
};

struct CsseSeries {
    ObservationSet data;  // columns I, R; times are day offsets
    std::vector<std::string> dates;
    double population = 0.0;
    int trimmed_days = 0;
    std::vector<std::string> warnings;  // negative or decreasing values, left as is
};

inline CsseSeries build_csse_series(const CsseTable& confirmed, const CsseTable& recovered,
                                    const CsseTable& deaths, double population,
                                    const CsseOptions& opt = {}) {
    require(population > 0.0, "population must be positive");
    if (recovered.dates != confirmed.dates || deaths.dates != confirmed.dates)
        throw ConfigError("CSSE files do not share the same date columns");
    const std::size_t nd = confirmed.dates.size();
    std::vector<double> active(nd), removed(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        active[k] = confirmed.totals[k] - recovered.totals[k] - deaths.totals[k];
        removed[k] = recovered.totals[k] + deaths.totals[k];
    }

    CsseSeries out;
    out.population = population;
    std::size_t start = 0;
    if (opt.trim_flat) {
        double imax = 0.0;
        for (double v : active)
            imax = std::max(imax, v);
        while (start < nd && active[start] < opt.flat_fraction * imax)
            ++start;
    }
    out.trimmed_days = static_cast<int>(start);
    const std::size_t kept = nd - start;
    if (kept < 2)
        throw ConfigError("fewer than two dates left after trimming");

    out.data.times.resize(kept);
    out.data.y.resize(static_cast<Index>(kept), 2);
    for (std::size_t k = 0; k < kept; ++k) {
        const std::size_t src = start + k;
        out.data.times[k] = confirmed.day_offsets[src];
        out.data.y(static_cast<Index>(k), 0) = active[src];
        out.data.y(static_cast<Index>(k), 1) = removed[src];
        out.dates.push_back(confirmed.dates[src]);
        if (active[src] < 0.0 || removed[src] < 0.0)
            out.warnings.push_back(confirmed.dates[src] + ": negative I or R");
        if (active[src] + removed[src] > population)
            out.warnings.push_back(confirmed.dates[src] + ": I + R exceeds the population");
        if (k > 0 && removed[src] < removed[src - 1])
            out.warnings.push_back(confirmed.dates[src] + ": cumulative R decreased");
    }
    return out;
}

inline CsseSeries ingest_csse(const std::string& confirmed_csv, const std::string& recovered_csv,
                              const std::string& deaths_csv, const std::string& region,
                              double population, const CsseOptions& opt = {}) {
    const CsseTable c = parse_csse(csv::read_lines(confirmed_csv), region, confirmed_csv);
    const CsseTable r = parse_csse(csv::read_lines(recovered_csv), region, recovered_csv);
    const CsseTable d = parse_csse(csv::read_lines(deaths_csv), region, deaths_csv);
    return build_csse_series(c, r, d, population, opt);
}

} // namespace ssvb
