#pragma once

// Dataset CSV files: header `t,x1,...,xp`, one row per observation time.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ssvb/linalg.hpp"
#include "ssvb/observations.hpp"

namespace ssvb {

/// Malformed input file; message carries the path and line.
class ParseError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

namespace csv {

/// Splits one CSV record. Handles double-quoted fields with "" escapes.
inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

/// Parses a whole field as a double; throws with `where` on failure.
inline double to_double(std::string_view field, const std::string& where) {
    const std::string_view s = trim(field);
    double v = 0.0;
    const char* first = s.data();
    if (!s.empty() && s.front() == '+')
        ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ParseError(where + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

/// Reads lines, stripping a trailing CR and a UTF-8 BOM on the first line.
inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (lines.empty() && line.starts_with("\xEF\xBB\xBF"))
            line.erase(0, 3);
        lines.push_back(std::move(line));
    }
    return lines;
}

} // namespace csv

/// Comma-separated list of numbers, e.g. "0.2,0.2,3".
inline Vector parse_vector(std::string_view text) {
    const auto fields = csv::split(text);
    Vector v(static_cast<Index>(fields.size()));
    for (std::size_t k = 0; k < fields.size(); ++k)
        v[static_cast<Index>(k)] = csv::to_double(fields[k], "list entry " + std::to_string(k + 1));
    return v;
}

inline ObservationSet parse_dataset(const std::vector<std::string>& lines, const std::string& name) {
    auto where = [&](std::size_t ln) { return name + ":" + std::to_string(ln); };
    std::size_t first = 0;
    while (first < lines.size() && csv::trim(lines[first]).empty())
        ++first;
    if (first == lines.size())
        throw ParseError(name + ": empty dataset file");
    const auto header = csv::split(lines[first]);
    if (header.size() < 2 || csv::trim(header[0]) != "t")
        throw ParseError(where(first + 1) + ": header must be t,x1,...,xp");
    for (std::size_t j = 1; j < header.size(); ++j)
        if (csv::trim(header[j]) != "x" + std::to_string(j))
            throw ParseError(where(first + 1) + ": header column " + std::to_string(j + 1) +
                             " must be x" + std::to_string(j));
    const std::size_t p = header.size() - 1;

    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
        if (csv::trim(lines[ln]).empty())
            continue;
        const auto f = csv::split(lines[ln]);
        if (f.size() != p + 1)
            throw ParseError(where(ln + 1) + ": expected " + std::to_string(p + 1) + " fields, got " +
                             std::to_string(f.size()));
        const double t = csv::to_double(f[0], where(ln + 1));
        if (!times.empty() && !(t > times.back()))
            throw ParseError(where(ln + 1) + ": times must be strictly increasing");
        std::vector<double> r(p);
        for (std::size_t j = 0; j < p; ++j) {
            r[j] = csv::to_double(f[j + 1], where(ln + 1));
            if (!std::isfinite(r[j]))
                throw ParseError(where(ln + 1) + ": non-finite observation");
        }
        times.push_back(t);
        rows.push_back(std::move(r));
    }
    if (times.size() < 2)
        throw ParseError(name + ": dataset needs at least two rows");
    ObservationSet d;
    d.times = std::move(times);
    d.y.resize(static_cast<Index>(rows.size()), static_cast<Index>(p));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < p; ++j)
            d.y(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return d;
}

inline ObservationSet read_dataset(const std::string& path) {
    return parse_dataset(csv::read_lines(path), path);
}

inline void write_dataset(std::ostream& out, const ObservationSet& d) {
    validate(d);
    out << "t";
    for (Index j = 0; j < d.dim(); ++j)
        out << ",x" << (j + 1);
    out << '\n' << std::setprecision(17);
    for (Index i = 0; i < d.n_points(); ++i) {
        out << d.times[static_cast<std::size_t>(i)];
        for (Index j = 0; j < d.dim(); ++j)
            out << ',' << d.y(i, j);
        out << '\n';
    }
}

inline void write_dataset(const std::string& path, const ObservationSet& d) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write '" + path + "'");
    write_dataset(out, d);
    if (!out)
        throw ConfigError("write to '" + path + "' failed");
}

} // namespace ssvb
