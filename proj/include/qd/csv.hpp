#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "qd/errors.hpp"
#include "qd/numerics.hpp"

namespace qd::csv {

/// Shortest round-trip decimal form ('.' separator, locale independent).
inline std::string format(double v) {
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view field) {
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t'))
        field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
        field.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw IoError("csv: cannot parse number '" + std::string(field) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

/// Numeric matrix with one CSV row per column of the result (points as columns).
/// A first line that does not parse as numbers is treated as a header.
inline Mat read_points(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r")
            continue;
        std::vector<double> row;
        try {
            for (auto f : split(line))
                row.push_back(parse_double(f));
        } catch (const IoError&) {
            if (first) {
                first = false;
                continue;
            }
            throw;
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw IoError(path + ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        return Mat(0, 0);
    Mat out(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t i = 0; i < rows[j].size(); ++i)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
    return out;
}

inline void write_points(std::ostream& out, const Mat& points) {
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            if (i)
                out << ',';
            out << format(points(i, j));
        }
        out << '\n';
    }
}

inline void write_points(const std::string& path, const Mat& points) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path);
    write_points(out, points);
}

} // namespace qd::csv
