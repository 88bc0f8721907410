#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "cdml/core.hpp"

namespace cdml::csv {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view column) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw Error(fmt::format("line {}: column '{}' is not numeric: '{}'", line, column, s));
    return v;
}

} // namespace detail

/// Reads a header-first CSV. One column is the binary treatment, one the
/// outcome; every other column becomes a covariate in file order.
inline Dataset read_dataset(std::istream& in, std::string_view treatment_col, std::string_view outcome_col) {
    std::string line;
    if (!std::getline(in, line)) throw Error("csv is empty");
    auto header = detail::split(line);
    std::vector<std::string> names(header.begin(), header.end());
    auto find = [&](std::string_view col) -> std::size_t {
        auto it = std::find(names.begin(), names.end(), col);
        if (it == names.end()) throw Error(fmt::format("missing column '{}'", col));
        return static_cast<std::size_t>(it - names.begin());
    };
    const std::size_t t_idx = find(treatment_col);
    const std::size_t y_idx = find(outcome_col);
    if (t_idx == y_idx) throw Error("treatment and outcome columns must differ");

    std::vector<std::size_t> x_idx;
    Dataset data;
    for (std::size_t c = 0; c < names.size(); ++c) {
        if (c == t_idx || c == y_idx) continue;
        x_idx.push_back(c);
        data.feature_names.push_back(names[c]);
    }

    std::vector<double> x_values;
    std::vector<double> y_values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split(line);
        if (cells.size() != names.size())
            throw Error(fmt::format("line {}: expected {} fields, found {}", line_no, names.size(), cells.size()));
        const double d = detail::parse_double(cells[t_idx], line_no, names[t_idx]);
        if (d != 0.0 && d != 1.0)
            throw Error(fmt::format("line {}: treatment must be 0 or 1", line_no));
        data.treatment.push_back(static_cast<int>(d));
        y_values.push_back(detail::parse_double(cells[y_idx], line_no, names[y_idx]));
        for (auto c : x_idx) x_values.push_back(detail::parse_double(cells[c], line_no, names[c]));
    }
    const auto n = static_cast<Eigen::Index>(y_values.size());
    const auto q = static_cast<Eigen::Index>(x_idx.size());
    data.outcome = Eigen::Map<Eigen::VectorXd>(y_values.data(), n);
    data.covariates = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        x_values.data(), n, q);
    data.validate();
    return data;
}

inline Dataset read_dataset(const std::string& path, std::string_view treatment_col, std::string_view outcome_col) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path));
    return read_dataset(in, treatment_col, outcome_col);
}

/// Writes doubles in shortest round-trip form, so read(write(d)) == d bitwise.
inline void write_dataset(std::ostream& out, const Dataset& data, std::string_view treatment_col = "d",
                          std::string_view outcome_col = "y") {
    out << treatment_col << ',' << outcome_col;
    for (Index c = 0; c < data.n_features(); ++c) {
        if (data.feature_names.empty())
            out << ",x" << (c + 1);
        else
            out << ',' << data.feature_names[c];
    }
    out << '\n';
    for (Index i = 0; i < data.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << data.treatment[i] << ',' << fmt::format("{}", data.outcome[r]);
        for (Eigen::Index c = 0; c < data.covariates.cols(); ++c) out << ',' << fmt::format("{}", data.covariates(r, c));
        out << '\n';
    }
}

inline void write_dataset(const std::string& path, const Dataset& data, std::string_view treatment_col = "d",
                          std::string_view outcome_col = "y") {
    std::ofstream out(path);
    if (!out) throw Error(fmt::format("cannot write '{}'", path));
    write_dataset(out, data, treatment_col, outcome_col);
}

} // namespace cdml::csv
