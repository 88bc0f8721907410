#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cdml/simulation/overlap.hpp"
#include "cdml/simulation/study.hpp"

namespace cdml::report {

enum class Format { csv, markdown };

inline Format parse_format(std::string_view s) {
    if (s == "csv") return Format::csv;
    if (s == "md" || s == "markdown") return Format::markdown;
    throw Error(fmt::format("unknown output format '{}'", s));
}

/// A table of pre-formatted cells; both output formats print the same strings.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write(std::ostream& os, Format format) const {
        if (format == Format::csv) {
            os << fmt::format("{}\n", fmt::join(header, ","));
            for (const auto& r : rows) os << fmt::format("{}\n", fmt::join(r, ","));
            return;
        }
        os << fmt::format("| {} |\n", fmt::join(header, " | "));
        std::vector<std::string> rule(header.size(), "---");
        os << fmt::format("| {} |\n", fmt::join(rule, " | "));
        for (const auto& r : rows) os << fmt::format("| {} |\n", fmt::join(r, " | "));
    }
};

inline std::string number(double v) { return fmt::format("{:.6f}", v); }

inline Table simulation_table(const simulation::ReplicationReport& report) {
    Table t{{"method", "rmse", "bias", "std_dev", "coverage"}, {}};
    for (const auto& s : report.summary())
        t.rows.push_back({s.method, number(s.rmse), number(s.bias), number(s.std_dev), number(s.coverage)});
    return t;
}

struct EstimateRow {
    std::string method;
    double fraction = 1.0;
    double ate = 0.0;
    double se = 0.0;
    double brier = 0.0;
};

inline Table estimate_table(const std::vector<EstimateRow>& rows) {
    Table t{{"method", "fraction", "ate", "se", "brier"}, {}};
    for (const auto& r : rows)
        t.rows.push_back({r.method, number(r.fraction), number(r.ate), number(r.se), number(r.brier)});
    return t;
}

inline Table overlap_table(const std::vector<simulation::OverlapRow>& rows) {
    Table t{{"group", "score", "density"}, {}};
    for (const auto& r : rows) t.rows.push_back({fmt::format("{}", r.group), number(r.score), number(r.density)});
    return t;
}

} // namespace cdml::report
