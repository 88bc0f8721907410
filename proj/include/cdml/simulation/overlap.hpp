#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "cdml/core.hpp"

namespace cdml::simulation {

struct OverlapRow {
    int group = 0;          // treatment status
    double score = 0.0;     // bin centre in [0, 1]
    double density = 0.0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<Index>(std::floor(pos));
    const Index hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace detail

/// Silverman's rule of thumb, 0.9 min(sd, IQR / 1.34) n^(-1/5).
inline double silverman_bandwidth(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
    const double iqr = detail::quantile_sorted(sorted, 0.75) - detail::quantile_sorted(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) spread = sd;
    return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Gaussian kernel density of the propensity score within each treatment
/// group, evaluated at `bins` equally spaced bin centres over [0, 1]. A group
/// with zero spread puts all its mass in the bin holding its value.
inline std::vector<OverlapRow> overlap_report(std::span<const double> propensity, std::span<const int> treatment,
                                              Index bins) {
    if (bins < 2) throw Error("overlap_report: need at least two bins");
    if (propensity.size() != treatment.size()) throw Error("overlap_report: length mismatch");
    std::vector<OverlapRow> rows;
    const double width = 1.0 / static_cast<double>(bins);
    for (int group : {0, 1}) {
        std::vector<double> x;
        for (Index i = 0; i < propensity.size(); ++i)
            if (treatment[i] == group) x.push_back(propensity[i]);
        if (x.empty()) continue;
        const double h = silverman_bandwidth(x);
        const double norm = 1.0 / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
        for (Index b = 0; b < bins; ++b) {
            const double centre = (static_cast<double>(b) + 0.5) * width;
            double density = 0.0;
            if (h > 0.0) {
                for (double v : x) {
                    const double z = (centre - v) / h;
                    density += std::exp(-0.5 * z * z);
                }
                density *= norm;
            } else {
                const auto spike = std::min(static_cast<Index>(std::clamp(x.front(), 0.0, 1.0) / width), bins - 1);
                density = b == spike ? 1.0 / width : 0.0;
            }
            rows.push_back({group, centre, density});
        }
    }
    return rows;
}

} // namespace cdml::simulation
