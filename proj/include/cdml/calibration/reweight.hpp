#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "cdml/core.hpp"

namespace cdml::calibration {

inline constexpr double kDefaultTrimThreshold = 0.05;

namespace detail {

/// Caps weights so that none exceeds `share` of the (capped) total. The fixed
/// point is found exactly: with the c largest weights capped at value v and
/// the rest summing to R, v = share * R / (1 - c * share).
inline void cap_shares(std::vector<double>& w, double share) {
    const Index n = w.size();
    if (n == 0 || share >= 1.0) return;
    if (share * static_cast<double>(n) <= 1.0) {
        // Every weight would have to sit at or below the mean; only equal weights fit.
        std::fill(w.begin(), w.end(), 1.0);
        return;
    }
    std::vector<double> sorted = w;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double rest = 0.0;
    for (double v : sorted) rest += v;
    for (Index c = 0; c < n; ++c) {
        // Try capping the c largest weights.
        if (static_cast<double>(c) * share >= 1.0) break;
        const double cap = share * rest / (1.0 - static_cast<double>(c) * share);
        if (sorted[c] <= cap) {
            if (c == 0) return;
            for (double& v : w) v = std::min(v, cap);
            return;
        }
        rest -= sorted[c];
    }
    std::fill(w.begin(), w.end(), 1.0);
}

} // namespace detail

/// Inverse-probability weights 1/pi (treated) and 1/(1-pi) (control). Within
/// each group no observation may carry more than `threshold` of the group's
/// weight sum; weights are then rescaled to mean one within the group.
inline std::vector<double> reweight_truncate(std::span<const double> pi, std::span<const int> treatment,
                                             double threshold = kDefaultTrimThreshold) {
    if (pi.size() != treatment.size()) throw Error("reweight_truncate: length mismatch");
    std::vector<double> out(pi.size(), 0.0);
    for (int group : {0, 1}) {
        IndexList members;
        std::vector<double> w;
        for (Index i = 0; i < pi.size(); ++i) {
            if (treatment[i] != group) continue;
            if (!(pi[i] > 0.0 && pi[i] < 1.0)) throw Error("reweight_truncate: propensity outside (0, 1)");
            members.push_back(i);
            w.push_back(group == 1 ? 1.0 / pi[i] : 1.0 / (1.0 - pi[i]));
        }
        if (members.empty()) continue;
        detail::cap_shares(w, threshold);
        double total = 0.0;
        for (double v : w) total += v;
        const double scale = static_cast<double>(w.size()) / total;
        for (Index k = 0; k < members.size(); ++k) out[members[k]] = w[k] * scale;
    }
    return out;
}

} // namespace cdml::calibration
