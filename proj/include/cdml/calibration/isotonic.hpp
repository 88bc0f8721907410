#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "cdml/core.hpp"

namespace cdml::calibration {

/// Pool adjacent violators: weighted least-squares non-decreasing fit to `y`
/// (already ordered by score). Returns one fitted value per input.
inline std::vector<double> pava(std::span<const double> y, std::span<const double> w) {
    struct Block {
        double sum_wy;
        double sum_w;
        Index count;
        double value() const { return sum_wy / sum_w; }
    };
    std::vector<Block> stack;
    stack.reserve(y.size());
    for (Index i = 0; i < y.size(); ++i) {
        stack.push_back({w[i] * y[i], w[i], 1});
        while (stack.size() > 1 && stack[stack.size() - 2].value() >= stack.back().value()) {
            Block top = stack.back();
            stack.pop_back();
            // Equal neighbours are merged too so that level sets are maximal.
            stack.back().sum_wy += top.sum_wy;
            stack.back().sum_w += top.sum_w;
            stack.back().count += top.count;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const auto& b : stack) out.insert(out.end(), b.count, b.value());
    return out;
}

inline std::vector<double> pava(std::span<const double> y) {
    std::vector<double> w(y.size(), 1.0);
    return pava(y, w);
}

/// Scores with their (weighted) mean labels, merged on exact ties and sorted.
struct PooledPoints {
    std::vector<double> score;
    std::vector<double> label;   // mean label at this score
    std::vector<double> weight;  // number of observations at this score
};

inline PooledPoints pool_ties(std::span<const double> scores, std::span<const double> labels) {
    IndexList order(scores.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] < scores[b]; });
    PooledPoints p;
    for (Index i : order) {
        if (!p.score.empty() && p.score.back() == scores[i]) {
            p.label.back() += labels[i];
            p.weight.back() += 1.0;
        } else {
            p.score.push_back(scores[i]);
            p.label.push_back(labels[i]);
            p.weight.push_back(1.0);
        }
    }
    for (Index i = 0; i < p.label.size(); ++i) p.label[i] /= p.weight[i];
    return p;
}

/// Monotone step fit evaluated with linear interpolation between knots and
/// constant extension past the first and last knot.
struct IsotonicFit {
    std::vector<double> knots;   // sorted distinct scores
    std::vector<double> values;  // fitted value at each knot

    double operator()(double s) const {
        if (knots.empty()) return 0.5;
        if (s <= knots.front()) return values.front();
        if (s >= knots.back()) return values.back();
        const auto it = std::upper_bound(knots.begin(), knots.end(), s);
        const Index hi = static_cast<Index>(it - knots.begin());
        const Index lo = hi - 1;
        const double t = (s - knots[lo]) / (knots[hi] - knots[lo]);
        return values[lo] + t * (values[hi] - values[lo]);
    }
};

inline IsotonicFit fit_isotonic_regression(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw Error("isotonic: scores and labels differ in length");
    if (scores.empty()) throw Error("isotonic: empty calibration set");
    PooledPoints p = pool_ties(scores, labels);
    IsotonicFit fit;
    fit.values = pava(p.label, p.weight);
    fit.knots = std::move(p.score);
    return fit;
}

} // namespace cdml::calibration
