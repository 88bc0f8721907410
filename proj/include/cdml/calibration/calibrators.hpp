#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cdml/calibration/isotonic.hpp"
#include "cdml/core.hpp"
#include "cdml/learners/gradient_boosting.hpp"

namespace cdml::calibration {

using learners::log1p_exp;
using learners::sigmoid;

/// Scores are clipped into [kLogClip, 1 - kLogClip] wherever a method takes logs.
inline constexpr double kLogClip = 1e-6;

inline double clip_for_log(double s) { return std::clamp(s, kLogClip, 1.0 - kLogClip); }

/// Held-out (raw score, treatment) pairs a calibrator is fitted on.
struct CalibrationSet {
    std::vector<double> raw_scores;
    std::vector<int> labels;

    Index size() const { return labels.size(); }

    void validate() const {
        if (raw_scores.size() != labels.size()) throw Error("calibration set: scores and labels differ in length");
        if (labels.size() < 2) throw Error("calibration set: need at least two points");
        for (double s : raw_scores)
            if (!(s >= 0.0 && s <= 1.0)) throw Error("calibration set: scores must lie in [0, 1]");
        for (int d : labels)
            if (d != 0 && d != 1) throw Error("calibration set: labels must be 0 or 1");
    }

    bool has_both_classes() const {
        const auto ones = std::count(labels.begin(), labels.end(), 1);
        return ones > 0 && ones < static_cast<std::ptrdiff_t>(labels.size());
    }

    void require_both_classes(std::string_view method) const {
        if (!has_both_classes())
            throw Error(fmt::format("{}: calibration set contains a single class", method));
    }

    std::vector<double> label_values() const { return {labels.begin(), labels.end()}; }
};

enum class CalibrationMethod { identity, platt, beta, isotonic, venn_abers, temperature, expectation_consistent };

inline std::string_view to_string(CalibrationMethod m) {
    switch (m) {
    case CalibrationMethod::identity: return "identity";
    case CalibrationMethod::platt: return "platt";
    case CalibrationMethod::beta: return "beta";
    case CalibrationMethod::isotonic: return "isotonic";
    case CalibrationMethod::venn_abers: return "venn-abers";
    case CalibrationMethod::temperature: return "temperature";
    case CalibrationMethod::expectation_consistent: return "ec";
    }
    return "?";
}

/// pi(s) = 1 / (1 + exp(beta * t + alpha)), t = s or logit(s).
struct PlattParams {
    double alpha = 0.0;
    double beta = 0.0;
    bool logit_input = false;
};

/// logit pi(s) = beta0 * log s - beta1 * log(1 - s) + alpha; identity at (0, 1, 1).
struct BetaParams {
    double alpha = 0.0;
    double beta0 = 1.0;
    double beta1 = 1.0;
};

/// logit pi(s) = logit(s) / T. `target` is the accuracy matched by the
/// expectation-consistent fit (unused for likelihood-fitted temperature).
struct TemperatureParams {
    double temperature = 1.0;
    double target = 0.0;
};

/// Venn-Abers tables on a uniform grid over [0, 1]: p0[k] / p1[k] are the
/// isotonic fits at grid point k after adding it with label 0 / 1.
struct VennAbersTable {
    std::vector<double> p0;
    std::vector<double> p1;

    Index grid_size() const { return p0.size(); }
    double grid_point(Index k) const { return static_cast<double>(k) / static_cast<double>(p0.size() - 1); }

    Index nearest(double s) const {
        const double pos = std::clamp(s, 0.0, 1.0) * static_cast<double>(p0.size() - 1);
        return static_cast<Index>(std::llround(pos));
    }

    std::pair<double, double> interval(double s) const {
        const Index k = nearest(s);
        return {p0[k], p1[k]};
    }

    double operator()(double s) const {
        const auto [lo, hi] = interval(s);
        return combine(lo, hi);
    }

    /// Log-loss optimal merge of the two probabilities; lies in [p0, p1].
    static double combine(double p0, double p1) { return std::clamp(p1 / (1.0 - p0 + p1), p0, p1); }
};

namespace detail {

/// u / (u + v) with u = s^a and v = scale * (1 - s)^b, falling back to the
/// logistic form when both terms underflow.
inline double power_ratio(double s, double a, double b, double log_scale) {
    const double u = std::pow(s, a);
    const double v = std::exp(log_scale) * std::pow(1.0 - s, b);
    const double d = u + v;
    if (d > std::numeric_limits<double>::min() && std::isfinite(d)) return u / d;
    return sigmoid(a * std::log(s) - b * std::log1p(-s) - log_scale);
}

/// Maximum-likelihood logistic regression of labels on the given columns plus
/// an intercept (last coefficient). Newton's method with step halving; stops
/// when the mean-gradient infinity norm drops below `tol`.
inline Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels, double tol = 1e-8,
                                    int max_iter = 200) {
    const Eigen::Index n = features.rows();
    const Eigen::Index m = features.cols() + 1;
    Eigen::MatrixXd x(n, m);
    x.leftCols(m - 1) = features;
    x.col(m - 1).setOnes();
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

    auto nll = [&](const Eigen::VectorXd& w) {
        const Eigen::VectorXd eta = x * w;
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += log1p_exp(eta[i]) - y[i] * eta[i];
        return s / static_cast<double>(n);
    };

    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    const double base = std::clamp(y.mean(), 1e-12, 1.0 - 1e-12);
    w[m - 1] = std::log(base / (1.0 - base));
    double current = nll(w);
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd eta = x * w;
        Eigen::VectorXd r(n);
        Eigen::VectorXd h(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = sigmoid(eta[i]);
            r[i] = y[i] - p;
            h[i] = p * (1.0 - p);
        }
        const Eigen::VectorXd grad = x.transpose() * r / static_cast<double>(n);
        if (grad.lpNorm<Eigen::Infinity>() < tol) break;
        Eigen::MatrixXd hess = x.transpose() * h.asDiagonal() * x / static_cast<double>(n);
        hess.diagonal().array() += 1e-12;
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd next = w + step;
        double value = nll(next);
        for (int k = 0; k < 50 && !(value <= current); ++k) {
            t *= 0.5;
            next = w + t * step;
            value = nll(next);
        }
        if (!(value <= current)) break;
        w = next;
        current = value;
    }
    return w;
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

} // namespace detail

class FittedCalibrator {
public:
    using Params = std::variant<std::monostate, PlattParams, BetaParams, IsotonicFit, VennAbersTable, TemperatureParams>;

    CalibrationMethod method = CalibrationMethod::identity;
    Params params;

    FittedCalibrator() = default;
    FittedCalibrator(CalibrationMethod m, Params p) : method(m), params(std::move(p)) {}

    static FittedCalibrator identity() { return {}; }

    double operator()(double s) const {
        switch (method) {
        case CalibrationMethod::identity:
            return s;
        case CalibrationMethod::platt: {
            const auto& p = std::get<PlattParams>(params);
            const double t = p.logit_input ? detail::logit(clip_for_log(s)) : s;
            return sigmoid(-(p.beta * t + p.alpha));
        }
        case CalibrationMethod::beta: {
            const auto& p = std::get<BetaParams>(params);
            return detail::power_ratio(clip_for_log(s), p.beta0, p.beta1, -p.alpha);
        }
        case CalibrationMethod::isotonic:
            return std::get<IsotonicFit>(params)(s);
        case CalibrationMethod::venn_abers:
            return std::get<VennAbersTable>(params)(s);
        case CalibrationMethod::temperature:
        case CalibrationMethod::expectation_consistent: {
            const double inv_t = 1.0 / std::get<TemperatureParams>(params).temperature;
            return detail::power_ratio(clip_for_log(s), inv_t, inv_t, 0.0);
        }
        }
        return s;
    }

    std::vector<double> apply(std::span<const double> scores) const {
        std::vector<double> out(scores.size());
        for (Index i = 0; i < scores.size(); ++i) out[i] = (*this)(scores[i]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Parametric maps

inline FittedCalibrator fit_platt(const CalibrationSet& cal, bool logit_input = false) {
    cal.validate();
    cal.require_both_classes("platt");
    Eigen::MatrixXd f(static_cast<Eigen::Index>(cal.size()), 1);
    for (Index i = 0; i < cal.size(); ++i)
        f(static_cast<Eigen::Index>(i), 0) = logit_input ? detail::logit(clip_for_log(cal.raw_scores[i])) : cal.raw_scores[i];
    const Eigen::VectorXd w = detail::fit_logistic(f, cal.labels);
    return {CalibrationMethod::platt, PlattParams{-w[1], -w[0], logit_input}};
}

/// Logistic regression on (log s, -log(1 - s)) with non-negative slopes. A
/// negative slope is fixed at zero and the remaining terms are refitted.
inline FittedCalibrator fit_beta(const CalibrationSet& cal) {
    cal.validate();
    cal.require_both_classes("beta");
    const auto n = static_cast<Eigen::Index>(cal.size());
    Eigen::MatrixXd full(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = clip_for_log(cal.raw_scores[static_cast<std::size_t>(i)]);
        full(i, 0) = std::log(s);
        full(i, 1) = -std::log1p(-s);
    }
    bool active[2] = {true, true};
    BetaParams out;
    for (;;) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index c = 0; c < 2; ++c)
            if (active[c]) cols.push_back(c);
        Eigen::MatrixXd f(n, static_cast<Eigen::Index>(cols.size()));
        for (Eigen::Index k = 0; k < f.cols(); ++k) f.col(k) = full.col(cols[static_cast<std::size_t>(k)]);
        const Eigen::VectorXd w = detail::fit_logistic(f, cal.labels);
        double slope[2] = {0.0, 0.0};
        bool negative = false;
        for (Eigen::Index k = 0; k < f.cols(); ++k) {
            const auto c = cols[static_cast<std::size_t>(k)];
            slope[c] = w[k];
            if (w[k] < 0.0) {
                active[c] = false;
                negative = true;
            }
        }
        if (!negative) {
            out = {w[w.size() - 1], slope[0], slope[1]};
            break;
        }
    }
    return {CalibrationMethod::beta, out};
}

/// Mean log-likelihood of labels under temperature T.
inline double temperature_log_likelihood(const CalibrationSet& cal, double temperature) {
    double s = 0.0;
    for (Index i = 0; i < cal.size(); ++i) {
        const double z = detail::logit(clip_for_log(cal.raw_scores[i])) / temperature;
        s -= cal.labels[i] == 1 ? log1p_exp(-z) : log1p_exp(z);
    }
    return s / static_cast<double>(cal.size());
}

inline constexpr double kMinTemperature = 1e-3;
inline constexpr double kMaxTemperature = 1e3;

/// Likelihood-maximising temperature by golden-section search on log T.
inline FittedCalibrator fit_temperature(const CalibrationSet& cal) {
    cal.validate();
    cal.require_both_classes("temperature");
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(kMinTemperature);
    double b = std::log(kMaxTemperature);
    auto f = [&](double log_t) { return temperature_log_likelihood(cal, std::exp(log_t)); };
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    while (b - a > 1e-10) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return {CalibrationMethod::temperature, TemperatureParams{std::exp((a + b) / 2.0), 0.0}};
}

/// Mean of max(pi, 1 - pi) under temperature T.
inline double mean_confidence(const CalibrationSet& cal, double temperature) {
    double s = 0.0;
    for (double raw : cal.raw_scores) {
        const double z = std::abs(detail::logit(clip_for_log(raw))) / temperature;
        s += sigmoid(z);
    }
    return s / static_cast<double>(cal.size());
}

/// Temperature at which the mean confidence equals the accuracy of the
/// 0.5-threshold classifier; bisection on log T.
inline FittedCalibrator fit_expectation_consistent(const CalibrationSet& cal) {
    cal.validate();
    Index correct = 0;
    for (Index i = 0; i < cal.size(); ++i)
        correct += static_cast<Index>((cal.raw_scores[i] >= 0.5 ? 1 : 0) == cal.labels[i]);
    const double accuracy = static_cast<double>(correct) / static_cast<double>(cal.size());

    double lo = std::log(kMinTemperature);
    double hi = std::log(kMaxTemperature);
    auto gap = [&](double log_t) { return mean_confidence(cal, std::exp(log_t)) - accuracy; };
    double temperature = 1.0;
    if (gap(lo) <= 0.0) {
        temperature = kMinTemperature;
    } else if (gap(hi) >= 0.0) {
        temperature = kMaxTemperature;
    } else {
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double g = gap(mid);
            if (std::abs(g) < 1e-10) {
                lo = hi = mid;
                break;
            }
            (g > 0.0 ? lo : hi) = mid;
        }
        temperature = std::exp(0.5 * (lo + hi));
    }
    return {CalibrationMethod::expectation_consistent, TemperatureParams{temperature, accuracy}};
}

// ---------------------------------------------------------------------------
// Non-parametric maps

inline FittedCalibrator fit_isotonic(const CalibrationSet& cal) {
    cal.validate();
    return {CalibrationMethod::isotonic, fit_isotonic_regression(cal.raw_scores, cal.label_values())};
}

inline constexpr Index kDefaultVennAbersGrid = 1001;

/// Builds the Venn-Abers tables. The isotonic fit at an added point depends
/// only on where it falls among the sorted calibration scores (strictly
/// between two of them, or tied with one), so one fit per distinct position
/// serves every grid point that lands there.
inline FittedCalibrator fit_venn_abers(const CalibrationSet& cal, Index grid_size = kDefaultVennAbersGrid) {
    cal.validate();
    if (grid_size < 2) throw Error("venn-abers: grid needs at least two points");
    const PooledPoints base = pool_ties(cal.raw_scores, cal.label_values());
    const Index m = base.score.size();

    // Value at the added point when it sits at sorted position `pos`;
    // `tied` merges it into the existing point at that position.
    std::vector<double> y;
    std::vector<double> w;
    y.reserve(m + 1);
    w.reserve(m + 1);
    auto fit_at = [&](Index pos, bool tied, double label) {
        y.clear();
        w.clear();
        for (Index i = 0; i < m; ++i) {
            if (i == pos) {
                if (tied) {
                    y.push_back((base.label[i] * base.weight[i] + label) / (base.weight[i] + 1.0));
                    w.push_back(base.weight[i] + 1.0);
                    continue;
                }
                y.push_back(label);
                w.push_back(1.0);
            }
            y.push_back(base.label[i]);
            w.push_back(base.weight[i]);
        }
        if (pos == m) {
            y.push_back(label);
            w.push_back(1.0);
        }
        return pava(y, w)[pos];
    };

    // Cache key: 2 * pos for "strictly before base point pos", 2 * pos + 1 for "tied with pos".
    std::map<Index, std::pair<double, double>> cache;
    VennAbersTable table;
    table.p0.resize(grid_size);
    table.p1.resize(grid_size);
    for (Index k = 0; k < grid_size; ++k) {
        const double g = table.grid_point(k);
        const auto it = std::lower_bound(base.score.begin(), base.score.end(), g);
        const Index pos = static_cast<Index>(it - base.score.begin());
        const bool tied = it != base.score.end() && *it == g;
        const Index key = 2 * pos + (tied ? 1 : 0);
        auto found = cache.find(key);
        if (found == cache.end())
            found = cache.emplace(key, std::make_pair(fit_at(pos, tied, 0.0), fit_at(pos, tied, 1.0))).first;
        table.p0[k] = found->second.first;
        table.p1[k] = found->second.second;
    }
    return {CalibrationMethod::venn_abers, std::move(table)};
}

struct CalibratorOptions {
    bool platt_logit_input = false;
    Index venn_abers_grid = kDefaultVennAbersGrid;
};

inline FittedCalibrator fit_calibrator(CalibrationMethod method, const CalibrationSet& cal,
                                       const CalibratorOptions& options = {}) {
    switch (method) {
    case CalibrationMethod::identity: return FittedCalibrator::identity();
    case CalibrationMethod::platt: return fit_platt(cal, options.platt_logit_input);
    case CalibrationMethod::beta: return fit_beta(cal);
    case CalibrationMethod::isotonic: return fit_isotonic(cal);
    case CalibrationMethod::venn_abers: return fit_venn_abers(cal, options.venn_abers_grid);
    case CalibrationMethod::temperature: return fit_temperature(cal);
    case CalibrationMethod::expectation_consistent: return fit_expectation_consistent(cal);
    }
    return FittedCalibrator::identity();
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean squared distance to the true propensities (simulation only).
inline double calibration_error(std::span<const double> pi, std::span<const double> p_true) {
    if (pi.size() != p_true.size()) throw Error("calibration_error: length mismatch");
    if (pi.empty()) return 0.0;
    double s = 0.0;
    for (Index i = 0; i < pi.size(); ++i) s += (pi[i] - p_true[i]) * (pi[i] - p_true[i]);
    return s / static_cast<double>(pi.size());
}

inline double brier_score(std::span<const double> pi, std::span<const int> treatment) {
    if (pi.size() != treatment.size()) throw Error("brier_score: length mismatch");
    if (pi.empty()) return 0.0;
    double s = 0.0;
    for (Index i = 0; i < pi.size(); ++i) s += (pi[i] - treatment[i]) * (pi[i] - treatment[i]);
    return s / static_cast<double>(pi.size());
}

} // namespace cdml::calibration
