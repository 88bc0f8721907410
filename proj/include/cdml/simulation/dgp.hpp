#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cdml/core.hpp"
#include "cdml/random.hpp"

namespace cdml::simulation {

enum class Baseline { easy, difficult };
enum class Propensity { easy, difficult, extreme };

inline constexpr Index kDgpFeatures = 30;
inline constexpr double kTrueAte = 0.5;

struct DgpSpec {
    Baseline baseline = Baseline::easy;
    Propensity propensity = Propensity::easy;
    Index n = 2000;
    std::uint64_t seed = 0;

    /// DGP ids 1-6: ids 1-2 and 5 use the easy baseline; propensities cycle
    /// easy/difficult for 1-4 and are extreme for 5-6.
    static DgpSpec from_id(int id, Index n = 2000, std::uint64_t seed = 0) {
        DgpSpec s;
        s.n = n;
        s.seed = seed;
        switch (id) {
        case 1: s.baseline = Baseline::easy; s.propensity = Propensity::easy; break;
        case 2: s.baseline = Baseline::easy; s.propensity = Propensity::difficult; break;
        case 3: s.baseline = Baseline::difficult; s.propensity = Propensity::easy; break;
        case 4: s.baseline = Baseline::difficult; s.propensity = Propensity::difficult; break;
        case 5: s.baseline = Baseline::easy; s.propensity = Propensity::extreme; break;
        case 6: s.baseline = Baseline::difficult; s.propensity = Propensity::extreme; break;
        default: throw Error(fmt::format("DGP id must be between 1 and 6, got {}", id));
        }
        return s;
    }

    int id() const {
        const int b = baseline == Baseline::easy ? 0 : 1;
        switch (propensity) {
        case Propensity::easy: return 1 + 2 * b;
        case Propensity::difficult: return 2 + 2 * b;
        case Propensity::extreme: return 5 + b;
        }
        return 0;
    }
};

/// CDF of Beta(2, 4): P(Bin(5, x) >= 2) = sum_{j=2}^{5} C(5,j) x^j (1-x)^(5-j).
inline double beta24_cdf(double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    constexpr double binom[] = {1, 5, 10, 10, 5, 1};
    double s = 0.0;
    for (int j = 2; j <= 5; ++j) s += binom[j] * std::pow(x, j) * std::pow(1.0 - x, 5 - j);
    return s;
}

inline double baseline_effect(Baseline b, const double* x) {
    const double lead = b == Baseline::easy ? x[0] * x[1] : std::sin(std::numbers::pi * x[0] * x[1]);
    return lead + 2.0 * (x[2] - 0.5) * (x[2] - 0.5) + x[3] + 0.5 * x[4];
}

inline double propensity_score(Propensity p, const double* x) {
    switch (p) {
    case Propensity::easy: return 1.0 / (1.0 + std::exp(x[0] - x[1]));
    case Propensity::difficult: return 0.1 + 0.6 * beta24_cdf(std::min(x[0], x[1]));
    case Propensity::extreme: return 0.05 + 0.9 * beta24_cdf(std::min(x[0], x[1]));
    }
    return 0.5;
}

inline double cate(const double* x) { return 0.5 * (x[0] + x[1]); }

struct SimulatedSample {
    Dataset dataset;
    std::vector<double> true_propensity;
    std::vector<double> mu1;  // E[Y | D=1, X]
    std::vector<double> mu0;  // E[Y | D=0, X]
    std::vector<double> true_cate;
    double true_ate = kTrueAte;
};

inline SimulatedSample generate(const DgpSpec& spec) {
    if (spec.n < 1) throw Error("sample size must be positive");
    Rng rng(derive_seed(spec.seed, Stream::data));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const auto n = static_cast<Eigen::Index>(spec.n);
    const auto q = static_cast<Eigen::Index>(kDgpFeatures);
    SimulatedSample s;
    Dataset& data = s.dataset;
    data.covariates.resize(n, q);
    data.outcome.resize(n);
    data.treatment.resize(spec.n);
    for (Eigen::Index j = 0; j < q; ++j) data.feature_names.push_back(fmt::format("x{}", j + 1));
    s.true_propensity.resize(spec.n);
    s.mu1.resize(spec.n);
    s.mu0.resize(spec.n);
    s.true_cate.resize(spec.n);

    double row[kDgpFeatures];
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = static_cast<Index>(i);
        for (Eigen::Index j = 0; j < q; ++j) {
            row[j] = unif(rng);
            data.covariates(i, j) = row[j];
        }
        const double p = propensity_score(spec.propensity, row);
        const double b = baseline_effect(spec.baseline, row);
        const double t = cate(row);
        const int d = unif(rng) < p ? 1 : 0;
        const double eps = noise(rng);
        s.true_propensity[u] = p;
        s.true_cate[u] = t;
        s.mu1[u] = b + 0.5 * t;
        s.mu0[u] = b - 0.5 * t;
        data.treatment[u] = d;
        data.outcome[i] = b + (d - 0.5) * t + eps;
    }
    return s;
}

} // namespace cdml::simulation
