#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdml/random.hpp"

namespace cdml {

using Index = std::size_t;
using IndexList = std::vector<Index>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Observations (D_i, Y_i, X_i), i = 0..N-1.
struct Dataset {
    Eigen::MatrixXd covariates;     // N x q
    std::vector<int> treatment;     // 0 / 1
    Eigen::VectorXd outcome;        // N
    std::vector<std::string> feature_names;

    Index size() const { return treatment.size(); }
    Index n_features() const { return static_cast<Index>(covariates.cols()); }

    Index n_treated() const {
        return static_cast<Index>(std::count(treatment.begin(), treatment.end(), 1));
    }

    void validate() const {
        const auto n = treatment.size();
        if (n == 0) throw Error("dataset is empty");
        if (static_cast<Index>(covariates.rows()) != n || static_cast<Index>(outcome.size()) != n)
            throw Error("dataset containers differ in length");
        if (!feature_names.empty() && feature_names.size() != n_features())
            throw Error("feature name count does not match covariate columns");
        for (int d : treatment)
            if (d != 0 && d != 1) throw Error("treatment must be 0 or 1");
        if (!covariates.allFinite()) throw Error("covariates contain non-finite values");
        if (!outcome.allFinite()) throw Error("outcome contains non-finite values");
    }

    void require_both_groups() const {
        const Index t = n_treated();
        if (t == 0 || t == size()) throw Error("estimation requires treated and control units");
    }

    Dataset subset(std::span<const Index> rows) const {
        Dataset out;
        out.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
        out.outcome.resize(static_cast<Eigen::Index>(rows.size()));
        out.treatment.resize(rows.size());
        for (Index i = 0; i < rows.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(rows[i]);
            out.covariates.row(static_cast<Eigen::Index>(i)) = covariates.row(r);
            out.outcome[static_cast<Eigen::Index>(i)] = outcome[r];
            out.treatment[i] = treatment[rows[i]];
        }
        out.feature_names = feature_names;
        return out;
    }
};

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, std::span<const Index> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (Index i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

inline Eigen::VectorXd select_rows(const Eigen::VectorXd& v, std::span<const Index> rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (Index i = 0; i < rows.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
    return out;
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// K outer folds, each split into J sub-folds. Index sets are sorted.
struct FoldPlan {
    std::vector<IndexList> outer;
    std::vector<std::vector<IndexList>> inner;
    std::uint64_t seed = 0;

    Index k() const { return outer.size(); }
    Index j() const { return inner.empty() ? 0 : inner.front().size(); }

    /// Complement of outer fold k, sorted.
    IndexList training(Index k, Index n) const {
        std::vector<char> in_fold(n, 0);
        for (Index i : outer[k]) in_fold[i] = 1;
        IndexList out;
        out.reserve(n - outer[k].size());
        for (Index i = 0; i < n; ++i)
            if (!in_fold[i]) out.push_back(i);
        return out;
    }

    /// Union of the sub-folds of fold k other than j, sorted.
    IndexList calibration(Index k, Index j) const {
        IndexList out;
        for (Index s = 0; s < inner[k].size(); ++s)
            if (s != j) out.insert(out.end(), inner[k][s].begin(), inner[k][s].end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

namespace detail {
inline std::vector<IndexList> balanced_chunks(std::span<const Index> items, Index parts) {
    std::vector<IndexList> out(parts);
    const Index base = items.size() / parts;
    const Index extra = items.size() % parts;
    Index pos = 0;
    for (Index p = 0; p < parts; ++p) {
        const Index len = base + (p < extra ? 1 : 0);
        out[p].assign(items.begin() + static_cast<std::ptrdiff_t>(pos),
                      items.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return out;
}
} // namespace detail

inline FoldPlan make_fold_plan(Index n, Index k, Index j, std::uint64_t seed) {
    if (k == 0 || j == 0) throw Error("fold counts must be positive");
    if (k * j > n) throw Error("k * j exceeds the number of observations");
    IndexList perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(seed);
    for (Index i = n; i > 1; --i) {
        std::uniform_int_distribution<Index> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
    }
    FoldPlan plan;
    plan.seed = seed;
    plan.outer = detail::balanced_chunks(perm, k);
    plan.inner.resize(k);
    for (Index f = 0; f < k; ++f) {
        plan.inner[f] = detail::balanced_chunks(plan.outer[f], j);
        for (auto& s : plan.inner[f]) std::sort(s.begin(), s.end());
        std::sort(plan.outer[f].begin(), plan.outer[f].end());
    }
    return plan;
}

/// Doubly robust score of one observation. `pi` must lie strictly in (0, 1).
inline double pseudo_outcome(int d, double y, double mu1, double mu0, double pi) {
    if (!(pi > 0.0 && pi < 1.0)) throw Error("propensity outside (0, 1); clip upstream");
    return mu1 - mu0 + d * (y - mu1) / pi - (1 - d) * (y - mu0) / (1.0 - pi);
}

struct AteResult {
    double theta_hat = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<double> pseudo_outcomes;
    std::map<std::string, double> diagnostics;
};

enum class SeMode {
    of_mean,  // sqrt(var(tau) / N)
    raw,      // sqrt(var(tau)), the unscaled spread of the scores
};

inline constexpr double kNormalQuantile975 = 1.96;

inline AteResult estimate_ate_from_pseudo(std::vector<double> tau, SeMode mode = SeMode::of_mean) {
    if (tau.empty()) throw Error("no pseudo-outcomes");
    for (double t : tau)
        if (!std::isfinite(t)) throw Error("non-finite pseudo-outcome");
    AteResult r;
    const double n = static_cast<double>(tau.size());
    r.theta_hat = mean(tau);
    // Two-pass form of mean(tau^2) - theta^2.
    double ss = 0.0;
    for (double t : tau) ss += (t - r.theta_hat) * (t - r.theta_hat);
    const double var = ss / n;
    r.se = mode == SeMode::of_mean ? std::sqrt(var / n) : std::sqrt(var);
    r.ci_low = r.theta_hat - kNormalQuantile975 * r.se;
    r.ci_high = r.theta_hat + kNormalQuantile975 * r.se;
    r.pseudo_outcomes = std::move(tau);
    return r;
}

} // namespace cdml
