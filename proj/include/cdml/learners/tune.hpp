#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cdml/core.hpp"
#include "cdml/learners/learner.hpp"
#include "cdml/parallel.hpp"
#include "cdml/random.hpp"

namespace cdml::learners {

struct TuningSample {
    Eigen::MatrixXd features;
    Eigen::VectorXd targets;
};

struct TuneResult {
    LearnerSpec selected;
    Index selected_index = 0;
    std::vector<Index> wins;            // per grid point
    std::vector<double> mean_cv_loss;   // per grid point, averaged over replications
};

/// Cross-validation criterion; lower is better for all of them.
enum class CvMetric {
    automatic,      // squared error for regression, misclassification for classification
    squared_error,
    log_loss,
    misclassification,
};

inline std::string_view to_string(CvMetric m) {
    switch (m) {
    case CvMetric::automatic: return "auto";
    case CvMetric::squared_error: return "mse";
    case CvMetric::log_loss: return "log-loss";
    case CvMetric::misclassification: return "error-rate";
    }
    return "?";
}

inline CvMetric parse_cv_metric(std::string_view s) {
    if (s == "auto") return CvMetric::automatic;
    if (s == "mse") return CvMetric::squared_error;
    if (s == "log-loss" || s == "logloss") return CvMetric::log_loss;
    if (s == "error-rate" || s == "accuracy") return CvMetric::misclassification;
    throw Error(fmt::format("unknown CV metric '{}'", s));
}

inline CvMetric resolve(CvMetric m, Task task) {
    if (m != CvMetric::automatic) return m;
    return task == Task::regression ? CvMetric::squared_error : CvMetric::misclassification;
}

inline double prediction_loss(CvMetric metric, double y, double pred) {
    switch (metric) {
    case CvMetric::automatic:
    case CvMetric::squared_error: return (y - pred) * (y - pred);
    case CvMetric::log_loss: {
        const double p = std::clamp(pred, 1e-15, 1.0 - 1e-15);
        return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    case CvMetric::misclassification: return (pred >= 0.5 ? 1.0 : 0.0) != y ? 1.0 : 0.0;
    }
    return 0.0;
}

/// Ordering used to break ties: fewer trees, then shallower, then larger lambda.
inline auto complexity_key(const LearnerSpec& s) {
    double trees = 0.0;
    double depth = 0.0;
    double neg_lambda = 0.0;
    if (s.kind == LearnerKind::random_forest) {
        trees = s.get("n_trees");
        depth = s.get("max_depth");
    } else if (s.kind == LearnerKind::gradient_boosting) {
        trees = s.get("n_estimators");
        depth = s.get("max_depth");
    } else {
        neg_lambda = -s.get("lambda");
    }
    return std::make_tuple(trees, depth, neg_lambda);
}

/// Returns true when grid point a should win a tie against b (a precedes b in the grid).
inline bool simpler(const LearnerSpec& a, const LearnerSpec& b) { return complexity_key(a) < complexity_key(b); }

/// K-fold cross-validated mean loss of `spec` on one sample.
inline double cv_loss(const LearnerSpec& spec, const TuningSample& sample, Index cv_folds, std::uint64_t seed,
                      CvMetric metric = CvMetric::automatic) {
    metric = resolve(metric, spec.task);
    const Index n = static_cast<Index>(sample.targets.size());
    const FoldPlan plan = make_fold_plan(n, cv_folds, 1, seed);
    double total = 0.0;
    for (Index k = 0; k < cv_folds; ++k) {
        const IndexList train = plan.training(k, n);
        LearnerSpec s = spec;
        s.seed = derive_seed(seed, {k});
        const FittedModel m = fit(s, select_rows(sample.features, train), select_rows(sample.targets, train));
        const Eigen::VectorXd pred = m.predict(select_rows(sample.features, plan.outer[k]));
        for (Index i = 0; i < plan.outer[k].size(); ++i)
            total += prediction_loss(metric, sample.targets[static_cast<Eigen::Index>(plan.outer[k][i])],
                                     pred[static_cast<Eigen::Index>(i)]);
    }
    return total / static_cast<double>(n);
}

/// Grid search over several replications: on each, the grid point with the
/// lowest CV loss gets a win; the plurality winner is returned.
inline TuneResult tune(std::span<const LearnerSpec> grid, std::span<const TuningSample> reps, Index cv_folds,
                       std::uint64_t seed, CvMetric metric = CvMetric::automatic, Index workers = 1) {
    if (grid.empty()) throw Error("tune: empty grid");
    if (reps.empty()) throw Error("tune: no tuning samples");
    TuneResult result;
    result.wins.assign(grid.size(), 0);
    result.mean_cv_loss.assign(grid.size(), 0.0);

    auto better = [&](Index a, double loss_a, Index b, double loss_b) {
        if (loss_a != loss_b) return loss_a < loss_b;
        if (simpler(grid[a], grid[b])) return true;
        if (simpler(grid[b], grid[a])) return false;
        return a < b;
    };

    const Index n_grid = grid.size();
    std::vector<double> losses(reps.size() * n_grid, 0.0);
    if (n_grid > 1) {
        parallel_for(losses.size(), workers, [&](Index cell) {
            const Index r = cell / n_grid;
            const Index g = cell % n_grid;
            losses[cell] = cv_loss(grid[g], reps[r], cv_folds, derive_seed(seed, Stream::tuning, {r}), metric);
        });
    }

    for (Index r = 0; r < reps.size(); ++r) {
        Index best = 0;
        double best_loss = 0.0;
        for (Index g = 0; g < n_grid; ++g) {
            const double loss = losses[r * n_grid + g];
            result.mean_cv_loss[g] += loss / static_cast<double>(reps.size());
            if (g == 0 || better(g, loss, best, best_loss)) {
                best = g;
                best_loss = loss;
            }
        }
        ++result.wins[best];
    }

    Index winner = 0;
    for (Index g = 1; g < grid.size(); ++g) {
        const auto wg = result.wins[g];
        const auto ww = result.wins[winner];
        if (wg > ww || (wg == ww && simpler(grid[g], grid[winner]))) winner = g;
    }
    result.selected_index = winner;
    result.selected = grid[winner];
    return result;
}

/// Single-dataset variant: each replication redraws the CV partition.
inline TuneResult tune(std::span<const LearnerSpec> grid, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       Index n_tuning_reps, Index cv_folds, std::uint64_t seed,
                       CvMetric metric = CvMetric::automatic, Index workers = 1) {
    std::vector<TuningSample> reps(std::max<Index>(1, n_tuning_reps), TuningSample{x, y});
    return tune(grid, reps, cv_folds, seed, metric, workers);
}

} // namespace cdml::learners
