#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cdml/core.hpp"
#include "cdml/learners/tree.hpp"

namespace cdml::learners {

struct GradientBoostingParams {
    Index n_estimators = 100;
    double learning_rate = 0.1;
    int max_depth = 3;
    Index min_leaf = 1;
    bool classification = false;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Bernoulli negative log-likelihood of label y at log-odds f.
inline double logistic_loss(double y, double f) {
    if (std::isinf(f)) return (f > 0) == (y > 0.5) ? 0.0 : std::numeric_limits<double>::infinity();
    return log1p_exp(f) - y * f;
}

/// Additive tree model on the raw scale (regression) or on log-odds
/// (classification, starting from the logit of the base rate).
class GradientBoosting {
public:
    double initial_score = 0.0;
    double learning_rate = 0.1;
    bool classification = false;
    std::vector<Tree> trees;

    Eigen::VectorXd decision_function(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd f = Eigen::VectorXd::Constant(x.rows(), initial_score);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Eigen::RowVectorXd row = x.row(i);
            for (const auto& t : trees) f[i] += learning_rate * t.predict_row(row);
        }
        return f;
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd f = decision_function(x);
        if (classification) f = f.unaryExpr([](double z) { return sigmoid(z); });
        return f;
    }
};

/// Fits the model; if `loss_path` is given it receives the mean training loss
/// before the first round and after every round.
inline GradientBoosting fit_gradient_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                              const GradientBoostingParams& params,
                                              std::vector<double>* loss_path = nullptr) {
    if (x.rows() != y.size()) throw Error("gradient boosting: row count mismatch");
    if (x.rows() == 0) throw Error("gradient boosting: nothing to fit");
    const Index n = static_cast<Index>(x.rows());
    GradientBoosting model;
    model.classification = params.classification;
    model.learning_rate = params.learning_rate;

    const double base = y.mean();
    if (params.classification) {
        if (base <= 0.0)
            model.initial_score = -std::numeric_limits<double>::infinity();
        else if (base >= 1.0)
            model.initial_score = std::numeric_limits<double>::infinity();
        else
            model.initial_score = std::log(base / (1.0 - base));
    } else {
        model.initial_score = base;
    }

    std::vector<double> score(n, model.initial_score);
    auto mean_loss = [&] {
        double s = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double yi = y[static_cast<Eigen::Index>(i)];
            s += params.classification ? logistic_loss(yi, score[i]) : 0.5 * (yi - score[i]) * (yi - score[i]);
        }
        return s / static_cast<double>(n);
    };
    if (loss_path) loss_path->push_back(mean_loss());

    // A constant target leaves nothing to boost.
    if ((y.array() == y[0]).all()) return model;

    BinnedMatrix binned(x);
    std::vector<double> residual(n);
    IndexList all(n);
    for (Index i = 0; i < n; ++i) all[i] = i;

    TreeParams tp;
    tp.max_depth = params.max_depth;
    tp.min_leaf = params.min_leaf;

    // Classification leaves take a Newton step on the leaf's log-loss, halved
    // until the shrunken step does not increase that loss. Every leaf then
    // lowers (or keeps) its loss, so the training loss is non-increasing.
    auto newton_leaf = [&](std::span<const Index> rows) {
        double g = 0.0;
        double h = 0.0;
        for (Index r : rows) {
            const double p = sigmoid(score[r]);
            g += residual[r];
            h += p * (1.0 - p);
        }
        if (h < 1e-150) return 0.0;
        double step = g / h;
        auto leaf_loss = [&](double delta) {
            double s = 0.0;
            for (Index r : rows) s += logistic_loss(y[static_cast<Eigen::Index>(r)], score[r] + delta);
            return s;
        };
        const double before = leaf_loss(0.0);
        for (int halvings = 0; halvings < 60; ++halvings) {
            if (leaf_loss(params.learning_rate * step) <= before) return step;
            step *= 0.5;
        }
        return 0.0;
    };

    model.trees.reserve(params.n_estimators);
    for (Index m = 0; m < params.n_estimators; ++m) {
        for (Index i = 0; i < n; ++i) {
            const double yi = y[static_cast<Eigen::Index>(i)];
            residual[i] = params.classification ? yi - sigmoid(score[i]) : yi - score[i];
        }
        LeafValueFn leaf_fn;
        if (params.classification) leaf_fn = newton_leaf;
        TreeBuilder builder(binned, residual, tp, leaf_fn);
        Tree tree = builder.build(all);
        for (Index i = 0; i < n; ++i) score[i] += params.learning_rate * tree.predict_row(x.row(static_cast<Eigen::Index>(i)));
        model.trees.push_back(std::move(tree));
        if (loss_path) loss_path->push_back(mean_loss());
    }
    return model;
}

} // namespace cdml::learners
