#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "cdml/core.hpp"
#include "cdml/learners/tree.hpp"
#include "cdml/parallel.hpp"
#include "cdml/random.hpp"

namespace cdml::learners {

struct RandomForestParams {
    Index n_trees = 100;
    int max_depth = 20;
    Index min_leaf = 5;
    Index max_features = 0;  // 0: ceil(sqrt(q)) for classification, ceil(q/3) for regression
    bool classification = false;
    std::uint64_t seed = 0;
    Index workers = 1;
};

/// Bagged trees. For classification each leaf stores its class-1 frequency and
/// the forest averages them, which gives smoother probabilities than voting.
class RandomForest {
public:
    std::vector<Tree> trees;
    bool classification = false;

    double predict_tree(Index t, const Eigen::RowVectorXd& x) const { return trees[t].predict_row(x); }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd out(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Eigen::RowVectorXd row = x.row(i);
            double s = 0.0;
            for (const auto& t : trees) s += t.predict_row(row);
            out[i] = s / static_cast<double>(trees.size());
        }
        return out;
    }
};

namespace detail {

/// Lexicographic order of (row, target). Training on rows in this order makes
/// the fitted forest independent of the caller's row order.
inline IndexList canonical_row_order(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    IndexList order(static_cast<Index>(x.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        const auto ia = static_cast<Eigen::Index>(a);
        const auto ib = static_cast<Eigen::Index>(b);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (x(ia, c) != x(ib, c)) return x(ia, c) < x(ib, c);
        }
        return y[ia] < y[ib];
    });
    return order;
}

} // namespace detail

inline Index default_max_features(Index q, bool classification) {
    const double v = classification ? std::ceil(std::sqrt(static_cast<double>(q))) : std::ceil(static_cast<double>(q) / 3.0);
    return std::clamp<Index>(static_cast<Index>(v), 1, q);
}

inline RandomForest fit_random_forest(const Eigen::MatrixXd& x_in, const Eigen::VectorXd& y_in,
                                      const RandomForestParams& params) {
    if (x_in.rows() != y_in.size()) throw Error("random forest: row count mismatch");
    if (x_in.rows() == 0 || params.n_trees == 0) throw Error("random forest: nothing to fit");
    const auto order = detail::canonical_row_order(x_in, y_in);
    const Eigen::MatrixXd x = select_rows(x_in, order);
    const Eigen::VectorXd y = select_rows(y_in, order);
    const Index n = static_cast<Index>(x.rows());

    BinnedMatrix binned(x);
    std::vector<double> target(y.data(), y.data() + y.size());

    TreeParams tp;
    tp.max_depth = params.max_depth;
    tp.min_leaf = params.min_leaf;
    tp.max_features = params.max_features == 0 ? default_max_features(static_cast<Index>(x.cols()), params.classification)
                                               : params.max_features;

    RandomForest forest;
    forest.classification = params.classification;
    forest.trees.resize(params.n_trees);
    parallel_for(params.n_trees, params.workers, [&](Index t) {
        Rng rng(derive_seed(params.seed, {t}));
        IndexList sample(n);
        std::uniform_int_distribution<Index> pick(0, n - 1);
        for (auto& s : sample) s = pick(rng);
        std::sort(sample.begin(), sample.end());
        TreeBuilder builder(binned, target, tp, {}, &rng);
        forest.trees[t] = builder.build(std::move(sample));
    });
    return forest;
}

} // namespace cdml::learners
