#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cdml/core.hpp"

namespace cdml::learners {

/// Column-major matrix of bin codes. Bin b of feature f holds values
/// x <= cuts[f][b] (and > cuts[f][b-1]); the last bin holds x > cuts[f].back().
class BinnedMatrix {
public:
    static constexpr Index kMaxBins = 256;

    BinnedMatrix() = default;

    explicit BinnedMatrix(const Eigen::MatrixXd& x, Index max_bins = kMaxBins)
        : rows_(static_cast<Index>(x.rows())), cols_(static_cast<Index>(x.cols())) {
        max_bins = std::clamp<Index>(max_bins, 2, kMaxBins);
        cuts_.resize(cols_);
        codes_.resize(rows_ * cols_);
        std::vector<double> sorted(rows_);
        for (Index f = 0; f < cols_; ++f) {
            for (Index i = 0; i < rows_; ++i) sorted[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
            std::sort(sorted.begin(), sorted.end());
            auto last = std::unique(sorted.begin(), sorted.end());
            const Index n_unique = static_cast<Index>(last - sorted.begin());
            auto& cuts = cuts_[f];
            if (n_unique <= max_bins) {
                for (Index u = 0; u + 1 < n_unique; ++u) cuts.push_back(midpoint(sorted[u], sorted[u + 1]));
            } else {
                for (Index b = 1; b < max_bins; ++b) {
                    const Index pos = b * n_unique / max_bins;
                    const double c = midpoint(sorted[pos - 1], sorted[pos]);
                    if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
                }
            }
            for (Index i = 0; i < rows_; ++i)
                codes_[f * rows_ + i] = code_for(f, x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)));
        }
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index n_bins(Index f) const { return cuts_[f].size() + 1; }
    double cut(Index f, Index b) const { return cuts_[f][b]; }
    const std::uint8_t* column(Index f) const { return codes_.data() + f * rows_; }

    std::uint8_t code_for(Index f, double v) const {
        const auto& c = cuts_[f];
        return static_cast<std::uint8_t>(std::lower_bound(c.begin(), c.end(), v) - c.begin());
    }

private:
    static double midpoint(double a, double b) {
        const double m = a + (b - a) / 2.0;
        // keep a < m so that "x <= cut" separates a from b
        return m < b ? m : a;
    }

    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<std::vector<double>> cuts_;
    std::vector<std::uint8_t> codes_;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

/// Binary regression tree; go left when x[feature] <= threshold.
class Tree {
public:
    std::vector<TreeNode> nodes;

    template <class Row>
    double predict_row(const Row& x) const {
        int id = 0;
        while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(id)];
            id = x[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(id)].value;
    }

    int depth() const { return depth_from(0); }
    Index n_leaves() const {
        return static_cast<Index>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
    }

private:
    int depth_from(int id) const {
        const auto& n = nodes[static_cast<std::size_t>(id)];
        if (n.feature < 0) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }
};

struct TreeParams {
    int max_depth = 3;
    Index min_leaf = 1;
    Index max_features = 0;  // features tried per split; 0 = all
};

/// Leaf value from the (possibly repeated) training rows that reach it.
using LeafValueFn = std::function<double(std::span<const Index>)>;

/// Grows a tree on a squared-error criterion. For 0/1 targets the SSE
/// reduction is proportional to the Gini decrease, so one routine serves
/// regression and classification trees. `rows` may contain repeats
/// (bootstrap); `rng` is only consulted when max_features < cols.
class TreeBuilder {
public:
    TreeBuilder(const BinnedMatrix& x, std::span<const double> target, TreeParams params, LeafValueFn leaf_value = {},
                Rng* rng = nullptr)
        : x_(x), target_(target), params_(params), leaf_value_(std::move(leaf_value)), rng_(rng) {
        params_.min_leaf = std::max<Index>(1, params_.min_leaf);
        if (params_.max_features == 0 || params_.max_features > x_.cols()) params_.max_features = x_.cols();
        features_.resize(x_.cols());
        std::iota(features_.begin(), features_.end(), Index{0});
    }

    Tree build(IndexList rows) {
        Tree tree;
        tree.nodes.reserve(64);
        grow(tree, std::move(rows), 0);
        return tree;
    }

private:
    struct Split {
        double gain = 0.0;
        Index feature = 0;
        Index bin = 0;
        bool found = false;
    };

    double leaf(std::span<const Index> rows) const {
        if (leaf_value_) return leaf_value_(rows);
        double s = 0.0;
        for (Index r : rows) s += target_[r];
        return s / static_cast<double>(rows.size());
    }

    int grow(Tree& tree, IndexList rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const Index n = rows.size();
        Split best;
        if (depth < params_.max_depth && n >= 2 * params_.min_leaf) best = find_split(rows);
        if (!best.found) {
            tree.nodes[static_cast<std::size_t>(id)].value = leaf(rows);
            return id;
        }
        IndexList left, right;
        left.reserve(n);
        right.reserve(n);
        const auto* col = x_.column(best.feature);
        for (Index r : rows) (col[r] <= best.bin ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        tree.nodes[static_cast<std::size_t>(id)].feature = static_cast<int>(best.feature);
        tree.nodes[static_cast<std::size_t>(id)].threshold = x_.cut(best.feature, best.bin);
        const int l = grow(tree, std::move(left), depth + 1);
        const int r = grow(tree, std::move(right), depth + 1);
        tree.nodes[static_cast<std::size_t>(id)].left = l;
        tree.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    Split find_split(const IndexList& rows) {
        const Index n = rows.size();
        double total = 0.0;
        double total_sq = 0.0;
        for (Index r : rows) {
            total += target_[r];
            total_sq += target_[r] * target_[r];
        }
        const double parent = total * total / static_cast<double>(n);
        // Pure node: nothing to gain.
        if (total_sq - parent <= 1e-12 * std::max(1.0, total_sq)) return {};

        const Index n_try = params_.max_features;
        if (n_try < x_.cols()) {
            for (Index i = 0; i < n_try; ++i) {
                std::uniform_int_distribution<Index> pick(i, x_.cols() - 1);
                std::swap(features_[i], features_[pick(*rng_)]);
            }
        }

        Split best;
        double counts[BinnedMatrix::kMaxBins];
        double sums[BinnedMatrix::kMaxBins];
        for (Index t = 0; t < n_try; ++t) {
            const Index f = features_[t];
            const Index nb = x_.n_bins(f);
            if (nb < 2) continue;
            std::fill_n(counts, nb, 0.0);
            std::fill_n(sums, nb, 0.0);
            const auto* col = x_.column(f);
            for (Index r : rows) {
                counts[col[r]] += 1.0;
                sums[col[r]] += target_[r];
            }
            double n_left = 0.0;
            double s_left = 0.0;
            const double min_leaf = static_cast<double>(params_.min_leaf);
            for (Index b = 0; b + 1 < nb; ++b) {
                n_left += counts[b];
                s_left += sums[b];
                if (counts[b] == 0.0) continue;
                const double n_right = static_cast<double>(n) - n_left;
                if (n_left < min_leaf) continue;
                if (n_right < min_leaf) break;
                const double s_right = total - s_left;
                const double gain = s_left * s_left / n_left + s_right * s_right / n_right - parent;
                if (gain > best.gain + 1e-12 * std::max(1.0, std::abs(parent))) {
                    best = {gain, f, b, true};
                }
            }
        }
        return best;
    }

    const BinnedMatrix& x_;
    std::span<const double> target_;
    TreeParams params_;
    LeafValueFn leaf_value_;
    Rng* rng_;
    IndexList features_;
};

} // namespace cdml::learners
