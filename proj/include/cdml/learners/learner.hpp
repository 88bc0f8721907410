#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cdml/core.hpp"
#include "cdml/learners/features.hpp"
#include "cdml/learners/gradient_boosting.hpp"
#include "cdml/learners/lasso.hpp"
#include "cdml/learners/random_forest.hpp"

namespace cdml::learners {

enum class LearnerKind { random_forest, gradient_boosting, lasso };
enum class Task { regression, classification };

inline std::string_view to_string(LearnerKind k) {
    switch (k) {
    case LearnerKind::random_forest: return "rf";
    case LearnerKind::gradient_boosting: return "gb";
    case LearnerKind::lasso: return "lasso";
    }
    return "?";
}

inline LearnerKind parse_learner_kind(std::string_view s) {
    if (s == "rf" || s == "random_forest") return LearnerKind::random_forest;
    if (s == "gb" || s == "gradient_boosting") return LearnerKind::gradient_boosting;
    if (s == "lasso") return LearnerKind::lasso;
    throw Error(fmt::format("unknown learner '{}'", s));
}

/// Hyperparameter names:
///   rf:    n_trees, max_depth, min_leaf, max_features
///   gb:    n_estimators, learning_rate, max_depth, min_leaf
///   lasso: lambda, expand (1 = degree-two feature expansion)
struct LearnerSpec {
    LearnerKind kind = LearnerKind::random_forest;
    Task task = Task::regression;
    std::map<std::string, double> hyperparameters;
    std::uint64_t seed = 0;

    double get(const std::string& name) const {
        if (auto it = hyperparameters.find(name); it != hyperparameters.end()) return it->second;
        return default_value(name);
    }

    double default_value(const std::string& name) const {
        switch (kind) {
        case LearnerKind::random_forest:
            if (name == "n_trees") return 100;
            if (name == "max_depth") return 20;
            if (name == "min_leaf") return 5;
            if (name == "max_features") return 0;
            break;
        case LearnerKind::gradient_boosting:
            if (name == "n_estimators") return 100;
            if (name == "learning_rate") return 0.1;
            if (name == "max_depth") return 3;
            if (name == "min_leaf") return 1;
            break;
        case LearnerKind::lasso:
            if (name == "lambda") return 0.01;
            if (name == "expand") return 1;
            break;
        }
        throw Error(fmt::format("learner '{}' has no hyperparameter '{}'", to_string(kind), name));
    }

    LearnerSpec with(const std::string& name, double value) const {
        default_value(name);  // rejects unknown names
        LearnerSpec s = *this;
        s.hyperparameters[name] = value;
        return s;
    }

    std::string describe() const {
        std::string out{to_string(kind)};
        for (const auto& [k, v] : hyperparameters) out += fmt::format(" {}={}", k, v);
        return out;
    }

    bool operator==(const LearnerSpec&) const = default;
};

inline bool expands_features(const LearnerSpec& spec) {
    return spec.kind == LearnerKind::lasso && spec.get("expand") != 0.0;
}

struct ConstantModel {
    double value = 0.0;
};

class FittedModel {
public:
    LearnerSpec spec;
    Index n_features = 0;
    bool expand = false;
    std::variant<ConstantModel, RandomForest, GradientBoosting, LassoModel> impl;

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        if (static_cast<Index>(x.cols()) != n_features)
            throw Error(fmt::format("predict: expected {} columns, got {}", n_features, x.cols()));
        if (auto* c = std::get_if<ConstantModel>(&impl)) return Eigen::VectorXd::Constant(x.rows(), c->value);
        const Eigen::MatrixXd features = expand ? expand_features(x) : x;
        Eigen::VectorXd out = std::visit(
            [&](const auto& m) -> Eigen::VectorXd {
                if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ConstantModel>)
                    return Eigen::VectorXd::Constant(x.rows(), m.value);
                else
                    return m.predict(features);
            },
            impl);
        if (spec.task == Task::classification) out = out.cwiseMax(0.0).cwiseMin(1.0);
        return out;
    }
};

inline Index min_rows(const LearnerSpec& spec) {
    if (spec.kind == LearnerKind::lasso) return 2;
    return std::max<Index>(2, 2 * static_cast<Index>(spec.get("min_leaf")));
}

inline FittedModel fit(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw Error("fit: features and targets differ in length");
    if (static_cast<Index>(x.rows()) < min_rows(spec))
        throw Error(fmt::format("fit: {} rows is too few for {}", x.rows(), spec.describe()));
    if (spec.task == Task::classification && ((y.array() != 0.0) && (y.array() != 1.0)).any())
        throw Error("fit: classification targets must be 0 or 1");

    FittedModel model;
    model.spec = spec;
    model.n_features = static_cast<Index>(x.cols());
    if ((y.array() == y[0]).all()) {
        model.impl = ConstantModel{y[0]};
        return model;
    }
    const bool cls = spec.task == Task::classification;
    switch (spec.kind) {
    case LearnerKind::random_forest: {
        RandomForestParams p;
        p.n_trees = static_cast<Index>(spec.get("n_trees"));
        p.max_depth = static_cast<int>(spec.get("max_depth"));
        p.min_leaf = static_cast<Index>(spec.get("min_leaf"));
        p.max_features = static_cast<Index>(spec.get("max_features"));
        p.classification = cls;
        p.seed = spec.seed;
        model.impl = fit_random_forest(x, y, p);
        break;
    }
    case LearnerKind::gradient_boosting: {
        GradientBoostingParams p;
        p.n_estimators = static_cast<Index>(spec.get("n_estimators"));
        p.learning_rate = spec.get("learning_rate");
        p.max_depth = static_cast<int>(spec.get("max_depth"));
        p.min_leaf = static_cast<Index>(spec.get("min_leaf"));
        p.classification = cls;
        model.impl = fit_gradient_boosting(x, y, p);
        break;
    }
    case LearnerKind::lasso: {
        LassoParams p;
        p.lambda = spec.get("lambda");
        p.classification = cls;
        model.expand = expands_features(spec);
        model.impl = fit_lasso(model.expand ? expand_features(x) : x, y, p);
        break;
    }
    }
    return model;
}

inline Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& x) { return model.predict(x); }

/// Cartesian product of named value lists, in row-major order of `axes`.
inline std::vector<LearnerSpec> make_grid(LearnerKind kind, Task task,
                                          const std::vector<std::pair<std::string, std::vector<double>>>& axes) {
    std::vector<LearnerSpec> grid{LearnerSpec{kind, task, {}, 0}};
    for (const auto& [name, values] : axes) {
        std::vector<LearnerSpec> next;
        for (const auto& g : grid)
            for (double v : values) next.push_back(g.with(name, v));
        grid = std::move(next);
    }
    return grid;
}

/// Hyperparameter grids searched when tuning each learner.
inline std::vector<std::pair<std::string, std::vector<double>>> default_grid_axes(LearnerKind kind) {
    switch (kind) {
    case LearnerKind::random_forest:
        return {{"max_depth", {1, 2, 3, 5, 10, 20}}, {"min_leaf", {5, 10, 15, 20, 30, 50}}};
    case LearnerKind::gradient_boosting:
        return {{"n_estimators", {5, 10, 25, 50, 100, 200, 500}},
                {"learning_rate", {0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1}},
                {"max_depth", {1, 2, 3, 5, 10}}};
    case LearnerKind::lasso:
        return {{"lambda", {0.005, 0.01, 0.05, 0.1, 0.5, 0.8, 1}}};
    }
    return {};
}

inline std::vector<LearnerSpec> default_grid(LearnerKind kind, Task task) {
    return make_grid(kind, task, default_grid_axes(kind));
}

} // namespace cdml::learners
