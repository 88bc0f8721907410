#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "cdml/core.hpp"
#include "cdml/learners/gradient_boosting.hpp"

namespace cdml::learners {

struct LassoParams {
    double lambda = 0.01;
    bool classification = false;
    double tolerance = 1e-7;    // max coefficient change per pass
    Index max_passes = 10000;   // coordinate-descent passes
    Index max_outer = 100;      // proximal Newton steps (classification)
};

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

/// Column means and population standard deviations; zero-variance columns
/// get scale 0 and are left out of the fit.
struct Standardizer {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;

    explicit Standardizer(const Eigen::MatrixXd& x) : center(x.colwise().mean()), scale(x.cols()) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double var = (x.col(c).array() - center[c]).square().mean();
            scale[c] = var > 1e-24 ? std::sqrt(var) : 0.0;
        }
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd z(x.rows(), x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (scale[c] > 0.0)
                z.col(c) = (x.col(c).array() - center[c]) / scale[c];
            else
                z.col(c).setZero();
        }
        return z;
    }
};

/// Solution on the standardized scale plus its optimisation trace.
struct LassoPath {
    double intercept = 0.0;
    Eigen::VectorXd beta;
    Index passes = 0;
    std::vector<double> objective;  // per outer pass (classification)
};

namespace detail {

/// Weighted coordinate descent for
///   (1 / 2n) sum_i w_i (z_i - b0 - x_i beta)^2 + lambda |beta|_1
/// with an unpenalised intercept. Cycles over the active set until it
/// settles, then confirms with a full sweep.
inline void weighted_cd(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, const Eigen::VectorXd& z, double lambda,
                        double tol, Index max_passes, double& b0, Eigen::VectorXd& beta, Eigen::VectorXd& resid,
                        Index& passes, const std::vector<char>& usable) {
    const double n = static_cast<double>(x.rows());
    const Eigen::Index p = x.cols();
    Eigen::VectorXd xwx(p);
    for (Eigen::Index j = 0; j < p; ++j) xwx[j] = (x.col(j).array().square() * w.array()).sum() / n;
    const double w_sum = w.sum() / n;
    resid = z - x * beta - Eigen::VectorXd::Constant(z.size(), b0);

    auto sweep = [&](bool active_only) {
        double max_delta = 0.0;
        if (w_sum > 0.0) {
            const double delta = (w.array() * resid.array()).sum() / n / w_sum;
            if (delta != 0.0) {
                b0 += delta;
                resid.array() -= delta;
                max_delta = std::abs(delta);
            }
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!usable[static_cast<std::size_t>(j)] || xwx[j] <= 0.0) continue;
            if (active_only && beta[j] == 0.0) continue;
            const double grad = (x.col(j).array() * w.array() * resid.array()).sum() / n;
            const double updated = soft_threshold(grad + xwx[j] * beta[j], lambda) / xwx[j];
            const double delta = updated - beta[j];
            if (delta != 0.0) {
                resid -= delta * x.col(j);
                beta[j] = updated;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        ++passes;
        return max_delta;
    };

    while (passes < max_passes) {
        const double full = sweep(false);
        if (full < tol) break;
        while (passes < max_passes && sweep(true) >= tol) {
        }
    }
}

} // namespace detail

/// Gaussian lasso, (1/2n)|y - b0 - X beta|^2 + lambda |beta|_1, on X as given.
inline LassoPath solve_gaussian_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoParams& params) {
    LassoPath path;
    path.beta = Eigen::VectorXd::Zero(x.cols());
    path.intercept = y.mean();
    Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
    Eigen::VectorXd resid;
    std::vector<char> usable(static_cast<std::size_t>(x.cols()), 1);
    detail::weighted_cd(x, w, y, params.lambda, params.tolerance, params.max_passes, path.intercept, path.beta, resid,
                        path.passes, usable);
    return path;
}

/// Mean logistic negative log-likelihood at (b0, beta).
inline double logistic_nll(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double b0, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = (x * beta).array() + b0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += logistic_loss(y[i], eta[i]);
    return s / static_cast<double>(y.size());
}

/// Gradient of logistic_nll with respect to (b0, beta), intercept first.
inline Eigen::VectorXd logistic_nll_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double b0,
                                             const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = (x * beta).array() + b0;
    Eigen::VectorXd r(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) r[i] = sigmoid(eta[i]) - y[i];
    Eigen::VectorXd g(beta.size() + 1);
    const double n = static_cast<double>(y.size());
    g[0] = r.sum() / n;
    g.tail(beta.size()) = x.transpose() * r / n;
    return g;
}

/// L1 logistic regression by proximal Newton: each outer pass solves the
/// weighted quadratic model with coordinate descent, then backtracks along the
/// step until the penalised objective does not increase.
inline LassoPath solve_logistic_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoParams& params) {
    LassoPath path;
    const Eigen::Index p = x.cols();
    path.beta = Eigen::VectorXd::Zero(p);
    const double base = std::clamp(y.mean(), 1e-12, 1.0 - 1e-12);
    path.intercept = std::log(base / (1.0 - base));
    std::vector<char> usable(static_cast<std::size_t>(p), 1);

    auto objective = [&](double b0, const Eigen::VectorXd& beta) {
        return logistic_nll(x, y, b0, beta) + params.lambda * beta.lpNorm<1>();
    };
    double current = objective(path.intercept, path.beta);
    path.objective.push_back(current);

    Eigen::VectorXd w(y.size());
    Eigen::VectorXd z(y.size());
    Eigen::VectorXd resid;
    for (Index outer = 0; outer < params.max_outer && path.passes < params.max_passes; ++outer) {
        const Eigen::VectorXd eta = (x * path.beta).array() + path.intercept;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double pr = sigmoid(eta[i]);
            w[i] = std::max(pr * (1.0 - pr), 1e-5);
            z[i] = eta[i] + (y[i] - pr) / w[i];
        }
        double b0 = path.intercept;
        Eigen::VectorXd beta = path.beta;
        detail::weighted_cd(x, w, z, params.lambda, params.tolerance, params.max_passes, b0, beta, resid, path.passes,
                            usable);

        const double d0 = b0 - path.intercept;
        const Eigen::VectorXd d = beta - path.beta;
        double t = 1.0;
        double candidate = objective(path.intercept + d0, path.beta + d);
        for (int k = 0; k < 40 && candidate > current; ++k) {
            t *= 0.5;
            candidate = objective(path.intercept + t * d0, path.beta + t * d);
        }
        if (candidate > current) break;
        const double change = std::max(std::abs(t * d0), (t * d).cwiseAbs().maxCoeff());
        path.intercept += t * d0;
        path.beta += t * d;
        const double previous = current;
        current = candidate;
        path.objective.push_back(current);
        if (change < params.tolerance || previous - current < 1e-14 * std::max(1.0, std::abs(previous))) break;
    }
    return path;
}

/// Lasso on standardised features with coefficients mapped back to the
/// original scale. Classification returns probabilities.
class LassoModel {
public:
    double intercept = 0.0;
    Eigen::VectorXd coef;
    bool classification = false;

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd eta = (x * coef).array() + intercept;
        if (classification) eta = eta.unaryExpr([](double v) { return sigmoid(v); });
        return eta;
    }
};

inline LassoModel fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoParams& params,
                            LassoPath* trace = nullptr) {
    if (x.rows() != y.size()) throw Error("lasso: row count mismatch");
    if (x.rows() < 2) throw Error("lasso: need at least two rows");
    LassoModel model;
    model.classification = params.classification;
    model.coef = Eigen::VectorXd::Zero(x.cols());
    if ((y.array() == y[0]).all()) {
        if (params.classification)
            model.intercept = y[0] > 0.5 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        else
            model.intercept = y[0];
        return model;
    }
    const Standardizer std_x(x);
    const Eigen::MatrixXd z = std_x.apply(x);
    LassoPath path = params.classification ? solve_logistic_lasso(z, y, params) : solve_gaussian_lasso(z, y, params);
    double b0 = path.intercept;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (std_x.scale[c] > 0.0) {
            model.coef[c] = path.beta[c] / std_x.scale[c];
            b0 -= model.coef[c] * std_x.center[c];
        }
    }
    model.intercept = b0;
    if (trace) *trace = std::move(path);
    return model;
}

} // namespace cdml::learners
