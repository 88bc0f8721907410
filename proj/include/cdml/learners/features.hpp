#pragma once

#include <Eigen/Dense>

#include "cdml/core.hpp"

namespace cdml::learners {

inline Index expanded_width(Index q) { return q + q + q * (q - 1) / 2; }

/// Degree-two expansion: [x_j], then [x_j^2], then [x_j * x_l] for j < l.
inline Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x) {
    const Eigen::Index q = x.cols();
    if (q < 1) throw Error("expand_features: need at least one column");
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(expanded_width(static_cast<Index>(q))));
    out.leftCols(q) = x;
    out.middleCols(q, q) = x.array().square().matrix();
    Eigen::Index c = 2 * q;
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index l = j + 1; l < q; ++l) out.col(c++) = x.col(j).cwiseProduct(x.col(l));
    return out;
}

} // namespace cdml::learners
