#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <string>
#include <vector>

#include "cgmvp/errors.hpp"
#include "cgmvp/market_data.hpp"

namespace cgmvp {

// Stocks as observations, trading days (or embedded dimensions) as features.
struct FeatureMatrix {
    std::vector<std::string> row_labels;  // tickers, length N
    Eigen::MatrixXd values;               // N x d
};

/// Transpose a return window so each stock becomes one observation row.
inline FeatureMatrix to_features(const ReturnMatrix& returns) {
    FeatureMatrix out;
    out.row_labels = returns.tickers;
    out.values = returns.values.transpose();
    return out;
}

/// Per-feature standardization across stocks: each column gets mean 0 and unit
/// population variance (divisor N). Columns with negligible spread map to zeros.
inline FeatureMatrix standard_scale(const FeatureMatrix& x) {
    const Eigen::Index n = x.values.rows();
    if (n < 2) throw ConfigError("standard_scale: need at least 2 observations");
    FeatureMatrix out;
    out.row_labels = x.row_labels;
    out.values.resize(n, x.values.cols());
    for (Eigen::Index j = 0; j < x.values.cols(); ++j) {
        const Eigen::VectorXd col = x.values.col(j);
        const double m = col.mean();
        const Eigen::VectorXd centered = col.array() - m;
        const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(n));
        const double scale_floor = 1e-12 * std::max(1.0, col.cwiseAbs().maxCoeff());
        if (sd <= scale_floor)
            out.values.col(j).setZero();
        else
            out.values.col(j) = centered / sd;
    }
    return out;
}

struct PcaResult {
    FeatureMatrix scores;                  // N x n_components
    Eigen::MatrixXd components;            // d x n_components, orthonormal columns
    Eigen::VectorXd explained_variance;    // descending, divisor N-1
    Eigen::VectorXd explained_variance_ratio;
    Eigen::RowVectorXd feature_means;
};

/// PCA on mean-centered data (no internal re-scaling); columns ordered by
/// descending explained variance. Component signs are fixed so the largest
/// absolute loading of each component is positive, which makes output
/// deterministic.
inline PcaResult pca_full(const FeatureMatrix& x, int n_components) {
    const Eigen::Index n = x.values.rows();
    const Eigen::Index d = x.values.cols();
    if (n < 2) throw ConfigError("pca: need at least 2 observations");
    if (n_components < 1 || n_components > std::min(n, d))
        throw ConfigError("pca: n_components " + std::to_string(n_components) +
                          " out of range [1, " + std::to_string(std::min(n, d)) + "]");

    PcaResult out;
    out.feature_means = x.values.colwise().mean();
    const Eigen::MatrixXd centered = x.values.rowwise() - out.feature_means;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::Index k = static_cast<Eigen::Index>(n_components);

    Eigen::MatrixXd u = svd.matrixU().leftCols(k);
    Eigen::MatrixXd v = svd.matrixV().leftCols(k);
    const Eigen::VectorXd s = svd.singularValues().head(k);

    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::Index arg_max = 0;
        v.col(j).cwiseAbs().maxCoeff(&arg_max);
        if (v(arg_max, j) < 0.0) {
            v.col(j) = -v.col(j);
            u.col(j) = -u.col(j);
        }
    }

    out.scores.row_labels = x.row_labels;
    out.scores.values = u * s.asDiagonal();
    out.components = v;
    out.explained_variance = s.array().square() / static_cast<double>(n - 1);
    const double total_var = centered.squaredNorm() / static_cast<double>(n - 1);
    out.explained_variance_ratio = total_var > 0.0
        ? (out.explained_variance / total_var).eval()
        : Eigen::VectorXd::Zero(k).eval();
    return out;
}

inline FeatureMatrix pca(const FeatureMatrix& x, int n_components) {
    return pca_full(x, n_components).scores;
}

}  // namespace cgmvp
