#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "cgmvp/clustering.hpp"
#include "cgmvp/errors.hpp"
#include "cgmvp/gmvp.hpp"
#include "cgmvp/market_data.hpp"

namespace cgmvp {

struct TwoStageResult {
    std::vector<WeightVector> within_weights;  // one per cluster, over member stocks
    WeightVector between_weights;              // over clusters
    WeightVector flat_weights;                 // over all stocks
    ReturnMatrix cluster_returns;              // T x k within-cluster portfolio series
};

namespace detail {

inline std::vector<std::vector<int>> cluster_members(const ClusterAssignment& a) {
    std::vector<std::vector<int>> members(static_cast<std::size_t>(a.k));
    for (std::size_t i = 0; i < a.labels.size(); ++i)
        members[static_cast<std::size_t>(a.labels[i])].push_back(static_cast<int>(i));
    return members;
}

}  // namespace detail

/// Minimum-variance weights inside each cluster. Singleton clusters bypass the
/// solver with weight 1.0; empty clusters are a hard error (use bounded
/// clustering or a smaller k).
inline std::vector<WeightVector> within_cluster_weights(const ReturnMatrix& r,
                                                        const ClusterAssignment& a,
                                                        double ridge = 0.0) {
    if (a.labels.size() != static_cast<std::size_t>(r.values.cols()))
        throw Error("within_cluster_weights: assignment size does not match return columns");
    const auto members = detail::cluster_members(a);
    std::vector<WeightVector> out;
    out.reserve(members.size());
    for (int c = 0; c < a.k; ++c) {
        const auto& m = members[static_cast<std::size_t>(c)];
        if (m.empty())
            throw Error("within_cluster_weights: empty cluster " + std::to_string(c) +
                        "; use bounded clustering or fewer clusters");
        if (m.size() == 1) {
            WeightVector w;
            w.labels = {r.tickers[static_cast<std::size_t>(m[0])]};
            w.values = Eigen::VectorXd::Ones(1);
            out.push_back(std::move(w));
            continue;
        }
        const ReturnMatrix sub = select_columns(r, m);
        try {
            out.push_back(gmvp_weights(sample_covariance(sub), ridge));
        } catch (const Error& e) {
            throw Error("within_cluster_weights: cluster " + std::to_string(c) + ": " + e.what());
        }
    }
    return out;
}

/// T x k matrix whose column c is the within-cluster portfolio series of
/// cluster c. Cluster columns are named cluster_<c>.
inline ReturnMatrix cluster_return_series(const ReturnMatrix& r, const ClusterAssignment& a,
                                          const std::vector<WeightVector>& within) {
    if (within.size() != static_cast<std::size_t>(a.k))
        throw Error("cluster_return_series: weight list size does not match k");
    const auto members = detail::cluster_members(a);
    ReturnMatrix out;
    out.dates = r.dates;
    out.values.resize(r.values.rows(), a.k);
    for (int c = 0; c < a.k; ++c) {
        const auto& m = members[static_cast<std::size_t>(c)];
        const auto& w = within[static_cast<std::size_t>(c)];
        if (m.size() != static_cast<std::size_t>(w.values.size()))
            throw Error("cluster_return_series: cluster " + std::to_string(c) +
                        " weights do not align with members");
        Eigen::VectorXd series = Eigen::VectorXd::Zero(r.values.rows());
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (r.tickers[static_cast<std::size_t>(m[j])] != w.labels[j])
                throw Error("cluster_return_series: cluster " + std::to_string(c) +
                            " weight labels do not align with members");
            series += w.values(static_cast<Eigen::Index>(j)) * r.values.col(m[j]);
        }
        out.values.col(c) = series;
        out.tickers.push_back("cluster_" + std::to_string(c));
    }
    return out;
}

/// The between step is plain GMVP on the cluster portfolio series.
inline WeightVector between_cluster_weights(const ReturnMatrix& cluster_r, double ridge = 0.0) {
    return gmvp_weights(sample_covariance(cluster_r), ridge);
}

/// flat[i] = between[c(i)] * within[c(i)][i].
inline WeightVector flatten(const ClusterAssignment& a, const std::vector<WeightVector>& within,
                            const WeightVector& between) {
    if (within.size() != static_cast<std::size_t>(a.k) ||
        between.values.size() != static_cast<Eigen::Index>(a.k))
        throw Error("flatten: shape mismatch between assignment, within list and between weights");
    const auto members = detail::cluster_members(a);
    WeightVector out;
    out.labels.resize(a.labels.size());
    out.values.resize(static_cast<Eigen::Index>(a.labels.size()));
    for (int c = 0; c < a.k; ++c) {
        const auto& m = members[static_cast<std::size_t>(c)];
        const auto& w = within[static_cast<std::size_t>(c)];
        if (m.size() != static_cast<std::size_t>(w.values.size()))
            throw Error("flatten: cluster " + std::to_string(c) + " weights do not align with members");
        for (std::size_t j = 0; j < m.size(); ++j) {
            out.labels[static_cast<std::size_t>(m[j])] = w.labels[j];
            out.values(m[j]) = between.values(c) * w.values(static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

/// Full two-stage pipeline over one estimation window.
inline TwoStageResult two_stage_weights(const ReturnMatrix& r, const ClusterAssignment& a,
                                        double ridge = 0.0) {
    TwoStageResult res;
    res.within_weights = within_cluster_weights(r, a, ridge);
    res.cluster_returns = cluster_return_series(r, a, res.within_weights);
    res.between_weights = between_cluster_weights(res.cluster_returns, ridge);
    res.flat_weights = flatten(a, res.within_weights, res.between_weights);
    return res;
}

/// Pearson correlation of the within-cluster portfolio series.
inline Eigen::MatrixXd cluster_correlation(const ReturnMatrix& cluster_r) {
    const Eigen::Index t = cluster_r.values.rows();
    const Eigen::Index k = cluster_r.values.cols();
    if (t < 2) throw ConfigError("cluster_correlation: need at least 2 rows");
    const Eigen::MatrixXd centered = cluster_r.values.rowwise() - cluster_r.values.colwise().mean();
    const Eigen::VectorXd norms = centered.colwise().norm();
    for (Eigen::Index c = 0; c < k; ++c)
        if (norms(c) <= 0.0)
            throw Error("cluster_correlation: constant series for cluster " + std::to_string(c));
    Eigen::MatrixXd corr = (centered.transpose() * centered).array() /
                           (norms * norms.transpose()).array();
    corr = corr.cwiseMin(1.0).cwiseMax(-1.0);
    corr.diagonal().setOnes();
    return corr;
}

/// Arithmetic mean of the strictly-upper-triangle entries.
inline double mean_offdiag_correlation(const Eigen::MatrixXd& corr) {
    const Eigen::Index k = corr.rows();
    if (k < 2) throw ConfigError("mean_offdiag_correlation: need at least 2 clusters");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = i + 1; j < k; ++j) sum += corr(i, j);
    return sum / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
}

}  // namespace cgmvp
