#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cgmvp/errors.hpp"
#include "cgmvp/preprocess.hpp"

namespace cgmvp {

struct TsneParams {
    int n_components = 2;
    double perplexity = 30.0;
    double learning_rate = 200.0;
    int n_iter = 500;
};

struct TsneResult {
    FeatureMatrix embedding;
    double kl_initial = 0.0;
    double kl_final = 0.0;
    std::vector<double> kl_history;  // one entry per gradient iteration
};

namespace detail {

inline Eigen::MatrixXd pairwise_squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd sq = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = sq.replicate(1, x.rows()) + sq.transpose().replicate(x.rows(), 1)
                        - 2.0 * (x * x.transpose());
    return d.cwiseMax(0.0);
}

// Row-stochastic conditional probabilities with per-point precision found by
// bisection so the Shannon entropy (nats) hits log(perplexity) within tol.
inline Eigen::MatrixXd conditional_probabilities(const Eigen::MatrixXd& dist2,
                                                 double perplexity, double tol) {
    const Eigen::Index n = dist2.rows();
    const double target_entropy = std::log(perplexity);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);

    for (Eigen::Index i = 0; i < n; ++i) {
        double beta = 1.0;
        double beta_min = -std::numeric_limits<double>::infinity();
        double beta_max = std::numeric_limits<double>::infinity();
        Eigen::VectorXd row;
        double entropy = 0.0;
        bool converged = false;

        for (int iter = 0; iter < 200; ++iter) {
            // shifted exponentials for numerical stability
            double min_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) min_d = std::min(min_d, dist2(i, j));
            row = (-beta * (dist2.row(i).transpose().array() - min_d)).exp();
            row(i) = 0.0;
            const double sum_p = row.sum();
            if (!(sum_p > 0.0) || !std::isfinite(sum_p))
                throw Error("tsne: bandwidth search degenerate at point " + std::to_string(i));
            // H = log(sum) + beta * <d - min_d>
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) weighted += row(j) * (dist2(i, j) - min_d);
            entropy = std::log(sum_p) + beta * weighted / sum_p;
            row /= sum_p;

            const double diff = entropy - target_entropy;
            if (std::abs(diff) <= tol) {
                converged = true;
                break;
            }
            if (diff > 0.0) {
                beta_min = beta;
                beta = std::isinf(beta_max) ? beta * 2.0 : 0.5 * (beta + beta_max);
            } else {
                beta_max = beta;
                beta = std::isinf(beta_min) ? beta * 0.5 : 0.5 * (beta + beta_min);
            }
        }
        if (!converged)
            throw Error("tsne: perplexity calibration failed for point " + std::to_string(i) +
                        " (entropy " + std::to_string(entropy) + ", target " +
                        std::to_string(target_entropy) + ")");
        p.row(i) = row.transpose();
    }
    return p;
}

inline double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            if (i == j) continue;
            const double pij = std::max(p(i, j), 1e-12);
            const double qij = std::max(q(i, j), 1e-12);
            kl += pij * std::log(pij / qij);
        }
    return kl;
}

}  // namespace detail

/// Exact O(N^2) t-SNE with early exaggeration (x12 for the first quarter of
/// iterations), momentum 0.5 switching to 0.8, and per-dimension adaptive
/// gains. Deterministic given the seed. Exactly duplicated input rows are
/// rejected up front.
inline TsneResult tsne_full(const FeatureMatrix& x, const TsneParams& params, std::uint64_t seed) {
    const Eigen::Index n = x.values.rows();
    if (n < 4) throw ConfigError("tsne: need at least 4 observations");
    if (params.perplexity >= static_cast<double>(n))
        throw ConfigError("tsne: perplexity " + std::to_string(params.perplexity) +
                          " must be smaller than N=" + std::to_string(n));
    if (params.perplexity <= 1.0) throw ConfigError("tsne: perplexity must exceed 1");
    if (params.n_components < 1 || params.n_components >= n)
        throw ConfigError("tsne: n_components out of range");
    if (params.n_iter < 1) throw ConfigError("tsne: n_iter must be positive");

    // duplicate rows make conditional probabilities ill-defined; reject
    {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            for (Eigen::Index j = 0; j < x.values.cols(); ++j) {
                if (x.values(a, j) != x.values(b, j)) return x.values(a, j) < x.values(b, j);
            }
            return false;
        });
        for (std::size_t i = 1; i < order.size(); ++i) {
            if (x.values.row(order[i]) == x.values.row(order[i - 1]))
                throw ConfigError("tsne: duplicated feature rows " + std::to_string(order[i - 1]) +
                                  " and " + std::to_string(order[i]));
        }
    }

    const Eigen::MatrixXd dist2 = detail::pairwise_squared_distances(x.values);
    const Eigen::MatrixXd cond = detail::conditional_probabilities(dist2, params.perplexity, 1e-4);
    Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
    p = p.cwiseMax(1e-12);
    p.diagonal().setZero();

    const int dims = params.n_components;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1e-2);
    Eigen::MatrixXd y(n, dims);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < dims; ++j) y(i, j) = gauss(rng);

    Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, dims);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, dims);
    const int exaggeration_end = std::max(1, params.n_iter / 4);

    auto low_dim_q = [&](const Eigen::MatrixXd& pts, Eigen::MatrixXd& inv_kernel) {
        inv_kernel = (1.0 + detail::pairwise_squared_distances(pts).array()).inverse().matrix();
        inv_kernel.diagonal().setZero();
        const double z = inv_kernel.sum();
        return (inv_kernel / z).eval();
    };

    TsneResult result;
    {
        Eigen::MatrixXd inv_kernel;
        result.kl_initial = detail::kl_divergence(p, low_dim_q(y, inv_kernel));
    }
    result.kl_history.reserve(static_cast<std::size_t>(params.n_iter));

    for (int iter = 0; iter < params.n_iter; ++iter) {
        const double exaggeration = iter < exaggeration_end ? 12.0 : 1.0;
        const double momentum = iter < exaggeration_end ? 0.5 : 0.8;

        Eigen::MatrixXd inv_kernel;
        const Eigen::MatrixXd q = low_dim_q(y, inv_kernel);

        // grad_i = 4 * sum_j (ex*p_ij - q_ij) * inv_kernel_ij * (y_i - y_j)
        const Eigen::MatrixXd coeff =
            ((exaggeration * p - q).array() * inv_kernel.array()).matrix();
        const Eigen::VectorXd row_sums = coeff.rowwise().sum();
        Eigen::MatrixXd grad = 4.0 * (row_sums.asDiagonal() * y - coeff * y);

        for (Eigen::Index i = 0; i < n; ++i)
            for (int j = 0; j < dims; ++j) {
                const bool same_sign = (grad(i, j) > 0.0) == (velocity(i, j) > 0.0);
                gains(i, j) = same_sign ? std::max(gains(i, j) * 0.8, 0.01) : gains(i, j) + 0.2;
            }

        velocity = momentum * velocity - params.learning_rate * (gains.array() * grad.array()).matrix();
        y += velocity;
        y.rowwise() -= y.colwise().mean();

        const double kl = detail::kl_divergence(p, q);
        if (!std::isfinite(kl) || !y.allFinite())
            throw Error("tsne: non-finite values at iteration " + std::to_string(iter));
        result.kl_history.push_back(kl);
    }

    {
        Eigen::MatrixXd inv_kernel;
        result.kl_final = detail::kl_divergence(p, low_dim_q(y, inv_kernel));
    }
    result.embedding.row_labels = x.row_labels;
    result.embedding.values = std::move(y);
    return result;
}

inline FeatureMatrix tsne(const FeatureMatrix& x, const TsneParams& params, std::uint64_t seed) {
    return tsne_full(x, params, seed).embedding;
}

}  // namespace cgmvp
