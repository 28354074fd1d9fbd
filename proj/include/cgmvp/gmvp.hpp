#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "cgmvp/errors.hpp"
#include "cgmvp/market_data.hpp"

namespace cgmvp {

struct CovarianceMatrix {
    std::vector<std::string> tickers;
    Eigen::MatrixXd values;  // N x N, symmetric, daily return^2 units
};

struct WeightVector {
    std::vector<std::string> labels;
    Eigen::VectorXd values;  // sums to 1; short positions allowed
};

/// Diagnostics from a gmvp_weights solve: which ridge ended up being applied
/// and the eigenvalue-ratio condition number seen at that ridge.
struct GmvpSolveInfo {
    double ridge_used = 0.0;
    double condition = 0.0;
    int attempts = 1;
};

/// Unbiased sample covariance (divisor T-1), symmetric by construction.
inline CovarianceMatrix sample_covariance(const ReturnMatrix& r) {
    const Eigen::Index t = r.values.rows();
    if (t < 2) throw ConfigError("sample_covariance: need at least 2 return rows, got " + std::to_string(t));
    CovarianceMatrix out;
    out.tickers = r.tickers;
    const Eigen::MatrixXd centered = r.values.rowwise() - r.values.colwise().mean();
    Eigen::MatrixXd sigma = (centered.transpose() * centered) / static_cast<double>(t - 1);
    out.values = 0.5 * (sigma + sigma.transpose());
    return out;
}

/// Closed-form global minimum variance weights: solve (Sigma + ridge*I) w' = 1
/// and normalize by 1'w'. If the initial solve is ill-conditioned (eigenvalue
/// ratio above 1e12 or a non-positive spectrum), a trace-scaled ridge schedule
/// 1e-8..1e-4 * trace/N is tried before giving up.
inline WeightVector gmvp_weights(const CovarianceMatrix& sigma, double ridge = 0.0,
                                 GmvpSolveInfo* info = nullptr) {
    const Eigen::Index n = sigma.values.rows();
    if (n < 1 || sigma.values.cols() != n)
        throw Error("gmvp_weights: covariance matrix must be square and non-empty");

    WeightVector out;
    out.labels = sigma.tickers;
    if (n == 1) {
        out.values = Eigen::VectorXd::Ones(1);
        if (info) *info = GmvpSolveInfo{ridge, 1.0, 1};
        return out;
    }

    constexpr double kMaxCondition = 1e12;
    const double trace_scale = sigma.values.trace() / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma.values);
    if (eig.info() != Eigen::Success) throw Error("gmvp_weights: eigendecomposition failed");
    const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
    const Eigen::MatrixXd& v = eig.eigenvectors();

    std::vector<double> schedule = {ridge};
    for (double f = 1e-8; f <= 1e-4 * (1.0 + 1e-12); f *= 10.0) {
        const double candidate = f * trace_scale;
        if (candidate > ridge) schedule.push_back(candidate);
    }

    const Eigen::VectorXd ones_proj = v.transpose() * Eigen::VectorXd::Ones(n);
    int attempt = 0;
    for (double rd : schedule) {
        ++attempt;
        const double lo = lambda(0) + rd;
        const double hi = lambda(n - 1) + rd;
        if (!(lo > 0.0)) continue;
        const double condition = hi / lo;
        if (condition > kMaxCondition) continue;

        const Eigen::VectorXd raw = v * (ones_proj.array() / (lambda.array() + rd)).matrix();
        const double normalizer = raw.sum();
        if (std::abs(normalizer) < 1e-14 || !std::isfinite(normalizer)) continue;

        out.values = raw / normalizer;
        if (attempt > 1)
            std::cerr << "gmvp: near-singular covariance (N=" << n << "), applied ridge " << rd
                      << " (condition " << condition << ")\n";
        if (info) *info = GmvpSolveInfo{rd, condition, attempt};
        return out;
    }
    throw Error("gmvp_weights: singular covariance (ridge schedule exhausted)");
}

/// Daily portfolio return series under fixed weights: out_t = sum_i w_i r_ti.
inline std::vector<double> portfolio_returns(const ReturnMatrix& r, const WeightVector& w) {
    if (r.tickers != w.labels)
        throw Error("portfolio_returns: return columns and weight labels do not match");
    const Eigen::VectorXd series = r.values * w.values;
    return std::vector<double>(series.data(), series.data() + series.size());
}

}  // namespace cgmvp
