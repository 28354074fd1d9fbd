#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgmvp/errors.hpp"
#include "cgmvp/market_data.hpp"
#include "cgmvp/preprocess.hpp"

namespace cgmvp {

enum class Linkage { ward, complete, average, single };

struct ClusteringConfig {
    int k = 1;
    std::uint64_t seed = 0;
    int n_init = 10;
    int max_iter = 300;
    double tol = 1e-6;               // centroid-shift stopping threshold
    std::optional<int> max_size;     // bounded variant only
    Linkage linkage = Linkage::ward;
};

struct ClusterAssignment {
    std::vector<int> labels;  // per stock, in 0..k-1
    int k = 0;
    std::vector<int> sizes;   // per cluster, sums to N
};

/// Optional instrumentation for the Lloyd loop (restart selection, WCSS path).
struct KmeansDiagnostics {
    std::vector<double> wcss_history;  // of the selected restart
    double best_wcss = 0.0;
    int best_restart = 0;
    int iterations = 0;
};

inline double wcss(const FeatureMatrix& x, const std::vector<int>& labels, int k) {
    const Eigen::Index n = x.values.rows();
    const Eigen::Index d = x.values.cols();
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        centroids.row(labels[static_cast<std::size_t>(i)]) += x.values.row(i);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0)
            centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        total += (x.values.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    return total;
}

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// k-means++ seeding. If all remaining squared distances are zero the lowest
// unchosen index is taken, keeping the draw sequence deterministic.
inline Eigen::MatrixXd kmeanspp_centroids(const Eigen::MatrixXd& x, int k, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> chosen;
    chosen.reserve(static_cast<std::size_t>(k));
    chosen.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));

    Eigen::VectorXd dist2 = (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    taken[static_cast<std::size_t>(chosen[0])] = 1;

    while (static_cast<int>(chosen.size()) < k) {
        const double total = dist2.sum();
        Eigen::Index next = -1;
        if (total > 0.0) {
            const double u = uniform01(rng) * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += dist2(i);
                if (acc >= u && dist2(i) > 0.0) {
                    next = i;
                    break;
                }
            }
            if (next < 0) {  //u landed past accumulated mass (fp); last positive cell
                for (Eigen::Index i = n - 1; i >= 0; --i)
                    if (dist2(i) > 0.0) {
                        next = i;
                        break;
                    }
            }
        }
        if (next < 0) {
            for (Eigen::Index i = 0; i < n; ++i)
                if (!taken[static_cast<std::size_t>(i)]) {
                    next = i;
                    break;
                }
        }
        taken[static_cast<std::size_t>(next)] = 1;
        chosen.push_back(next);
        dist2 = dist2.cwiseMin((x.rowwise() - x.row(next)).rowwise().squaredNorm());
    }

    Eigen::MatrixXd centroids(k, x.cols());
    for (int c = 0; c < k; ++c) centroids.row(c) = x.row(chosen[static_cast<std::size_t>(c)]);
    return centroids;
}

// One assignment pass, points in ascending index order. With a capacity each
// point takes its nearest centroid that still has room, falling back to the
// next nearest; without one this reduces to a plain nearest-centroid argmin.
// Distance ties always resolve to the lowest centroid index.
inline std::vector<int> assign_points(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centroids,
                                      int capacity) {
    const Eigen::Index n = x.rows();
    const int k = static_cast<int>(centroids.rows());
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    std::vector<std::pair<double, int>> by_distance(static_cast<std::size_t>(k));

    for (Eigen::Index i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c)
            by_distance[static_cast<std::size_t>(c)] = {(x.row(i) - centroids.row(c)).squaredNorm(), c};
        std::sort(by_distance.begin(), by_distance.end());
        int picked = -1;
        for (const auto& [d2, c] : by_distance) {
            if (counts[static_cast<std::size_t>(c)] < capacity) {
                picked = c;
                break;
            }
        }
        if (picked < 0) throw Error("clustering: assignment infeasible (all clusters full)");
        labels[static_cast<std::size_t>(i)] = picked;
        ++counts[static_cast<std::size_t>(picked)];
    }
    return labels;
}

struct LloydOutcome {
    std::vector<int> labels;
    Eigen::MatrixXd centroids;
    double wcss = 0.0;
    int iterations = 0;
    std::vector<double> wcss_history;
};

// Lloyd loop from explicit initial centroids. Empty clusters keep their
// previous centroid. capacity <= 0 means unconstrained.
inline LloydOutcome lloyd_from(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids,
                               int max_iter, double tol, int capacity) {
    const Eigen::Index n = x.rows();
    const int k = static_cast<int>(centroids.rows());
    const int cap = capacity > 0 ? capacity : static_cast<int>(n);

    LloydOutcome out;
    for (int iter = 1; iter <= std::max(1, max_iter); ++iter) {
        out.labels = assign_points(x, centroids, cap);
        Eigen::MatrixXd updated = centroids;
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(out.labels[static_cast<std::size_t>(i)]) += x.row(i);
            ++counts[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0)
                updated.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

        double j = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            j += (x.row(i) - updated.row(out.labels[static_cast<std::size_t>(i)])).squaredNorm();
        out.wcss_history.push_back(j);

        const double shift = (updated - centroids).rowwise().norm().maxCoeff();
        centroids = std::move(updated);
        out.iterations = iter;
        if (shift <= tol) break;
    }
    out.centroids = std::move(centroids);
    out.wcss = out.wcss_history.back();
    return out;
}

inline ClusterAssignment to_assignment(std::vector<int> labels, int k) {
    ClusterAssignment a;
    a.k = k;
    a.sizes.assign(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++a.sizes[static_cast<std::size_t>(l)];
    a.labels = std::move(labels);
    return a;
}

inline ClusterAssignment run_kmeans(const FeatureMatrix& x, const ClusteringConfig& cfg,
                                    int capacity, KmeansDiagnostics* diag) {
    const Eigen::Index n = x.values.rows();
    if (cfg.k < 1) throw ConfigError("kmeans: k must be at least 1");
    if (cfg.k > n) throw ConfigError("kmeans: k=" + std::to_string(cfg.k) +
                                     " exceeds N=" + std::to_string(n));
    if (cfg.n_init < 1) throw ConfigError("kmeans: n_init must be at least 1");

    LloydOutcome best;
    int best_restart = -1;
    for (int r = 0; r < cfg.n_init; ++r) {
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(r));
        Eigen::MatrixXd init = kmeanspp_centroids(x.values, cfg.k, rng);
        LloydOutcome outcome = lloyd_from(x.values, std::move(init), cfg.max_iter, cfg.tol, capacity);
        if (best_restart < 0 || outcome.wcss < best.wcss) {
            best = std::move(outcome);
            best_restart = r;
        }
    }
    if (diag) {
        diag->wcss_history = best.wcss_history;
        diag->best_wcss = best.wcss;
        diag->best_restart = best_restart;
        diag->iterations = best.iterations;
    }
    return to_assignment(std::move(best.labels), cfg.k);
}

}  // namespace detail

/// Ordinary K-means: k-means++ seeding, Lloyd iterations to convergence,
/// best of n_init restarts by WCSS. Empty clusters are permitted here and
/// rejected downstream where the two-stage step needs non-empty portfolios.
inline ClusterAssignment kmeans(const FeatureMatrix& x, const ClusteringConfig& cfg,
                                KmeansDiagnostics* diag = nullptr) {
    return detail::run_kmeans(x, cfg, 0, diag);
}

/// Size-capped K-means: the assignment pass sends each point to its nearest
/// centroid with room, else the next nearest, processing stocks in ascending
/// index order. Every iteration's sizes respect max_size.
inline ClusterAssignment bounded_kmeans(const FeatureMatrix& x, const ClusteringConfig& cfg,
                                        KmeansDiagnostics* diag = nullptr) {
    if (!cfg.max_size)
        throw ConfigError("bounded_kmeans: max_size not set");
    const long long capacity_total =
        static_cast<long long>(*cfg.max_size) * static_cast<long long>(cfg.k);
    if (*cfg.max_size < 1 || capacity_total < x.values.rows())
        throw ConfigError("infeasible: k*max_size < N (k=" + std::to_string(cfg.k) +
                          ", max_size=" + std::to_string(*cfg.max_size) +
                          ", N=" + std::to_string(x.values.rows()) + ")");
    return detail::run_kmeans(x, cfg, *cfg.max_size, diag);
}

/// Agglomerative clustering cut at exactly k clusters. Merge costs follow the
/// configured linkage via Lance-Williams updates; cost ties break toward the
/// lexicographically smallest pair of cluster representatives (smallest member
/// index). Output labels are numbered by first appearance in stock order.
inline ClusterAssignment hierarchical(const FeatureMatrix& x, const ClusteringConfig& cfg) {
    const Eigen::Index n = x.values.rows();
    if (cfg.k < 1) throw ConfigError("hierarchical: k must be at least 1");
    if (cfg.k > n)
        throw ConfigError("hierarchical: k=" + std::to_string(cfg.k) + " exceeds N=" + std::to_string(n));

    // pairwise distances; ward works on squared Euclidean
    const bool squared = cfg.linkage == Linkage::ward;
    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d2 = (x.values.row(i) - x.values.row(j)).squaredNorm();
            const double d = squared ? d2 : std::sqrt(d2);
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }

    std::vector<bool> alive(static_cast<std::size_t>(n), true);
    std::vector<int> csize(static_cast<std::size_t>(n), 1);
    std::vector<int> rep(static_cast<std::size_t>(n));       // smallest member index
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        rep[static_cast<std::size_t>(i)] = static_cast<int>(i);
        members[static_cast<std::size_t>(i)] = {static_cast<int>(i)};
    }

    const int merges = static_cast<int>(n) - cfg.k;
    for (int m = 0; m < merges; ++m) {
        double best_cost = std::numeric_limits<double>::infinity();
        int bi = -1, bj = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!alive[static_cast<std::size_t>(i)]) continue;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                if (!alive[static_cast<std::size_t>(j)]) continue;
                const double c = dist(i, j);
                const int ri = std::min(rep[static_cast<std::size_t>(i)], rep[static_cast<std::size_t>(j)]);
                const int rj = std::max(rep[static_cast<std::size_t>(i)], rep[static_cast<std::size_t>(j)]);
                const int bri = bi < 0 ? 0 : std::min(rep[static_cast<std::size_t>(bi)], rep[static_cast<std::size_t>(bj)]);
                const int brj = bi < 0 ? 0 : std::max(rep[static_cast<std::size_t>(bi)], rep[static_cast<std::size_t>(bj)]);
                if (c < best_cost ||
                    (c == best_cost && bi >= 0 && (ri < bri || (ri == bri && rj < brj)))) {
                    best_cost = c;
                    bi = static_cast<int>(i);
                    bj = static_cast<int>(j);
                }
            }
        }

        const double ni = csize[static_cast<std::size_t>(bi)];
        const double nj = csize[static_cast<std::size_t>(bj)];
        const double dij = dist(bi, bj);
        for (Eigen::Index t = 0; t < n; ++t) {
            if (!alive[static_cast<std::size_t>(t)] || t == bi || t == bj) continue;
            const double dit = dist(bi, t);
            const double djt = dist(bj, t);
            double merged = 0.0;
            switch (cfg.linkage) {
                case Linkage::single: merged = std::min(dit, djt); break;
                case Linkage::complete: merged = std::max(dit, djt); break;
                case Linkage::average: merged = (ni * dit + nj * djt) / (ni + nj); break;
                case Linkage::ward: {
                    const double nt = csize[static_cast<std::size_t>(t)];
                    merged = ((ni + nt) * dit + (nj + nt) * djt - nt * dij) / (ni + nj + nt);
                    break;
                }
            }
            dist(bi, t) = merged;
            dist(t, bi) = merged;
        }
        csize[static_cast<std::size_t>(bi)] += csize[static_cast<std::size_t>(bj)];
        rep[static_cast<std::size_t>(bi)] =
            std::min(rep[static_cast<std::size_t>(bi)], rep[static_cast<std::size_t>(bj)]);
        auto& dst = members[static_cast<std::size_t>(bi)];
        auto& src = members[static_cast<std::size_t>(bj)];
        dst.insert(dst.end(), src.begin(), src.end());
        src.clear();
        alive[static_cast<std::size_t>(bj)] = false;
    }

    // first-appearance relabeling over stock index
    std::vector<int> owner(static_cast<std::size_t>(n), -1);
    for (Eigen::Index c = 0; c < n; ++c)
        if (alive[static_cast<std::size_t>(c)])
            for (int s : members[static_cast<std::size_t>(c)]) owner[static_cast<std::size_t>(s)] = static_cast<int>(c);
    std::vector<int> relabel(static_cast<std::size_t>(n), -1);
    std::vector<int> labels(static_cast<std::size_t>(n));
    int next = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int o = owner[static_cast<std::size_t>(i)];
        if (relabel[static_cast<std::size_t>(o)] < 0) relabel[static_cast<std::size_t>(o)] = next++;
        labels[static_cast<std::size_t>(i)] = relabel[static_cast<std::size_t>(o)];
    }
    return detail::to_assignment(std::move(labels), cfg.k);
}

/// One cluster per distinct sector, labels in first-appearance order over the
/// ticker list. Map entries for tickers outside the universe are ignored.
inline ClusterAssignment partition_by_label(const SectorMap& sectors,
                                            const std::vector<std::string>& tickers) {
    std::vector<int> labels;
    labels.reserve(tickers.size());
    std::vector<std::string> seen;
    for (const auto& t : tickers) {
        auto it = sectors.entries.find(t);
        if (it == sectors.entries.end())
            throw ConfigError("partition_by_label: ticker '" + t + "' missing from sector map");
        const auto pos = std::find(seen.begin(), seen.end(), it->second);
        if (pos == seen.end()) {
            labels.push_back(static_cast<int>(seen.size()));
            seen.push_back(it->second);
        } else {
            labels.push_back(static_cast<int>(pos - seen.begin()));
        }
    }
    return detail::to_assignment(std::move(labels), static_cast<int>(seen.size()));
}

/// Cluster share fractions, sorted descending.
inline std::vector<double> cluster_shares(const ClusterAssignment& a) {
    const double n = static_cast<double>(a.labels.size());
    if (a.labels.empty()) throw ConfigError("cluster_shares: empty assignment");
    std::vector<double> shares;
    shares.reserve(a.sizes.size());
    for (int s : a.sizes) shares.push_back(static_cast<double>(s) / n);
    std::sort(shares.begin(), shares.end(), std::greater<>());
    return shares;
}

/// Combined share of the m largest clusters.
inline double top_m_share(const ClusterAssignment& a, int m) {
    if (m < 1 || m > a.k)
        throw ConfigError("top_m_share: m=" + std::to_string(m) + " out of range [1, " +
                          std::to_string(a.k) + "]");
    auto shares = cluster_shares(a);
    double total = 0.0;
    for (int i = 0; i < m; ++i) total += shares[static_cast<std::size_t>(i)];
    return total;
}

}  // namespace cgmvp
