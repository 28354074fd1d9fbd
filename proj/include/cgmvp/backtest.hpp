#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cgmvp/clustering.hpp"
#include "cgmvp/errors.hpp"
#include "cgmvp/gmvp.hpp"
#include "cgmvp/market_data.hpp"
#include "cgmvp/metrics.hpp"
#include "cgmvp/preprocess.hpp"
#include "cgmvp/tsne.hpp"
#include "cgmvp/two_stage.hpp"

namespace cgmvp {

enum class Scaling { raw, standard };
enum class Reduction { none, pca, tsne };
enum class Algorithm { kmeans, bounded_kmeans, hierarchical, industry, single_stage };

// Scaling and reduction act on clustering features only; GMVP covariances are
// always estimated from raw returns. Both are ignored for industry and
// single_stage.
struct StrategyConfig {
    Algorithm algorithm = Algorithm::bounded_kmeans;
    Scaling scaling = Scaling::raw;
    Reduction reduction = Reduction::none;
    int k = 11;
    std::optional<int> max_size;
    Linkage linkage = Linkage::ward;
    int pca_components = 2;
    TsneParams tsne;
    int n_init = 10;
    int max_iter = 300;
    double tol = 1e-6;
    double ridge = 0.0;
    std::uint64_t seed = 0;
};

struct RebalanceRecord {
    int window_index = 0;
    double in_sample_std = 0.0;   // annualized, over the estimation window
    double out_sample_std = 0.0;  // annualized, over the holding window
    WeightVector flat_weights;
    std::vector<int> cluster_sizes;
    std::optional<double> mean_cluster_correlation;  // absent for single_stage and k=1
};

struct BacktestResult {
    std::vector<RebalanceRecord> records;
    std::vector<double> oos_returns;     // concatenated holding-window series
    std::vector<std::string> oos_dates;
    std::vector<double> wealth;          // cumulative product from 1.0
};

struct BacktestSummary {
    int n_rebalances = 0;
    double mean_in_sample_std = 0.0;
    double oos_ann_std = 0.0;
    double estimation_error_pct = 0.0;
    MetricsReport metrics;
};

struct SweepPoint {
    int max_size = 0;
    double oos_ann_std = 0.0;
    double estimation_error_pct = 0.0;
    double mean_cluster_correlation = 0.0;
    double top5_share = 0.0;
};

namespace detail {

// Windows re-derive their clustering seed from the strategy seed by a fixed
// offset so each rebalance is independently reproducible.
inline std::uint64_t window_seed(std::uint64_t base, int window_index) {
    return base + 1000003ull * static_cast<std::uint64_t>(window_index);
}

inline FeatureMatrix clustering_features(const ReturnMatrix& window, const StrategyConfig& cfg,
                                         std::uint64_t seed) {
    FeatureMatrix features = to_features(window);
    if (cfg.scaling == Scaling::standard) features = standard_scale(features);
    switch (cfg.reduction) {
        case Reduction::none: break;
        case Reduction::pca: features = pca(features, cfg.pca_components); break;
        case Reduction::tsne: features = tsne(features, cfg.tsne, seed); break;
    }
    return features;
}

inline ClusterAssignment cluster_window(const ReturnMatrix& window, const StrategyConfig& cfg,
                                        const SectorMap* sectors, std::uint64_t seed) {
    if (cfg.algorithm == Algorithm::industry) {
        if (!sectors) throw ConfigError("industry strategy requires a sector map");
        return partition_by_label(*sectors, window.tickers);
    }
    const FeatureMatrix features = clustering_features(window, cfg, seed);
    ClusteringConfig ccfg;
    ccfg.k = cfg.k;
    ccfg.seed = seed;
    ccfg.n_init = cfg.n_init;
    ccfg.max_iter = cfg.max_iter;
    ccfg.tol = cfg.tol;
    ccfg.max_size = cfg.max_size;
    ccfg.linkage = cfg.linkage;
    switch (cfg.algorithm) {
        case Algorithm::kmeans: return kmeans(features, ccfg);
        case Algorithm::bounded_kmeans: return bounded_kmeans(features, ccfg);
        case Algorithm::hierarchical: return hierarchical(features, ccfg);
        default: throw Error("cluster_window: unexpected algorithm");
    }
}

}  // namespace detail

/// Fit one window: cluster (unless single_stage), optimize, and return the
/// record fields that do not depend on the holding window.
inline RebalanceRecord fit_window(const ReturnMatrix& est_window, const StrategyConfig& cfg,
                                  const SectorMap* sectors, int window_index) {
    RebalanceRecord rec;
    rec.window_index = window_index;
    if (cfg.algorithm == Algorithm::single_stage) {
        rec.flat_weights = gmvp_weights(sample_covariance(est_window), cfg.ridge);
        rec.cluster_sizes = {static_cast<int>(est_window.tickers.size())};
    } else {
        const ClusterAssignment assignment = detail::cluster_window(
            est_window, cfg, sectors, detail::window_seed(cfg.seed, window_index));
        const TwoStageResult ts = two_stage_weights(est_window, assignment, cfg.ridge);
        rec.flat_weights = ts.flat_weights;
        rec.cluster_sizes = assignment.sizes;
        if (assignment.k >= 2)
            rec.mean_cluster_correlation =
                mean_offdiag_correlation(cluster_correlation(ts.cluster_returns));
    }
    rec.in_sample_std = annualized_std(portfolio_returns(est_window, rec.flat_weights));
    return rec;
}

/// Rolling rebalance: estimate on est_len rows, hold fixed weights for the
/// next hold_len rows, advance by hold_len. Partial trailing windows are
/// dropped; the record count is floor((T - est_len) / hold_len).
inline BacktestResult run_backtest(const ReturnMatrix& r, const StrategyConfig& cfg,
                                   const SectorMap* sectors = nullptr,
                                   std::size_t est_len = 252, std::size_t hold_len = 63) {
    const std::size_t t = static_cast<std::size_t>(r.values.rows());
    if (est_len < 2 || hold_len < 2)
        throw ConfigError("run_backtest: est_len and hold_len must each be at least 2");
    if (t < est_len + hold_len)
        throw ConfigError("run_backtest: need at least est_len + hold_len = " +
                          std::to_string(est_len + hold_len) + " rows, got " + std::to_string(t));

    BacktestResult result;
    int window_index = 0;
    for (std::size_t s = 0; s + est_len + hold_len <= t; s += hold_len, ++window_index) {
        try {
            const ReturnMatrix est_window = slice_window(r, s, est_len);
            RebalanceRecord rec = fit_window(est_window, cfg, sectors, window_index);

            const ReturnMatrix hold_window = slice_window(r, s + est_len, hold_len);
            const std::vector<double> oos = portfolio_returns(hold_window, rec.flat_weights);
            rec.out_sample_std = annualized_std(oos);

            result.oos_returns.insert(result.oos_returns.end(), oos.begin(), oos.end());
            result.oos_dates.insert(result.oos_dates.end(), hold_window.dates.begin(),
                                    hold_window.dates.end());
            result.records.push_back(std::move(rec));
        } catch (const ConfigError& e) {
            throw ConfigError("window " + std::to_string(window_index) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("window " + std::to_string(window_index) + ": " + e.what());
        }
    }

    result.wealth.reserve(result.oos_returns.size());
    double w = 1.0;
    for (double ret : result.oos_returns) {
        w *= 1.0 + ret;
        result.wealth.push_back(w);
    }
    return result;
}

/// 100 * (out_std - in_std) / in_std.
inline double estimation_error_pct(double in_std, double out_std) {
    if (!(in_std > 0.0)) throw ConfigError("estimation_error_pct: in-sample std must be positive");
    return 100.0 * (out_std - in_std) / in_std;
}

/// Summary over a backtest: mean of per-window in-sample stds, annualized std
/// of the concatenated out-of-sample series, their gap, and the metric bundle.
inline BacktestSummary aggregate(const BacktestResult& result) {
    if (result.records.empty()) throw ConfigError("aggregate: empty backtest result");
    BacktestSummary s;
    s.n_rebalances = static_cast<int>(result.records.size());
    double in_sum = 0.0;
    for (const auto& rec : result.records) in_sum += rec.in_sample_std;
    s.mean_in_sample_std = in_sum / static_cast<double>(result.records.size());
    s.oos_ann_std = annualized_std(result.oos_returns);
    s.estimation_error_pct = estimation_error_pct(s.mean_in_sample_std, s.oos_ann_std);
    s.metrics = compute_metrics(result.oos_returns, result.wealth);
    return s;
}

/// Mean of per-record mean cluster correlations (records without one are skipped).
inline double mean_cluster_correlation(const BacktestResult& result) {
    double sum = 0.0;
    int count = 0;
    for (const auto& rec : result.records)
        if (rec.mean_cluster_correlation) {
            sum += *rec.mean_cluster_correlation;
            ++count;
        }
    if (count == 0) throw Error("mean_cluster_correlation: no records carry a correlation");
    return sum / count;
}

/// Mean share of the (up to) 5 largest clusters across rebalances.
inline double mean_top5_share(const BacktestResult& result) {
    if (result.records.empty()) throw ConfigError("mean_top5_share: empty backtest result");
    double sum = 0.0;
    for (const auto& rec : result.records) {
        std::vector<int> sizes = rec.cluster_sizes;
        std::sort(sizes.begin(), sizes.end(), std::greater<>());
        int total = 0;
        for (int v : sizes) total += v;
        const std::size_t m = std::min<std::size_t>(5, sizes.size());
        int top = 0;
        for (std::size_t i = 0; i < m; ++i) top += sizes[i];
        sum += static_cast<double>(top) / static_cast<double>(total);
    }
    return sum / static_cast<double>(result.records.size());
}

/// Run the backtest once per max_size with a shared seed and return aligned
/// trade-off curves (risk, estimation error, cluster correlation, top-5 share).
inline std::vector<SweepPoint> sweep_max_size(const ReturnMatrix& r, const StrategyConfig& base,
                                              const std::vector<int>& sizes,
                                              const SectorMap* sectors = nullptr,
                                              std::size_t est_len = 252, std::size_t hold_len = 63) {
    const Eigen::Index n = r.values.cols();
    for (int size : sizes)
        if (size < 1 || static_cast<long long>(size) * base.k < n)
            throw ConfigError("sweep_max_size: infeasible max_size " + std::to_string(size) +
                              " (k=" + std::to_string(base.k) + ", N=" + std::to_string(n) + ")");
    std::vector<SweepPoint> points;
    points.reserve(sizes.size());
    for (int size : sizes) {
        StrategyConfig cfg = base;
        cfg.algorithm = Algorithm::bounded_kmeans;
        cfg.max_size = size;
        const BacktestResult result = run_backtest(r, cfg, sectors, est_len, hold_len);
        const BacktestSummary summary = aggregate(result);
        SweepPoint p;
        p.max_size = size;
        p.oos_ann_std = summary.oos_ann_std;
        p.estimation_error_pct = summary.estimation_error_pct;
        p.mean_cluster_correlation = mean_cluster_correlation(result);
        p.top5_share = mean_top5_share(result);
        points.push_back(p);
    }
    return points;
}

}  // namespace cgmvp
