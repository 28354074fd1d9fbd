#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cgmvp/errors.hpp"

namespace cgmvp {

// Annualization uses sqrt(252) throughout: daily observations, 252 trading
// days per year.
inline constexpr double kTradingDaysPerYear = 252.0;

struct MetricsReport {
    double ann_std = 0.0;
    double ann_downside_std = 0.0;
    double sharpe = 0.0;
    double sortino = 0.0;
    double max_drawdown = 0.0;  // non-positive fraction
    double cvar_95 = 0.0;       // signed daily return; losses are negative
};

namespace detail {

inline double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_std(const std::vector<double>& xs) {
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Semideviation about the target over ALL n observations, daily units.
inline double daily_downside_dev(const std::vector<double>& daily, double target) {
    double ss = 0.0;
    for (double r : daily) {
        const double d = std::min(r - target, 0.0);
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(daily.size()));
}

}  // namespace detail

/// Sample standard deviation (divisor n-1) scaled by sqrt(252).
inline double annualized_std(const std::vector<double>& daily) {
    if (daily.size() < 2) throw ConfigError("annualized_std: need at least 2 observations");
    return detail::sample_std(daily) * std::sqrt(kTradingDaysPerYear);
}

/// Annualized semideviation about `target` (mean of squared shortfalls over all n).
inline double downside_std(const std::vector<double>& daily, double target) {
    if (daily.size() < 2) throw ConfigError("downside_std: need at least 2 observations");
    return detail::daily_downside_dev(daily, target) * std::sqrt(kTradingDaysPerYear);
}

/// (mean - benchmark) / sample std, scaled by sqrt(252). A numerically zero
/// std (constant series up to rounding) is an error.
inline double sharpe(const std::vector<double>& daily, double benchmark_daily) {
    if (daily.size() < 2) throw ConfigError("sharpe: need at least 2 observations");
    const double m = detail::mean(daily);
    const double sd = detail::sample_std(daily);
    if (sd <= 1e-14 * (1.0 + std::abs(m))) throw Error("sharpe: zero standard deviation");
    return (m - benchmark_daily) / sd * std::sqrt(kTradingDaysPerYear);
}

/// (mean - target) / daily downside deviation, scaled by sqrt(252).
inline double sortino(const std::vector<double>& daily, double target_daily) {
    if (daily.size() < 2) throw ConfigError("sortino: need at least 2 observations");
    const double m = detail::mean(daily);
    const double dd = detail::daily_downside_dev(daily, target_daily);
    if (dd <= 1e-14 * (1.0 + std::abs(m))) throw Error("sortino: zero downside deviation");
    return (m - target_daily) / dd * std::sqrt(kTradingDaysPerYear);
}

/// Worst decline from a running peak of the wealth series: min(w_t / peak_t - 1).
inline double max_drawdown(const std::vector<double>& wealth) {
    if (wealth.empty()) throw ConfigError("max_drawdown: empty wealth series");
    double peak = -1.0;
    double worst = 0.0;
    for (double w : wealth) {
        if (!(w > 0.0)) throw ConfigError("max_drawdown: non-positive wealth value");
        peak = std::max(peak, w);
        worst = std::min(worst, w / peak - 1.0);
    }
    return worst;
}

/// Mean of the ceil(n * (1 - level)) smallest returns (expected shortfall).
inline double cvar(const std::vector<double>& daily, double level = 0.95) {
    if (level <= 0.0 || level >= 1.0) throw ConfigError("cvar: level must be in (0, 1)");
    const std::size_t n = daily.size();
    // tail count: snap n*(1-level) to an adjacent integer before the ceiling so
    // binary rounding of the level cannot shift the count by one
    const double raw = static_cast<double>(n) * (1.0 - level);
    const double snapped = std::round(raw);
    const std::size_t tail = static_cast<std::size_t>(
        std::abs(raw - snapped) < 1e-9 * std::max(1.0, raw) ? snapped : std::ceil(raw));
    if (n == 0 || tail == 0) throw ConfigError("cvar: series too short for level " + std::to_string(level));
    std::vector<double> sorted = daily;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(tail - 1), sorted.end());
    double s = 0.0;
    for (std::size_t i = 0; i < tail; ++i) s += sorted[i];
    return s / static_cast<double>(tail);
}

/// The full bundle over an out-of-sample return series and its wealth path.
/// Benchmark and Sortino target default to a zero daily rate.
inline MetricsReport compute_metrics(const std::vector<double>& daily,
                                     const std::vector<double>& wealth,
                                     double benchmark_daily = 0.0,
                                     double target_daily = 0.0) {
    MetricsReport rep;
    rep.ann_std = annualized_std(daily);
    rep.ann_downside_std = downside_std(daily, target_daily);
    rep.sharpe = sharpe(daily, benchmark_daily);
    rep.sortino = sortino(daily, target_daily);
    rep.max_drawdown = max_drawdown(wealth);
    rep.cvar_95 = cvar(daily, 0.95);
    return rep;
}

}  // namespace cgmvp
