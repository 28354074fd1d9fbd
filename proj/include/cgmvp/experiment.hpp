#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cgmvp/backtest.hpp"
#include "cgmvp/errors.hpp"
#include "cgmvp/market_data.hpp"

namespace cgmvp {

using json = nlohmann::ordered_json;

struct GridAxes {
    std::vector<Algorithm> algorithms{Algorithm::kmeans, Algorithm::hierarchical,
                                      Algorithm::bounded_kmeans};
    std::vector<Reduction> reductions{Reduction::none, Reduction::pca, Reduction::tsne};
    std::vector<Scaling> scalings{Scaling::standard, Scaling::raw};
    bool include_baselines = true;
    // optional hyper-parameter axes applied to t-SNE cells only; empty means
    // "use the strategy's value"
    std::vector<double> tsne_perplexities;
    std::vector<double> tsne_learning_rates;
};

// Mirrors the JSON config document; CLI flags override file values.
struct ExperimentConfig {
    std::string prices_path;
    std::string sectors_path;  // empty = no sector file
    std::string split_date;    // empty = single "full" phase
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t est_len = 252;
    std::size_t hold_len = 63;
    int repeats = 1;
    StrategyConfig strategy;
    GridAxes grid;
    std::vector<int> sweep_sizes;
};

// ------------------------------------------------------------ enum names ---

namespace detail {

template <typename T>
inline T parse_enum(const std::string& value, const std::vector<std::pair<std::string, T>>& table,
                    const std::string& what) {
    for (const auto& [name, v] : table)
        if (name == value) return v;
    std::string allowed;
    for (const auto& [name, v] : table) allowed += (allowed.empty() ? "" : ", ") + name;
    throw ConfigError("unknown " + what + " '" + value + "' (expected one of: " + allowed + ")");
}

template <typename T>
inline std::string enum_name(T value, const std::vector<std::pair<std::string, T>>& table) {
    for (const auto& [name, v] : table)
        if (v == value) return name;
    throw Error("unnamed enum value");
}

inline const std::vector<std::pair<std::string, Algorithm>>& algorithm_names() {
    static const std::vector<std::pair<std::string, Algorithm>> table{
        {"kmeans", Algorithm::kmeans},
        {"bounded_kmeans", Algorithm::bounded_kmeans},
        {"hierarchical", Algorithm::hierarchical},
        {"industry", Algorithm::industry},
        {"single_stage", Algorithm::single_stage}};
    return table;
}

inline const std::vector<std::pair<std::string, Reduction>>& reduction_names() {
    static const std::vector<std::pair<std::string, Reduction>> table{
        {"none", Reduction::none}, {"pca", Reduction::pca}, {"tsne", Reduction::tsne}};
    return table;
}

inline const std::vector<std::pair<std::string, Scaling>>& scaling_names() {
    static const std::vector<std::pair<std::string, Scaling>> table{
        {"raw", Scaling::raw}, {"standard", Scaling::standard}};
    return table;
}

inline const std::vector<std::pair<std::string, Linkage>>& linkage_names() {
    static const std::vector<std::pair<std::string, Linkage>> table{
        {"ward", Linkage::ward}, {"complete", Linkage::complete},
        {"average", Linkage::average}, {"single", Linkage::single}};
    return table;
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                                const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown config key '" + key + "' in " + where);
    }
}

}  // namespace detail

inline std::string algorithm_name(Algorithm a) { return detail::enum_name(a, detail::algorithm_names()); }
inline std::string reduction_name(Reduction r) { return detail::enum_name(r, detail::reduction_names()); }
inline std::string scaling_name(Scaling s) { return detail::enum_name(s, detail::scaling_names()); }
inline std::string linkage_name(Linkage l) { return detail::enum_name(l, detail::linkage_names()); }

// ------------------------------------------------------- config documents ---

inline json strategy_to_json(const StrategyConfig& s) {
    json j;
    j["algorithm"] = algorithm_name(s.algorithm);
    j["scaling"] = scaling_name(s.scaling);
    j["reduction"] = reduction_name(s.reduction);
    j["k"] = s.k;
    j["max_size"] = s.max_size ? json(*s.max_size) : json(nullptr);
    j["linkage"] = linkage_name(s.linkage);
    j["pca_components"] = s.pca_components;
    j["tsne"] = {{"components", s.tsne.n_components},
                 {"perplexity", s.tsne.perplexity},
                 {"learning_rate", s.tsne.learning_rate},
                 {"iterations", s.tsne.n_iter}};
    j["n_init"] = s.n_init;
    j["max_iter"] = s.max_iter;
    j["tol"] = s.tol;
    j["ridge"] = s.ridge;
    return j;
}

inline StrategyConfig strategy_from_json(const json& j, StrategyConfig base) {
    detail::reject_unknown_keys(j, {"algorithm", "scaling", "reduction", "k", "max_size", "linkage",
                                    "pca_components", "tsne", "n_init", "max_iter", "tol", "ridge"},
                                "strategy");
    if (j.contains("algorithm"))
        base.algorithm = detail::parse_enum(j["algorithm"].get<std::string>(),
                                            detail::algorithm_names(), "algorithm");
    if (j.contains("scaling"))
        base.scaling = detail::parse_enum(j["scaling"].get<std::string>(),
                                          detail::scaling_names(), "scaling");
    if (j.contains("reduction"))
        base.reduction = detail::parse_enum(j["reduction"].get<std::string>(),
                                            detail::reduction_names(), "reduction");
    if (j.contains("k")) base.k = j["k"].get<int>();
    if (j.contains("max_size"))
        base.max_size = j["max_size"].is_null() ? std::optional<int>{} : j["max_size"].get<int>();
    if (j.contains("linkage"))
        base.linkage = detail::parse_enum(j["linkage"].get<std::string>(),
                                          detail::linkage_names(), "linkage");
    if (j.contains("pca_components")) base.pca_components = j["pca_components"].get<int>();
    if (j.contains("tsne")) {
        const json& t = j["tsne"];
        detail::reject_unknown_keys(t, {"components", "perplexity", "learning_rate", "iterations"},
                                    "strategy.tsne");
        if (t.contains("components")) base.tsne.n_components = t["components"].get<int>();
        if (t.contains("perplexity")) base.tsne.perplexity = t["perplexity"].get<double>();
        if (t.contains("learning_rate")) base.tsne.learning_rate = t["learning_rate"].get<double>();
        if (t.contains("iterations")) base.tsne.n_iter = t["iterations"].get<int>();
    }
    if (j.contains("n_init")) base.n_init = j["n_init"].get<int>();
    if (j.contains("max_iter")) base.max_iter = j["max_iter"].get<int>();
    if (j.contains("tol")) base.tol = j["tol"].get<double>();
    if (j.contains("ridge")) base.ridge = j["ridge"].get<double>();
    return base;
}

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["prices"] = c.prices_path;
    j["sectors"] = c.sectors_path.empty() ? json(nullptr) : json(c.sectors_path);
    j["split_date"] = c.split_date.empty() ? json(nullptr) : json(c.split_date);
    j["out_dir"] = c.out_dir;
    j["seed"] = c.seed;
    j["est_len"] = c.est_len;
    j["hold_len"] = c.hold_len;
    j["repeats"] = c.repeats;
    j["strategy"] = strategy_to_json(c.strategy);
    json axes;
    axes["algorithms"] = json::array();
    for (auto a : c.grid.algorithms) axes["algorithms"].push_back(algorithm_name(a));
    axes["reductions"] = json::array();
    for (auto r : c.grid.reductions) axes["reductions"].push_back(reduction_name(r));
    axes["scalings"] = json::array();
    for (auto s : c.grid.scalings) axes["scalings"].push_back(scaling_name(s));
    axes["include_baselines"] = c.grid.include_baselines;
    axes["tsne_perplexities"] = c.grid.tsne_perplexities;
    axes["tsne_learning_rates"] = c.grid.tsne_learning_rates;
    j["grid"] = axes;
    j["sweep_sizes"] = c.sweep_sizes;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::reject_unknown_keys(j, {"prices", "sectors", "split_date", "out_dir", "seed", "est_len",
                                    "hold_len", "repeats", "strategy", "grid", "sweep_sizes"},
                                "config");
    if (j.contains("prices") && !j["prices"].is_null()) c.prices_path = j["prices"].get<std::string>();
    if (j.contains("sectors") && !j["sectors"].is_null()) c.sectors_path = j["sectors"].get<std::string>();
    if (j.contains("split_date") && !j["split_date"].is_null())
        c.split_date = j["split_date"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("est_len")) c.est_len = j["est_len"].get<std::size_t>();
    if (j.contains("hold_len")) c.hold_len = j["hold_len"].get<std::size_t>();
    if (j.contains("repeats")) c.repeats = j["repeats"].get<int>();
    if (j.contains("strategy")) c.strategy = strategy_from_json(j["strategy"], c.strategy);
    if (j.contains("grid")) {
        const json& g = j["grid"];
        detail::reject_unknown_keys(g, {"algorithms", "reductions", "scalings", "include_baselines",
                                        "tsne_perplexities", "tsne_learning_rates"},
                                    "grid");
        if (g.contains("algorithms")) {
            c.grid.algorithms.clear();
            for (const auto& a : g["algorithms"])
                c.grid.algorithms.push_back(detail::parse_enum(a.get<std::string>(),
                                                               detail::algorithm_names(), "algorithm"));
        }
        if (g.contains("reductions")) {
            c.grid.reductions.clear();
            for (const auto& r : g["reductions"])
                c.grid.reductions.push_back(detail::parse_enum(r.get<std::string>(),
                                                               detail::reduction_names(), "reduction"));
        }
        if (g.contains("scalings")) {
            c.grid.scalings.clear();
            for (const auto& s : g["scalings"])
                c.grid.scalings.push_back(detail::parse_enum(s.get<std::string>(),
                                                             detail::scaling_names(), "scaling"));
        }
        if (g.contains("include_baselines")) c.grid.include_baselines = g["include_baselines"].get<bool>();
        if (g.contains("tsne_perplexities"))
            c.grid.tsne_perplexities = g["tsne_perplexities"].get<std::vector<double>>();
        if (g.contains("tsne_learning_rates"))
            c.grid.tsne_learning_rates = g["tsne_learning_rates"].get<std::vector<double>>();
    }
    if (j.contains("sweep_sizes")) {
        c.sweep_sizes.clear();
        for (const auto& s : j["sweep_sizes"]) c.sweep_sizes.push_back(s.get<int>());
    }
    return c;
}

/// Load a config document. Relative data paths (prices, sectors) resolve
/// against the config file's directory; out_dir stays relative to the working
/// directory.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative())
            p = (base / p).lexically_normal().string();
    };
    resolve(c.prices_path);
    resolve(c.sectors_path);
    return c;
}

// ------------------------------------------------------- dataset + phases ---

struct Dataset {
    ReturnMatrix returns;
    std::optional<SectorMap> sectors;
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.prices_path.empty()) throw ConfigError("config: 'prices' path is required");
    Dataset d;
    d.returns = compute_returns(load_prices(cfg.prices_path));
    if (!cfg.sectors_path.empty()) d.sectors = load_sector_map(cfg.sectors_path);
    return d;
}

struct Phase {
    std::string name;
    std::size_t begin = 0;
    std::size_t length = 0;
};

/// Validation rows end at the split date (inclusive); the test phase re-uses
/// the trailing est_len validation rows as lookback so its first holding
/// window starts right after the split.
inline std::vector<Phase> split_phases(const ReturnMatrix& r, const ExperimentConfig& cfg) {
    const std::size_t t = static_cast<std::size_t>(r.values.rows());
    if (cfg.split_date.empty()) return {{"full", 0, t}};

    std::size_t v_end = 0;
    while (v_end < t && r.dates[v_end] <= cfg.split_date) ++v_end;
    if (v_end == 0 || v_end == t)
        throw ConfigError("split_date " + cfg.split_date + " is outside the data range [" +
                          r.dates.front() + ", " + r.dates.back() + "]");
    if (v_end < cfg.est_len + cfg.hold_len)
        throw ConfigError("validation period too short: " + std::to_string(v_end) +
                          " rows before the split, need " +
                          std::to_string(cfg.est_len + cfg.hold_len));
    if (t - v_end < cfg.hold_len)
        throw ConfigError("test period too short: " + std::to_string(t - v_end) +
                          " rows after the split, need " + std::to_string(cfg.hold_len));
    return {{"validation", 0, v_end}, {"test", v_end - cfg.est_len, t - (v_end - cfg.est_len)}};
}

// -------------------------------------------------------------- work pool ---

namespace detail {

// CLUSTER_GMVP_THREADS bounds the pool explicitly; without it the pool follows
// the hardware concurrency.
inline std::size_t pool_size(std::size_t tasks) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("CLUSTER_GMVP_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) cap = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(cap, tasks));
}

// Index-ordered parallel map; exceptions are re-thrown for the lowest index so
// parallel execution never changes the observed outcome.
template <typename F>
inline void parallel_for(std::size_t n, F&& f) {
    if (n == 0) return;
    const std::size_t workers = pool_size(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ----------------------------------------------------------- file writers ---

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
    const auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    return out;
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

inline json summary_of_phase(const BacktestResult& result) {
    const BacktestSummary s = aggregate(result);
    json j;
    j["n_rebalances"] = s.n_rebalances;
    j["mean_in_sample_std"] = s.mean_in_sample_std;
    j["oos_ann_std"] = s.oos_ann_std;
    j["estimation_error_pct"] = s.estimation_error_pct;
    j["metrics"] = {{"ann_std", s.metrics.ann_std},
                    {"ann_downside_std", s.metrics.ann_downside_std},
                    {"sharpe", s.metrics.sharpe},
                    {"sortino", s.metrics.sortino},
                    {"max_drawdown", s.metrics.max_drawdown},
                    {"cvar_95", s.metrics.cvar_95}};
    bool has_corr = false;
    for (const auto& rec : result.records) has_corr |= rec.mean_cluster_correlation.has_value();
    if (has_corr) j["mean_cluster_correlation"] = mean_cluster_correlation(result);
    j["mean_top5_share"] = mean_top5_share(result);
    return j;
}

// ------------------------------------------------------------ run command ---

/// Execute the configured strategy over each phase and write summary.json,
/// metrics.csv, wealth.csv and weights.csv into the output directory.
/// With repeats > 1 the strategy re-runs under shifted seeds and the summary
/// gains per-phase mean/std of the headline statistics.
inline json run_experiment(const ExperimentConfig& cfg) {
    const Dataset data = load_dataset(cfg);
    const SectorMap* sectors = data.sectors ? &*data.sectors : nullptr;
    const auto phases = split_phases(data.returns, cfg);
    if (cfg.repeats < 1) throw ConfigError("repeats must be at least 1");

    detail::ensure_dir(cfg.out_dir);
    json summary;
    summary["command"] = "run";
    summary["seed"] = cfg.seed;
    summary["est_len"] = cfg.est_len;
    summary["hold_len"] = cfg.hold_len;
    summary["split_date"] = cfg.split_date.empty() ? json(nullptr) : json(cfg.split_date);
    summary["strategy"] = strategy_to_json(cfg.strategy);
    summary["phases"] = json::object();

    auto metrics_csv = detail::open_out(cfg.out_dir, "metrics.csv");
    metrics_csv << "phase,metric,value\n";
    auto wealth_csv = detail::open_out(cfg.out_dir, "wealth.csv");
    wealth_csv << "phase,t,date,oos_return,wealth\n";
    auto weights_csv = detail::open_out(cfg.out_dir, "weights.csv");
    weights_csv << "phase,window_index,ticker,weight\n";

    for (const auto& phase : phases) {
        const ReturnMatrix rows = slice_window(data.returns, phase.begin, phase.length);
        const BacktestResult result =
            run_backtest(rows, cfg.strategy, sectors, cfg.est_len, cfg.hold_len);
        json phase_summary = summary_of_phase(result);

        if (cfg.repeats > 1) {
            // fixed seed offset per repetition keeps each one reproducible
            std::vector<double> stds, errors;
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                StrategyConfig s = cfg.strategy;
                s.seed = cfg.seed + 7919ull * static_cast<std::uint64_t>(rep);
                const BacktestSummary rs =
                    aggregate(run_backtest(rows, s, sectors, cfg.est_len, cfg.hold_len));
                stds.push_back(rs.oos_ann_std);
                errors.push_back(rs.estimation_error_pct);
            }
            auto mean_std = [](const std::vector<double>& v) {
                double m = 0.0;
                for (double x : v) m += x;
                m /= static_cast<double>(v.size());
                double ss = 0.0;
                for (double x : v) ss += (x - m) * (x - m);
                return std::pair<double, double>(m, std::sqrt(ss / static_cast<double>(v.size() - 1)));
            };
            const auto [m1, s1] = mean_std(stds);
            const auto [m2, s2] = mean_std(errors);
            phase_summary["repeats"] = {{"count", cfg.repeats},
                                        {"oos_ann_std_mean", m1},
                                        {"oos_ann_std_std", s1},
                                        {"estimation_error_pct_mean", m2},
                                        {"estimation_error_pct_std", s2}};
        }
        summary["phases"][phase.name] = phase_summary;

        const json& m = phase_summary["metrics"];
        for (const auto& [key, value] : m.items())
            metrics_csv << phase.name << ',' << key << ',' << detail::fmt(value.get<double>()) << '\n';

        for (std::size_t t = 0; t < result.oos_returns.size(); ++t)
            wealth_csv << phase.name << ',' << t << ',' << result.oos_dates[t] << ','
                       << detail::fmt(result.oos_returns[t]) << ','
                       << detail::fmt(result.wealth[t]) << '\n';

        for (const auto& rec : result.records)
            for (Eigen::Index i = 0; i < rec.flat_weights.values.size(); ++i)
                weights_csv << phase.name << ',' << rec.window_index << ','
                            << rec.flat_weights.labels[static_cast<std::size_t>(i)] << ','
                            << detail::fmt(rec.flat_weights.values(i)) << '\n';
    }

    auto summary_file = detail::open_out(cfg.out_dir, "summary.json");
    summary_file << summary.dump(2) << '\n';
    return summary;
}

// ----------------------------------------------------------- grid command ---

struct GridCell {
    Algorithm algorithm;
    Reduction reduction = Reduction::none;
    Scaling scaling = Scaling::raw;
    bool is_baseline = false;
    std::optional<double> tsne_perplexity;     // t-SNE cells only
    std::optional<double> tsne_learning_rate;
};

struct GridRow {
    GridCell cell;
    std::uint64_t seed = 0;
    bool selected = false;
    std::string error;  // empty = success
    double validation_std = 0.0;
    std::optional<BacktestSummary> test;
};

inline std::vector<GridCell> grid_cells(const GridAxes& axes) {
    std::vector<GridCell> cells;
    for (Algorithm a : axes.algorithms)
        for (Reduction r : axes.reductions)
            for (Scaling s : axes.scalings) {
                if (r == Reduction::tsne &&
                    (!axes.tsne_perplexities.empty() || !axes.tsne_learning_rates.empty())) {
                    const std::vector<double> perps = axes.tsne_perplexities.empty()
                                                          ? std::vector<double>{0.0}
                                                          : axes.tsne_perplexities;
                    const std::vector<double> rates = axes.tsne_learning_rates.empty()
                                                          ? std::vector<double>{0.0}
                                                          : axes.tsne_learning_rates;
                    for (double p : perps)
                        for (double lr : rates) {
                            GridCell cell{a, r, s, false, {}, {}};
                            if (!axes.tsne_perplexities.empty()) cell.tsne_perplexity = p;
                            if (!axes.tsne_learning_rates.empty()) cell.tsne_learning_rate = lr;
                            cells.push_back(cell);
                        }
                } else {
                    cells.push_back({a, r, s, false, {}, {}});
                }
            }
    if (axes.include_baselines) {
        cells.push_back({Algorithm::single_stage, Reduction::none, Scaling::raw, true, {}, {}});
        cells.push_back({Algorithm::industry, Reduction::none, Scaling::raw, true, {}, {}});
    }
    return cells;
}

/// Grid search over the configured axes. All validation backtests complete and
/// the selected-by-validation flag is fixed before any test-period row is
/// touched. Per-cell failures land in the row's error field; other cells
/// continue. Writes grid.csv and grid.json.
inline json grid_experiment(const ExperimentConfig& cfg) {
    if (cfg.split_date.empty())
        throw ConfigError("grid requires a split_date separating validation and test");
    const Dataset data = load_dataset(cfg);
    const SectorMap* sectors = data.sectors ? &*data.sectors : nullptr;
    const auto phases = split_phases(data.returns, cfg);
    const ReturnMatrix validation = slice_window(data.returns, phases[0].begin, phases[0].length);

    const auto cells = grid_cells(cfg.grid);
    if (cells.empty()) throw ConfigError("grid: no cells configured");

    std::vector<GridRow> rows(cells.size());
    auto cell_strategy = [&](std::size_t i) {
        StrategyConfig s = cfg.strategy;
        s.algorithm = cells[i].algorithm;
        if (!cells[i].is_baseline) {
            s.reduction = cells[i].reduction;
            s.scaling = cells[i].scaling;
            if (cells[i].tsne_perplexity) s.tsne.perplexity = *cells[i].tsne_perplexity;
            if (cells[i].tsne_learning_rate) s.tsne.learning_rate = *cells[i].tsne_learning_rate;
        }
        s.seed = cfg.seed + 104729ull * static_cast<std::uint64_t>(i);
        return s;
    };

    // phase 1: validation only
    detail::parallel_for(cells.size(), [&](std::size_t i) {
        rows[i].cell = cells[i];
        const StrategyConfig s = cell_strategy(i);
        rows[i].seed = s.seed;
        try {
            const BacktestSummary summary =
                aggregate(run_backtest(validation, s, sectors, cfg.est_len, cfg.hold_len));
            rows[i].validation_std = summary.oos_ann_std;
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });

    // model selection happens strictly before the test period is read
    std::size_t best = cells.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].error.empty()) continue;
        if (best == cells.size() || rows[i].validation_std < rows[best].validation_std) best = i;
    }
    if (best < cells.size()) rows[best].selected = true;

    // phase 2: test period for every surviving cell
    const ReturnMatrix test = slice_window(data.returns, phases[1].begin, phases[1].length);
    detail::parallel_for(cells.size(), [&](std::size_t i) {
        if (!rows[i].error.empty()) return;
        try {
            rows[i].test =
                aggregate(run_backtest(test, cell_strategy(i), sectors, cfg.est_len, cfg.hold_len));
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });

    detail::ensure_dir(cfg.out_dir);
    auto csv = detail::open_out(cfg.out_dir, "grid.csv");
    csv << "algorithm,reduction,scaling,tsne_perplexity,tsne_learning_rate,k,max_size,seed,"
           "selected,validation_std,test_std,"
           "test_in_sample_std,test_estimation_error_pct,test_sharpe,test_sortino,"
           "test_downside_std,test_max_drawdown,test_cvar_95,error\n";
    json rows_json = json::array();
    for (const auto& row : rows) {
        const bool clustered = !row.cell.is_baseline;
        json r;
        r["algorithm"] = algorithm_name(row.cell.algorithm);
        r["reduction"] = clustered ? json(reduction_name(row.cell.reduction)) : json(nullptr);
        r["scaling"] = clustered ? json(scaling_name(row.cell.scaling)) : json(nullptr);
        if (row.cell.tsne_perplexity) r["tsne_perplexity"] = *row.cell.tsne_perplexity;
        if (row.cell.tsne_learning_rate) r["tsne_learning_rate"] = *row.cell.tsne_learning_rate;
        r["k"] = cfg.strategy.k;
        r["max_size"] = cfg.strategy.max_size ? json(*cfg.strategy.max_size) : json(nullptr);
        r["seed"] = row.seed;
        r["selected"] = row.selected;
        if (row.error.empty()) {
            r["validation_std"] = row.validation_std;
            r["error"] = json(nullptr);
        } else {
            r["validation_std"] = json(nullptr);
            r["error"] = row.error;
        }
        csv << algorithm_name(row.cell.algorithm) << ','
            << (clustered ? reduction_name(row.cell.reduction) : "") << ','
            << (clustered ? scaling_name(row.cell.scaling) : "") << ','
            << (row.cell.tsne_perplexity ? detail::fmt(*row.cell.tsne_perplexity) : "") << ','
            << (row.cell.tsne_learning_rate ? detail::fmt(*row.cell.tsne_learning_rate) : "") << ','
            << cfg.strategy.k << ','
            << (cfg.strategy.max_size ? std::to_string(*cfg.strategy.max_size) : "") << ','
            << row.seed << ',' << (row.selected ? 1 : 0) << ','
            << (row.error.empty() ? detail::fmt(row.validation_std) : "") << ',';
        if (row.test) {
            const BacktestSummary& t = *row.test;
            r["test_std"] = t.oos_ann_std;
            r["test_in_sample_std"] = t.mean_in_sample_std;
            r["test_estimation_error_pct"] = t.estimation_error_pct;
            r["test_metrics"] = {{"sharpe", t.metrics.sharpe},
                                 {"sortino", t.metrics.sortino},
                                 {"ann_downside_std", t.metrics.ann_downside_std},
                                 {"max_drawdown", t.metrics.max_drawdown},
                                 {"cvar_95", t.metrics.cvar_95}};
            csv << detail::fmt(t.oos_ann_std) << ',' << detail::fmt(t.mean_in_sample_std) << ','
                << detail::fmt(t.estimation_error_pct) << ',' << detail::fmt(t.metrics.sharpe) << ','
                << detail::fmt(t.metrics.sortino) << ',' << detail::fmt(t.metrics.ann_downside_std)
                << ',' << detail::fmt(t.metrics.max_drawdown) << ','
                << detail::fmt(t.metrics.cvar_95) << ',';
        } else {
            csv << ",,,,,,,,";
        }
        csv << (row.error.empty() ? "" : "\"" + row.error + "\"") << '\n';
        rows_json.push_back(std::move(r));
    }

    json out;
    out["command"] = "grid";
    out["seed"] = cfg.seed;
    out["split_date"] = cfg.split_date;
    out["rows"] = std::move(rows_json);

    // directional reference checks, reported rather than asserted: they need
    // a dataset equivalent to the published 590-name universe to be meaningful
    json checks = json::object();
    auto find_best_test = [&](Algorithm a) -> const GridRow* {
        const GridRow* found = nullptr;
        for (const auto& row : rows)
            if (row.cell.algorithm == a && row.error.empty() && row.test)
                if (!found || row.test->oos_ann_std < found->test->oos_ann_std) found = &row;
        return found;
    };
    const GridRow* bounded = find_best_test(Algorithm::bounded_kmeans);
    const GridRow* stock = find_best_test(Algorithm::single_stage);
    const GridRow* industry = find_best_test(Algorithm::industry);
    if (bounded && stock) {
        checks["bounded_test_std_below_stock_based"] =
            bounded->test->oos_ann_std < stock->test->oos_ann_std;
    }
    if (bounded && stock && industry) {
        checks["estimation_error_ordering_stock_industry_cluster"] =
            stock->test->estimation_error_pct > industry->test->estimation_error_pct &&
            industry->test->estimation_error_pct > bounded->test->estimation_error_pct;
    }
    if (!checks.empty()) out["directional_checks"] = std::move(checks);

    auto json_file = detail::open_out(cfg.out_dir, "grid.json");
    json_file << out.dump(2) << '\n';
    return out;
}

// ---------------------------------------------------------- sweep command ---

/// Bounded k-means trade-off sweep over max_size, on the validation phase when
/// a split is configured. Duplicate sizes are dropped with a warning. Writes
/// sweep.csv.
inline json sweep_experiment(const ExperimentConfig& cfg) {
    if (cfg.sweep_sizes.empty()) throw ConfigError("sweep: no sweep_sizes configured");
    const Dataset data = load_dataset(cfg);
    const SectorMap* sectors = data.sectors ? &*data.sectors : nullptr;
    const auto phases = split_phases(data.returns, cfg);
    const ReturnMatrix rows = slice_window(data.returns, phases[0].begin, phases[0].length);

    std::vector<int> sizes;
    for (int s : cfg.sweep_sizes) {
        if (std::find(sizes.begin(), sizes.end(), s) != sizes.end()) {
            std::cerr << "warning: duplicate sweep size " << s << " ignored\n";
            continue;
        }
        sizes.push_back(s);
    }
    const Eigen::Index n = rows.values.cols();
    for (int size : sizes)
        if (size < 1 || static_cast<long long>(size) * cfg.strategy.k < n)
            throw ConfigError("sweep: infeasible max_size " + std::to_string(size) + " (k=" +
                              std::to_string(cfg.strategy.k) + ", N=" + std::to_string(n) + ")");

    std::vector<SweepPoint> points(sizes.size());
    detail::parallel_for(sizes.size(), [&](std::size_t i) {
        StrategyConfig s = cfg.strategy;
        s.algorithm = Algorithm::bounded_kmeans;
        s.max_size = sizes[i];
        const BacktestResult result = run_backtest(rows, s, sectors, cfg.est_len, cfg.hold_len);
        const BacktestSummary summary = aggregate(result);
        points[i] = SweepPoint{sizes[i], summary.oos_ann_std, summary.estimation_error_pct,
                               mean_cluster_correlation(result), mean_top5_share(result)};
    });

    detail::ensure_dir(cfg.out_dir);
    auto csv = detail::open_out(cfg.out_dir, "sweep.csv");
    csv << "max_size,oos_ann_std,estimation_error_pct,mean_cluster_correlation,top5_share\n";
    json out;
    out["command"] = "sweep";
    out["phase"] = phases[0].name;
    out["points"] = json::array();
    for (const auto& p : points) {
        csv << p.max_size << ',' << detail::fmt(p.oos_ann_std) << ','
            << detail::fmt(p.estimation_error_pct) << ','
            << detail::fmt(p.mean_cluster_correlation) << ',' << detail::fmt(p.top5_share) << '\n';
        out["points"].push_back({{"max_size", p.max_size},
                                 {"oos_ann_std", p.oos_ann_std},
                                 {"estimation_error_pct", p.estimation_error_pct},
                                 {"mean_cluster_correlation", p.mean_cluster_correlation},
                                 {"top5_share", p.top5_share}});
    }
    return out;
}

// ------------------------------------------------------- diagnose command ---

/// Per-rebalance clustering diagnostics on the validation (or full) phase:
/// clusters.csv (window_index,ticker,label), correlation.csv (the first
/// window's k x k table) and shares.csv (per-window top-5 share plus the
/// descending share list).
inline json diagnose_experiment(const ExperimentConfig& cfg) {
    const Dataset data = load_dataset(cfg);
    const SectorMap* sectors = data.sectors ? &*data.sectors : nullptr;
    const auto phases = split_phases(data.returns, cfg);
    const ReturnMatrix rows = slice_window(data.returns, phases[0].begin, phases[0].length);
    const std::size_t t = static_cast<std::size_t>(rows.values.rows());
    if (t < cfg.est_len + cfg.hold_len)
        throw ConfigError("diagnose: phase too short for one rebalance window");

    detail::ensure_dir(cfg.out_dir);
    auto clusters_csv = detail::open_out(cfg.out_dir, "clusters.csv");
    clusters_csv << "window_index,ticker,label\n";
    auto shares_csv = detail::open_out(cfg.out_dir, "shares.csv");
    auto corr_csv = detail::open_out(cfg.out_dir, "correlation.csv");

    json out;
    out["command"] = "diagnose";
    out["phase"] = phases[0].name;
    out["windows"] = json::array();

    int window_index = 0;
    for (std::size_t s = 0; s + cfg.est_len + cfg.hold_len <= t; s += cfg.hold_len, ++window_index) {
        const ReturnMatrix window = slice_window(rows, s, cfg.est_len);
        ClusterAssignment assignment;
        Eigen::MatrixXd correlation;
        if (cfg.strategy.algorithm == Algorithm::single_stage) {
            assignment = detail::to_assignment(
                std::vector<int>(static_cast<std::size_t>(window.values.cols()), 0), 1);
            correlation = Eigen::MatrixXd::Ones(1, 1);
        } else {
            assignment = detail::cluster_window(window, cfg.strategy, sectors,
                                                detail::window_seed(cfg.strategy.seed, window_index));
            const auto within = within_cluster_weights(window, assignment, cfg.strategy.ridge);
            correlation = cluster_correlation(cluster_return_series(window, assignment, within));
        }

        for (std::size_t i = 0; i < assignment.labels.size(); ++i)
            clusters_csv << window_index << ',' << window.tickers[i] << ','
                         << assignment.labels[i] << '\n';

        const auto shares = cluster_shares(assignment);
        const double top5 = top_m_share(assignment, std::min(5, assignment.k));
        if (window_index == 0) {
            shares_csv << "window_index,top5_share";
            for (int c = 1; c <= assignment.k; ++c) shares_csv << ",share_" << c;
            shares_csv << '\n';
        }
        shares_csv << window_index << ',' << detail::fmt(top5);
        for (double share : shares) shares_csv << ',' << detail::fmt(share);
        shares_csv << '\n';

        if (window_index == 0) {
            for (int c = 0; c < assignment.k; ++c)
                corr_csv << (c ? "," : "") << "cluster_" << c;
            corr_csv << '\n';
            for (Eigen::Index i = 0; i < correlation.rows(); ++i) {
                for (Eigen::Index j = 0; j < correlation.cols(); ++j)
                    corr_csv << (j ? "," : "") << detail::fmt(correlation(i, j));
                corr_csv << '\n';
            }
        }
        out["windows"].push_back({{"window_index", window_index},
                                  {"k", assignment.k},
                                  {"top5_share", top5},
                                  {"mean_cluster_correlation",
                                   assignment.k >= 2 ? json(mean_offdiag_correlation(correlation))
                                                     : json(nullptr)}});
    }
    return out;
}

}  // namespace cgmvp
