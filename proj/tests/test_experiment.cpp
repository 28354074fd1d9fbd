#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgmvp/experiment.hpp"
#include "support/oracles.hpp"

using namespace cgmvp;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = CGMVP_TEST_DATA_DIR;
const std::string kConfigDir = CGMVP_TEST_CONFIG_DIR;

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig sample_config(const std::string& out_dir) {
    ExperimentConfig cfg = load_config(kConfigDir + "/sample_run.json");
    cfg.prices_path = kDataDir + "/sample_prices.csv";
    cfg.sectors_path = kDataDir + "/sample_sectors.csv";
    cfg.out_dir = (fs::temp_directory_path() / out_dir).string();
    return cfg;
}

}  // namespace

TEST_CASE("config documents round-trip through JSON", "[experiment]") {
    ExperimentConfig cfg = sample_config("cfg_roundtrip");
    cfg.strategy.algorithm = Algorithm::hierarchical;
    cfg.strategy.linkage = Linkage::average;
    cfg.strategy.max_size = 7;
    cfg.sweep_sizes = {4, 8};
    const ExperimentConfig back = config_from_json(config_to_json(cfg));
    REQUIRE(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("config validation errors", "[experiment]") {
    SECTION("unknown keys are rejected") {
        REQUIRE_THROWS_WITH(config_from_json(json::parse(R"({"pricez": "x.csv"})")),
                            Catch::Matchers::ContainsSubstring("unknown config key"));
    }
    SECTION("unknown enum values are rejected") {
        REQUIRE_THROWS_WITH(
            config_from_json(json::parse(R"({"strategy": {"algorithm": "kmedoids"}})")),
            Catch::Matchers::ContainsSubstring("kmedoids"));
    }
    SECTION("missing prices path is rejected at load time") {
        ExperimentConfig cfg;
        REQUIRE_THROWS_AS(load_dataset(cfg), ConfigError);
    }
}

TEST_CASE("split_phases places the test lookback before the split", "[experiment]") {
    ExperimentConfig cfg = sample_config("cfg_phases");
    const Dataset data = load_dataset(cfg);
    const auto phases = split_phases(data.returns, cfg);
    REQUIRE(phases.size() == 2);
    REQUIRE(phases[0].name == "validation");
    REQUIRE(phases[0].begin == 0);
    REQUIRE(phases[0].length == 100);
    REQUIRE(phases[1].name == "test");
    REQUIRE(phases[1].begin == 100 - cfg.est_len);
    REQUIRE(phases[1].begin + phases[1].length == 160);

    SECTION("split outside the data range is rejected") {
        cfg.split_date = "2050-01-01";
        REQUIRE_THROWS_WITH(split_phases(data.returns, cfg),
                            Catch::Matchers::ContainsSubstring("outside the data range"));
    }
    SECTION("no split gives a single full phase") {
        cfg.split_date.clear();
        const auto full = split_phases(data.returns, cfg);
        REQUIRE(full.size() == 1);
        REQUIRE(full[0].length == 160);
    }
}

TEST_CASE("run_experiment writes the report bundle", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_run");
    fs::remove_all(cfg.out_dir);
    const json summary = run_experiment(cfg);

    REQUIRE(summary["phases"].contains("validation"));
    REQUIRE(summary["phases"].contains("test"));
    REQUIRE(summary["phases"]["validation"]["n_rebalances"].get<int>() == 2);
    REQUIRE(summary["phases"]["test"]["n_rebalances"].get<int>() == 3);

    for (const char* name : {"summary.json", "metrics.csv", "wealth.csv", "weights.csv"})
        REQUIRE(fs::exists(fs::path(cfg.out_dir) / name));

    SECTION("emitted wealth.csv round-trips exactly") {
        std::ifstream in(fs::path(cfg.out_dir) / "wealth.csv");
        std::string line;
        std::getline(in, line);  // header
        REQUIRE(line == "phase,t,date,oos_return,wealth");
        int rows = 0;
        double prev_wealth = 1.0;
        std::string phase_prev;
        while (std::getline(in, line)) {
            const auto fields = detail::split_csv_line(line);
            REQUIRE(fields.size() == 5);
            double ret = 0.0, wealth = 0.0;
            REQUIRE(detail::parse_double(fields[3], ret));
            REQUIRE(detail::parse_double(fields[4], wealth));
            if (fields[0] != phase_prev) {
                phase_prev = fields[0];
                prev_wealth = 1.0;
            }
            // the parsed values reproduce the recurrence bit-for-bit
            REQUIRE(wealth == prev_wealth * (1.0 + ret));
            prev_wealth = wealth;
            ++rows;
        }
        REQUIRE(rows == 2 * 20 + 3 * 20);
    }

    SECTION("weights sum to one per rebalance after re-parsing") {
        std::ifstream in(fs::path(cfg.out_dir) / "weights.csv");
        std::string line;
        std::getline(in, line);
        std::map<std::string, double> sums;
        while (std::getline(in, line)) {
            const auto fields = detail::split_csv_line(line);
            double w = 0.0;
            REQUIRE(detail::parse_double(fields[3], w));
            sums[fields[0] + "#" + fields[1]] += w;
        }
        REQUIRE(sums.size() == 5);
        for (const auto& [key, total] : sums) REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("run_experiment is deterministic at the byte level", "[experiment]") {
    ExperimentConfig a = sample_config("exp_det_a");
    ExperimentConfig b = sample_config("exp_det_b");
    fs::remove_all(a.out_dir);
    fs::remove_all(b.out_dir);
    run_experiment(a);
    run_experiment(b);
    for (const char* name : {"summary.json", "metrics.csv", "wealth.csv", "weights.csv"})
        REQUIRE(slurp(fs::path(a.out_dir) / name) == slurp(fs::path(b.out_dir) / name));
}

TEST_CASE("industry strategy without a sector file is a config error", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_industry");
    cfg.sectors_path.clear();
    cfg.strategy.algorithm = Algorithm::industry;
    REQUIRE_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("infeasible bounded capacity surfaces as a config error", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_infeasible");
    cfg.strategy.max_size = 2;  // k=3, N=10 -> 6 < 10
    REQUIRE_THROWS_WITH(run_experiment(cfg), Catch::Matchers::ContainsSubstring("infeasible"));
}

TEST_CASE("grid_experiment exercises the full table shape", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_grid");
    cfg.out_dir = (fs::temp_directory_path() / "exp_grid").string();
    cfg.strategy.tsne.perplexity = 3.0;
    cfg.strategy.tsne.n_iter = 120;
    cfg.strategy.n_init = 2;
    fs::remove_all(cfg.out_dir);
    const json result = grid_experiment(cfg);

    REQUIRE(result["rows"].size() == 18 + 2);
    int selected = 0;
    for (const auto& row : result["rows"]) {
        REQUIRE(row["error"].is_null());
        if (row["selected"].get<bool>()) ++selected;
    }
    REQUIRE(selected == 1);
    REQUIRE(fs::exists(fs::path(cfg.out_dir) / "grid.csv"));
    REQUIRE(result.contains("directional_checks"));

    // the selected row attains the smallest validation std
    double best = 1e9;
    double selected_std = 0.0;
    for (const auto& row : result["rows"]) {
        const double v = row["validation_std"].get<double>();
        best = std::min(best, v);
        if (row["selected"].get<bool>()) selected_std = v;
    }
    REQUIRE(selected_std == best);
}

TEST_CASE("grid selection ignores the test period", "[experiment]") {
    // alter test-period rows only; the selected-by-validation flag must not move
    ExperimentConfig cfg = sample_config("exp_grid_iso");
    cfg.grid.algorithms = {Algorithm::kmeans, Algorithm::bounded_kmeans};
    cfg.grid.reductions = {Reduction::none};
    cfg.grid.scalings = {Scaling::raw};
    cfg.grid.include_baselines = false;
    cfg.strategy.n_init = 2;

    const PriceMatrix original = load_prices(cfg.prices_path);
    PriceMatrix tampered = original;
    for (Eigen::Index t = 110; t < tampered.values.rows(); ++t)
        tampered.values.row(t) = original.values.row(t) * (1.0 + 0.002 * static_cast<double>(t % 7));
    const std::string tampered_path = (fs::temp_directory_path() / "tampered_prices.csv").string();
    write_prices(tampered, tampered_path);

    cfg.out_dir = (fs::temp_directory_path() / "exp_grid_iso_a").string();
    fs::remove_all(cfg.out_dir);
    const json a = grid_experiment(cfg);

    ExperimentConfig cfg2 = cfg;
    cfg2.prices_path = tampered_path;
    cfg2.out_dir = (fs::temp_directory_path() / "exp_grid_iso_b").string();
    fs::remove_all(cfg2.out_dir);
    const json b = grid_experiment(cfg2);

    for (std::size_t i = 0; i < a["rows"].size(); ++i) {
        REQUIRE(a["rows"][i]["selected"] == b["rows"][i]["selected"]);
        REQUIRE(a["rows"][i]["validation_std"] == b["rows"][i]["validation_std"]);
    }
}

TEST_CASE("grid records per-cell failures and continues", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_grid_fail");
    cfg.grid.algorithms = {Algorithm::bounded_kmeans, Algorithm::kmeans};
    cfg.grid.reductions = {Reduction::none};
    cfg.grid.scalings = {Scaling::raw};
    cfg.grid.include_baselines = false;
    cfg.strategy.max_size = 2;  // infeasible for bounded only
    cfg.out_dir = (fs::temp_directory_path() / "exp_grid_fail").string();
    fs::remove_all(cfg.out_dir);
    const json result = grid_experiment(cfg);
    REQUIRE(result["rows"].size() == 2);
    REQUIRE(!result["rows"][0]["error"].is_null());   // bounded cell failed
    REQUIRE(result["rows"][1]["error"].is_null());    // kmeans cell fine
    REQUIRE(result["rows"][1]["selected"].get<bool>());
}

TEST_CASE("sweep_experiment writes aligned curves and dedups sizes", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_sweep");
    cfg.sweep_sizes = {4, 5, 5, 10};
    cfg.out_dir = (fs::temp_directory_path() / "exp_sweep").string();
    fs::remove_all(cfg.out_dir);
    const json result = sweep_experiment(cfg);
    REQUIRE(result["points"].size() == 3);  // duplicate dropped
    REQUIRE(result["phase"] == "validation");

    const std::string csv = slurp(fs::path(cfg.out_dir) / "sweep.csv");
    REQUIRE(csv.rfind("max_size,oos_ann_std,estimation_error_pct,mean_cluster_correlation,"
                      "top5_share\n", 0) == 0);

    SECTION("single unconstrained size equals the library sweep") {
        cfg.sweep_sizes = {10};
        cfg.split_date.clear();
        const Dataset data = load_dataset(cfg);
        const auto direct = sweep_max_size(data.returns, cfg.strategy, {10},
                                           data.sectors ? &*data.sectors : nullptr,
                                           cfg.est_len, cfg.hold_len);
        cfg.out_dir = (fs::temp_directory_path() / "exp_sweep_one").string();
        const json one = sweep_experiment(cfg);
        REQUIRE(one["points"][0]["oos_ann_std"].get<double>() == direct[0].oos_ann_std);
    }
}

TEST_CASE("diagnose_experiment emits cluster diagnostics", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_diag");
    cfg.out_dir = (fs::temp_directory_path() / "exp_diag").string();
    fs::remove_all(cfg.out_dir);
    const json result = diagnose_experiment(cfg);
    REQUIRE(result["windows"].size() == 2);  // validation phase

    const std::string clusters = slurp(fs::path(cfg.out_dir) / "clusters.csv");
    REQUIRE(clusters.rfind("window_index,ticker,label\n", 0) == 0);
    // 2 windows x 10 tickers + header
    REQUIRE(std::count(clusters.begin(), clusters.end(), '\n') == 21);

    const std::string corr = slurp(fs::path(cfg.out_dir) / "correlation.csv");
    REQUIRE(std::count(corr.begin(), corr.end(), '\n') == 4);  // header + 3 rows

    SECTION("all-singleton clustering gives shares of 1/N") {
        cfg.strategy.algorithm = Algorithm::kmeans;
        cfg.strategy.k = 10;
        cfg.out_dir = (fs::temp_directory_path() / "exp_diag_singleton").string();
        fs::remove_all(cfg.out_dir);
        diagnose_experiment(cfg);
        std::ifstream in(fs::path(cfg.out_dir) / "shares.csv");
        std::string header, line;
        std::getline(in, header);
        std::getline(in, line);
        const auto fields = detail::split_csv_line(line);
        REQUIRE(fields.size() == 2 + 10);
        for (std::size_t j = 2; j < fields.size(); ++j) {
            double share = 0.0;
            REQUIRE(detail::parse_double(fields[j], share));
            REQUIRE_THAT(share, Catch::Matchers::WithinRel(0.1, 1e-12));
        }
    }
    SECTION("k=1 writes the 1x1 correlation table") {
        cfg.strategy.algorithm = Algorithm::kmeans;
        cfg.strategy.k = 1;
        cfg.out_dir = (fs::temp_directory_path() / "exp_diag_k1").string();
        fs::remove_all(cfg.out_dir);
        diagnose_experiment(cfg);
        const std::string one = slurp(fs::path(cfg.out_dir) / "correlation.csv");
        REQUIRE(one == "cluster_0\n1\n");
    }
}

TEST_CASE("grid expands optional tsne hyper-parameter axes", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_grid_tsne");
    cfg.grid.algorithms = {Algorithm::kmeans};
    cfg.grid.reductions = {Reduction::none, Reduction::tsne};
    cfg.grid.scalings = {Scaling::raw};
    cfg.grid.include_baselines = false;
    cfg.grid.tsne_perplexities = {3.0, 4.0};
    cfg.grid.tsne_learning_rates = {50.0, 100.0};
    cfg.strategy.tsne.n_iter = 60;
    cfg.strategy.n_init = 2;
    cfg.out_dir = (fs::temp_directory_path() / "exp_grid_tsne").string();
    fs::remove_all(cfg.out_dir);
    const json result = grid_experiment(cfg);
    // 1 plain cell + 2x2 tsne cells
    REQUIRE(result["rows"].size() == 5);
    int with_perplexity = 0;
    for (const auto& row : result["rows"])
        if (row.contains("tsne_perplexity")) ++with_perplexity;
    REQUIRE(with_perplexity == 4);
}

TEST_CASE("work pool honors the thread cap and stays deterministic", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_threads");
    cfg.grid.algorithms = {Algorithm::kmeans, Algorithm::bounded_kmeans};
    cfg.grid.reductions = {Reduction::none, Reduction::pca};
    cfg.grid.scalings = {Scaling::raw};
    cfg.grid.include_baselines = false;
    cfg.strategy.n_init = 2;

    setenv("CLUSTER_GMVP_THREADS", "3", 1);
    cfg.out_dir = (fs::temp_directory_path() / "exp_threads_par").string();
    fs::remove_all(cfg.out_dir);
    const json parallel = grid_experiment(cfg);

    setenv("CLUSTER_GMVP_THREADS", "1", 1);
    cfg.out_dir = (fs::temp_directory_path() / "exp_threads_ser").string();
    fs::remove_all(cfg.out_dir);
    const json serial = grid_experiment(cfg);
    unsetenv("CLUSTER_GMVP_THREADS");

    REQUIRE(parallel["rows"] == serial["rows"]);
}

TEST_CASE("a one-cell grid matches the plain run", "[experiment]") {
    ExperimentConfig cfg = sample_config("exp_grid_one");
    cfg.grid.algorithms = {Algorithm::bounded_kmeans};
    cfg.grid.reductions = {Reduction::none};
    cfg.grid.scalings = {Scaling::raw};
    cfg.grid.include_baselines = false;
    cfg.out_dir = (fs::temp_directory_path() / "exp_grid_one").string();
    fs::remove_all(cfg.out_dir);
    const json grid = grid_experiment(cfg);
    REQUIRE(grid["rows"].size() == 1);

    cfg.out_dir = (fs::temp_directory_path() / "exp_grid_one_run").string();
    fs::remove_all(cfg.out_dir);
    const json run = run_experiment(cfg);

    REQUIRE(grid["rows"][0]["validation_std"].get<double>() ==
            run["phases"]["validation"]["oos_ann_std"].get<double>());
    REQUIRE(grid["rows"][0]["test_std"].get<double>() ==
            run["phases"]["test"]["oos_ann_std"].get<double>());
}

TEST_CASE("CLI exit codes follow the contract", "[experiment]") {
    const std::string cli = CGMVP_CLI_PATH;
    const std::string config = kConfigDir + "/sample_run.json";
    const std::string out = (fs::temp_directory_path() / "cli_exit").string();

    auto run_cli = [&](const std::string& args) {
        const int status = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };

    SECTION("success is 0") {
        REQUIRE(run_cli("run --config " + config + " --out-dir " + out) == 0);
    }
    SECTION("infeasible capacity is 2") {
        REQUIRE(run_cli("run --config " + config + " --max-size 2 --out-dir " + out) == 2);
    }
    SECTION("missing config file is 2") {
        REQUIRE(run_cli("run --config /nonexistent.json --out-dir " + out) == 2);
    }
    SECTION("industry without a sector file is 2") {
        json doc = config_to_json(load_config(config));
        doc["sectors"] = nullptr;
        doc["strategy"]["algorithm"] = "industry";
        const auto path = fs::temp_directory_path() / "cli_industry.json";
        std::ofstream(path) << doc.dump();
        REQUIRE(run_cli("run --config " + path.string() + " --out-dir " + out) == 2);
    }
}
