#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>
#include <set>

#include "cgmvp/clustering.hpp"
#include "support/oracles.hpp"

using namespace cgmvp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// two well-separated 2-D blobs, integer-friendly offsets
FeatureMatrix two_blobs(int per_blob, std::uint64_t seed, double spread = 0.2) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, spread);
    Eigen::MatrixXd v(2 * per_blob, 2);
    for (int i = 0; i < per_blob; ++i) {
        v(i, 0) = g(rng);
        v(i, 1) = g(rng);
        v(per_blob + i, 0) = 50.0 + g(rng);
        v(per_blob + i, 1) = -30.0 + g(rng);
    }
    return oracle::feature_matrix(v);
}

ClusteringConfig base_config(int k, std::uint64_t seed = 1) {
    ClusteringConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    cfg.n_init = 5;
    return cfg;
}

}  // namespace

TEST_CASE("kmeans degenerate cases", "[clustering]") {
    SECTION("k equal to N puts each point alone") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(6, 3, 2));
        const ClusterAssignment a = kmeans(x, base_config(6));
        REQUIRE(a.k == 6);
        REQUIRE(std::set<int>(a.labels.begin(), a.labels.end()).size() == 6);
        REQUIRE_THAT(wcss(x, a.labels, a.k), WithinAbs(0.0, 1e-20));
    }
    SECTION("k=1 collects everything with total centered sum of squares") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(9, 4, 5));
        const ClusterAssignment a = kmeans(x, base_config(1));
        REQUIRE(a.sizes == std::vector<int>{9});
        const Eigen::MatrixXd centered = x.values.rowwise() - x.values.colwise().mean();
        REQUIRE_THAT(wcss(x, a.labels, 1), WithinRel(centered.squaredNorm(), 1e-12));
    }
    SECTION("k above N is rejected") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(3, 2, 1));
        REQUIRE_THROWS_AS(kmeans(x, base_config(4)), ConfigError);
    }
}

TEST_CASE("kmeans recovers two separated blobs", "[clustering]") {
    const FeatureMatrix x = two_blobs(6, 11);
    const ClusterAssignment a = kmeans(x, base_config(2, 3));
    const auto [best_wcss, best_labels] = oracle::best_two_partition(x.values);
    REQUIRE(oracle::same_partition(a.labels, best_labels));
    REQUIRE_THAT(wcss(x, a.labels, 2), WithinRel(best_wcss, 1e-10));
}

TEST_CASE("kmeans WCSS is non-increasing across Lloyd iterations", "[clustering]") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(40, 5, 500 + seed));
        ClusteringConfig cfg = base_config(5, seed);
        cfg.n_init = 1;
        cfg.tol = 0.0;
        KmeansDiagnostics diag;
        kmeans(x, cfg, &diag);
        for (std::size_t i = 1; i < diag.wcss_history.size(); ++i)
            REQUIRE(diag.wcss_history[i] <= diag.wcss_history[i - 1] + 1e-9);
    }
}

TEST_CASE("kmeans is deterministic for a fixed config", "[clustering]") {
    const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(30, 4, 8));
    const ClusterAssignment a = kmeans(x, base_config(4, 9));
    const ClusterAssignment b = kmeans(x, base_config(4, 9));
    REQUIRE(a.labels == b.labels);
}

TEST_CASE("clustering is invariant to translating every row", "[clustering]") {
    // integer features and an integer shift keep distances bit-exact
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> u(-20, 20);
    Eigen::MatrixXd v(24, 3);
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 3; ++j) v(i, j) = u(rng);
    Eigen::MatrixXd shifted = v;
    shifted.col(0).array() += 7.0;
    shifted.col(1).array() -= 13.0;
    shifted.col(2).array() += 2.0;
    const FeatureMatrix x = oracle::feature_matrix(v);
    const FeatureMatrix y = oracle::feature_matrix(shifted);

    REQUIRE(kmeans(x, base_config(4, 5)).labels == kmeans(y, base_config(4, 5)).labels);

    ClusteringConfig bounded_cfg = base_config(4, 5);
    bounded_cfg.max_size = 8;
    REQUIRE(bounded_kmeans(x, bounded_cfg).labels == bounded_kmeans(y, bounded_cfg).labels);

    for (Linkage linkage : {Linkage::ward, Linkage::complete, Linkage::average, Linkage::single}) {
        ClusteringConfig hcfg = base_config(4);
        hcfg.linkage = linkage;
        REQUIRE(hierarchical(x, hcfg).labels == hierarchical(y, hcfg).labels);
    }
}

TEST_CASE("bounded_kmeans respects capacity", "[clustering]") {
    SECTION("four identical points, k=2, max_size=2 splits evenly") {
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(4, 2);
        ClusteringConfig cfg = base_config(2);
        cfg.max_size = 2;
        const ClusterAssignment a = bounded_kmeans(oracle::feature_matrix(v), cfg);
        REQUIRE(a.sizes == std::vector<int>{2, 2});
    }
    SECTION("infeasible capacity is rejected") {
        ClusteringConfig cfg = base_config(2);
        cfg.max_size = 1;
        REQUIRE_THROWS_WITH(bounded_kmeans(oracle::feature_matrix(Eigen::MatrixXd::Zero(5, 2)), cfg),
                            Catch::Matchers::ContainsSubstring("infeasible"));
    }
    SECTION("missing max_size is rejected") {
        REQUIRE_THROWS_AS(bounded_kmeans(oracle::feature_matrix(Eigen::MatrixXd::Zero(5, 2)),
                                         base_config(2)),
                          ConfigError);
    }
    SECTION("sizes never exceed the cap on adversarial data") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const FeatureMatrix x = two_blobs(10, 600 + seed);
            ClusteringConfig cfg = base_config(4, seed);
            cfg.max_size = 6;
            const ClusterAssignment a = bounded_kmeans(x, cfg);
            for (int s : a.sizes) REQUIRE(s <= 6);
            REQUIRE(std::accumulate(a.sizes.begin(), a.sizes.end(), 0) == 20);
        }
    }
}

TEST_CASE("bounded_kmeans greedy fallback on collinear points", "[clustering]") {
    // points 0, 1, 10 on a line; centroids start at {0, 10}; cap 2.
    // enumerating capacity-feasible assignments: the point at 1 joins the
    // cluster at 0 (distance 1 < 81), sizes become [2, 1]
    Eigen::MatrixXd v(3, 1);
    v << 0.0, 1.0, 10.0;
    Eigen::MatrixXd init(2, 1);
    init << 0.0, 10.0;
    const auto outcome = detail::lloyd_from(v, init, 100, 1e-9, 2);
    REQUIRE(outcome.labels == std::vector<int>{0, 0, 1});

    // exhaustive check over all capacity-feasible label vectors
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_labels;
    for (int l0 : {0, 1})
        for (int l1 : {0, 1})
            for (int l2 : {0, 1}) {
                const std::vector<int> labels{l0, l1, l2};
                int c0 = 0;
                for (int l : labels) c0 += l == 0 ? 1 : 0;
                if (c0 > 2 || static_cast<int>(labels.size()) - c0 > 2) continue;
                const double j = wcss(oracle::feature_matrix(v), labels, 2);
                if (j < best) {
                    best = j;
                    best_labels = labels;
                }
            }
    REQUIRE(oracle::same_partition(outcome.labels, best_labels));
}

TEST_CASE("bounded_kmeans with inactive cap equals kmeans label-for-label", "[clustering]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const FeatureMatrix x =
            oracle::feature_matrix(oracle::random_matrix(25, 6, 900 + seed));
        ClusteringConfig cfg = base_config(5, seed);
        ClusteringConfig capped = cfg;
        capped.max_size = 25;
        REQUIRE(kmeans(x, cfg).labels == bounded_kmeans(x, capped).labels);
    }
}

TEST_CASE("hierarchical clustering basics", "[clustering]") {
    SECTION("k equal to N yields singletons") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(5, 2, 3));
        const ClusterAssignment a = hierarchical(x, base_config(5));
        REQUIRE(a.sizes == std::vector<int>(5, 1));
    }
    SECTION("k=1 yields one cluster of N for every linkage") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(7, 3, 4));
        for (Linkage linkage : {Linkage::ward, Linkage::complete, Linkage::average, Linkage::single}) {
            ClusteringConfig cfg = base_config(1);
            cfg.linkage = linkage;
            REQUIRE(hierarchical(x, cfg).sizes == std::vector<int>{7});
        }
    }
    SECTION("single linkage separates 1-D pairs") {
        Eigen::MatrixXd v(4, 1);
        v << 0.0, 0.1, 10.0, 10.1;
        ClusteringConfig cfg = base_config(2);
        cfg.linkage = Linkage::single;
        const ClusterAssignment a = hierarchical(oracle::feature_matrix(v), cfg);
        REQUIRE(a.labels == std::vector<int>{0, 0, 1, 1});
    }
    SECTION("ward linkage recovers equal blobs, matching the exhaustive optimum") {
        const FeatureMatrix x = two_blobs(5, 21);
        ClusteringConfig cfg = base_config(2);
        cfg.linkage = Linkage::ward;
        const ClusterAssignment a = hierarchical(x, cfg);
        const auto [ignored, best_labels] = oracle::best_two_partition(x.values);
        (void)ignored;
        REQUIRE(oracle::same_partition(a.labels, best_labels));
    }
    SECTION("k above N is rejected") {
        REQUIRE_THROWS_AS(hierarchical(oracle::feature_matrix(Eigen::MatrixXd::Zero(3, 1)),
                                       base_config(4)),
                          ConfigError);
    }
    SECTION("repeated runs are identical") {
        const FeatureMatrix x = oracle::feature_matrix(oracle::random_matrix(20, 4, 31));
        REQUIRE(hierarchical(x, base_config(4)).labels == hierarchical(x, base_config(4)).labels);
    }
}

TEST_CASE("partition_by_label groups by sector", "[clustering]") {
    SectorMap sectors;
    sectors.entries = {{"A", "Tech"}, {"B", "Energy"}, {"C", "Tech"}, {"D", "Utilities"},
                       {"E", "Energy"}, {"Z", "Unused"}};

    SECTION("labels follow first appearance") {
        const ClusterAssignment a = partition_by_label(sectors, {"A", "B", "C", "D", "E"});
        REQUIRE(a.k == 3);
        REQUIRE(a.labels == std::vector<int>{0, 1, 0, 2, 1});
        REQUIRE(a.sizes == std::vector<int>{2, 2, 1});
    }
    SECTION("extra map entries are ignored and one sector collapses to k=1") {
        const ClusterAssignment a = partition_by_label(sectors, {"A", "C"});
        REQUIRE(a.k == 1);
        REQUIRE(a.sizes == std::vector<int>{2});
    }
    SECTION("missing ticker is named in the error") {
        REQUIRE_THROWS_WITH(partition_by_label(sectors, {"A", "MISSING"}),
                            Catch::Matchers::ContainsSubstring("MISSING"));
    }
}

TEST_CASE("sector partition at the published industry mix", "[clustering]") {
    // eleven sectors over a 590-name universe with the published head counts
    const std::vector<std::pair<std::string, int>> mix{
        {"Communication", 18}, {"ConsumerDiscretionary", 73}, {"ConsumerStaples", 37},
        {"Energy", 32}, {"Financials", 92}, {"HealthCare", 68}, {"Industrials", 93},
        {"InformationTechnology", 67}, {"Materials", 30}, {"RealEstate", 49}, {"Utilities", 31}};
    SectorMap sectors;
    std::vector<std::string> tickers;
    int counter = 0;
    for (const auto& [sector, count] : mix)
        for (int i = 0; i < count; ++i) {
            const std::string t = "T" + std::to_string(counter++);
            sectors.entries[t] = sector;
            tickers.push_back(t);
        }
    REQUIRE(tickers.size() == 590);
    const ClusterAssignment a = partition_by_label(sectors, tickers);
    REQUIRE(a.k == 11);
    REQUIRE(a.sizes[4] == 92);  // Financials
    REQUIRE(a.sizes[6] == 93);  // Industrials
}

TEST_CASE("cluster_shares and top_m_share", "[clustering]") {
    auto assignment_of = [](const std::vector<int>& sizes) {
        ClusterAssignment a;
        a.k = static_cast<int>(sizes.size());
        a.sizes = sizes;
        for (int c = 0; c < a.k; ++c)
            for (int i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) a.labels.push_back(c);
        return a;
    };

    SECTION("even split") {
        const auto shares = cluster_shares(assignment_of({2, 2}));
        REQUIRE(shares == std::vector<double>{0.5, 0.5});
    }
    SECTION("single cluster") {
        REQUIRE(cluster_shares(assignment_of({10})) == std::vector<double>{1.0});
        REQUIRE(top_m_share(assignment_of({10}), 1) == 1.0);
    }
    SECTION("published unscaled share column with N=590") {
        const auto shares =
            cluster_shares(assignment_of({206, 119, 111, 46, 42, 41, 13, 9, 1, 1, 1}));
        REQUIRE_THAT(shares[0], WithinAbs(0.3492, 5e-5));
        REQUIRE_THAT(shares[1], WithinAbs(0.2017, 5e-5));
        REQUIRE_THAT(shares[2], WithinAbs(0.1881, 5e-5));
        double total = 0.0;
        for (double s : shares) total += s;
        REQUIRE_THAT(total, WithinAbs(1.0, 1e-12));
    }
    SECTION("descending order and top-m arithmetic") {
        const auto a = assignment_of({3, 5, 2});
        REQUIRE(cluster_shares(a) == std::vector<double>{0.5, 0.3, 0.2});
        REQUIRE_THAT(top_m_share(a, 2), WithinRel(0.8, 1e-12));
        REQUIRE_THAT(top_m_share(a, 3), WithinRel(1.0, 1e-12));
        REQUIRE_THROWS_AS(top_m_share(a, 0), ConfigError);
        REQUIRE_THROWS_AS(top_m_share(a, 4), ConfigError);
    }
}

TEST_CASE("one dominant dispersion day concentrates unscaled clusters", "[clustering]") {
    // day 0 moves 25 of 30 stocks together by +20% while 5 outliers scatter;
    // the other days are mild noise. Raw Euclidean features are dominated by
    // day 0, so unscaled k-means lumps the co-movers into one giant cluster;
    // standard scaling equalizes the days and spreads the clusters out.
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 0.01);
    Eigen::MatrixXd r(40, 30);
    for (int t = 0; t < 40; ++t)
        for (int i = 0; i < 30; ++i) r(t, i) = g(rng);
    const double outlier[5] = {-0.50, -0.30, 0.35, 0.50, -0.15};
    for (int i = 0; i < 30; ++i) r(0, i) = i < 25 ? 0.20 : outlier[i - 25];

    const FeatureMatrix raw = to_features(oracle::return_matrix(r));
    const FeatureMatrix scaled = standard_scale(raw);
    ClusteringConfig cfg = base_config(6, 3);
    const double top5_raw = top_m_share(kmeans(raw, cfg), 5);
    const double top5_scaled = top_m_share(kmeans(scaled, cfg), 5);
    REQUIRE(top5_raw > top5_scaled);
    REQUIRE(top5_raw > 0.9);  // 25 co-movers plus 4 outliers
}
