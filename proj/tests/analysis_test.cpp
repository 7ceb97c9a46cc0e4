#include "crossdoc/analysis.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <tuple>

#include <fmt/format.h>

#include "crossdoc/error.hpp"
#include "test_util.hpp"

namespace crossdoc::analysis {
namespace {

using crossdoc::testing::data_path;
using crossdoc::testing::read_file;
using crossdoc::testing::read_json;

using Ratings = std::vector<std::vector<std::optional<double>>>;

ErrorCode error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::InvalidArgument;
}

const nlohmann::json& oracle() {
    static const nlohmann::json j = read_json(data_path("oracles/stats.json"));
    return j;
}

Sample sample_of(const nlohmann::json& j) {
    Sample s;
    for (const auto& v : j) s.push_back(v.get<double>());
    return s;
}

// Transposed textbook reliability data: 12 units, 4 coders.
Ratings textbook() {
    const double M = NAN;
    double coders[4][12] = {{1, 2, 3, 3, 2, 1, 4, 1, 2, M, M, M},
                            {1, 2, 3, 3, 2, 2, 4, 1, 2, 5, M, 3},
                            {M, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1, M},
                            {1, 2, 3, 3, 2, 4, 4, 1, 2, 5, 1, M}};
    Ratings r(12, std::vector<std::optional<double>>(4));
    for (int c = 0; c < 4; ++c) {
        for (int u = 0; u < 12; ++u) {
            if (!std::isnan(coders[c][u])) r[u][c] = coders[c][u];
        }
    }
    return r;
}

// Brute-force two-sided p of U over all placements of a's ranks (tie-free).
double enumerate_p(int n, int m, double u) {
    int N = n + m;
    std::vector<double> counts(n * m + 1, 0);
    std::vector<int> pick(N, 0);
    std::fill(pick.end() - n, pick.end(), 1);
    do {
        // U for a = pairs (a, b) with a ranked above b.
        int below_b = 0, stat = 0;
        for (int i = 0; i < N; ++i) {
            if (pick[i]) {
                stat += below_b;
            } else {
                ++below_b;
            }
        }
        counts[stat] += 1;
    } while (std::next_permutation(pick.begin(), pick.end()));
    double total = 0, le = 0, ge = 0;
    for (int s = 0; s <= n * m; ++s) {
        total += counts[s];
        if (s <= u) le += counts[s];
        if (s >= u) ge += counts[s];
    }
    return std::min(1.0, 2 * std::min(le, ge) / total);
}

// ---- Krippendorff ----------------------------------------------------------

TEST(Krippendorff, TextbookExample) {
    const auto& t = oracle()["textbook_alpha"];
    auto r = textbook();
    EXPECT_NEAR(krippendorff_alpha(r, Level::Nominal), t["nominal"].get<double>(), 1e-6);
    EXPECT_NEAR(krippendorff_alpha(r, Level::Ordinal), t["ordinal"].get<double>(), 1e-6);
    EXPECT_NEAR(krippendorff_alpha(r, Level::Interval), t["interval"].get<double>(), 1e-6);
    // Published values, three decimals.
    EXPECT_NEAR(krippendorff_alpha(r, Level::Nominal), 0.743, 5e-4);
    EXPECT_NEAR(krippendorff_alpha(r, Level::Ordinal), 0.815, 5e-4);
    EXPECT_NEAR(krippendorff_alpha(r, Level::Interval), 0.849, 5e-4);
}

TEST(Krippendorff, PerfectAgreementIsOne) {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        int units = 2 + static_cast<int>(rng() % 30), raters = 2 + static_cast<int>(rng() % 4);
        Ratings r(units, std::vector<std::optional<double>>(raters));
        for (auto& u : r) {
            double v = static_cast<double>(rng() % 3);
            for (auto& x : u) {
                if (rng() % 5) x = v;
            }
            u[0] = v;
            u[1] = v;
        }
        for (Level l : {Level::Nominal, Level::Ordinal, Level::Interval}) {
            EXPECT_EQ(krippendorff_alpha(r, l), 1.0);
        }
    }
}

TEST(Krippendorff, InvariantUnderRaterAndUnitPermutation) {
    auto r = textbook();
    double base = krippendorff_alpha(r, Level::Ordinal);
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = r;
        std::shuffle(p.begin(), p.end(), rng);
        std::vector<int> order{0, 1, 2, 3};
        std::shuffle(order.begin(), order.end(), rng);
        for (auto& u : p) {
            auto copy = u;
            for (int k = 0; k < 4; ++k) u[k] = copy[order[k]];
        }
        EXPECT_NEAR(krippendorff_alpha(p, Level::Ordinal), base, 1e-12);
    }
}

TEST(Krippendorff, Errors) {
    EXPECT_EQ(error_of([] { krippendorff_alpha({{1.0}, {2.0}}, Level::Nominal); }), ErrorCode::InsufficientData);
    Ratings lonely{{1.0, std::nullopt}, {std::nullopt, 2.0}};
    EXPECT_EQ(error_of([&] { krippendorff_alpha(lonely, Level::Nominal); }), ErrorCode::InsufficientData);
}

TEST(Krippendorff, SystematicDisagreementIsNegative) {
    Ratings r;
    for (int i = 0; i < 10; ++i) r.push_back({0.0, 1.0});
    EXPECT_LT(krippendorff_alpha(r, Level::Nominal), 0);
}

// ---- Mann-Whitney ----------------------------------------------------------

TEST(MannWhitney, ExactMatchesEnumerationTieFree) {
    for (int n = 1; n <= 8; ++n) {
        for (int m = 1; m <= 8; ++m) {
            // Every achievable U: a takes the top u slots relative to b.
            for (int u = 0; u <= n * m; ++u) {
                // Build samples with a given U by greedy placement.
                Sample a, b;
                int remaining = u;
                std::vector<int> above(n, 0);  // b values below each a
                for (int i = 0; i < n; ++i) {
                    above[i] = std::min(m, remaining);
                    remaining -= above[i];
                }
                for (int j = 0; j < m; ++j) b.push_back(10.0 * j);
                for (int i = 0; i < n; ++i) a.push_back(10.0 * above[i] - 5.0 + 0.01 * i);
                auto r = mann_whitney_u(a, b, PMethod::Exact);
                ASSERT_EQ(r.statistic, u) << n << "," << m;
                EXPECT_NEAR(r.p_value, enumerate_p(n, m, u), 1e-9) << n << "," << m << " U=" << u;
            }
        }
    }
}

TEST(MannWhitney, ScipyReference) {
    for (const auto& c : oracle()["mann_whitney"]) {
        Sample a = sample_of(c["a"]), b = sample_of(c["b"]);
        PMethod method = c["method"] == "exact" ? PMethod::Exact : PMethod::Normal;
        auto r = mann_whitney_u(a, b, method);
        EXPECT_DOUBLE_EQ(r.statistic, c["U"].get<double>());
        EXPECT_NEAR(r.p_value, c["p"].get<double>(), 1e-9) << c.dump();
    }
}

TEST(MannWhitney, StatisticSymmetry) {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        Sample a(1 + rng() % 12), b(1 + rng() % 12);
        for (auto& v : a) v = static_cast<double>(rng() % 6);
        for (auto& v : b) v = static_cast<double>(rng() % 6);
        double nm = static_cast<double>(a.size() * b.size());
        EXPECT_DOUBLE_EQ(mann_whitney_statistic(a, b) + mann_whitney_statistic(b, a), nm);
        auto ab = mann_whitney_u(a, b), ba = mann_whitney_u(b, a);
        EXPECT_NEAR(ab.p_value, ba.p_value, 1e-12);
        EXPECT_NEAR(*ab.effect_size, -*ba.effect_size, 1e-12);
        EXPECT_GE(ab.p_value, 0);
        EXPECT_LE(ab.p_value, 1);
    }
}

TEST(MannWhitney, EffectSizeConvention) {
    // Nine-versus-nine with U = 75 gives r = -0.852.
    Sample a, b;
    for (int i = 0; i < 9; ++i) b.push_back(i);
    // a above all of b except six pairs.
    for (int i = 0; i < 9; ++i) a.push_back(i < 6 ? 7.5 : 100 + i);
    auto r = mann_whitney_u(a, b);
    EXPECT_DOUBLE_EQ(r.statistic, 75);
    EXPECT_NEAR(*r.effect_size, -0.852, 5e-4);
}

// Normal and exact p agree to 0.02 once both groups have at least five
// observations (tie-free).
TEST(MannWhitney, NormalCloseToExactForModerateSamples) {
    double worst = 0;
    for (int n = 5; n <= 8; ++n) {
        for (int m = 5; m <= 8; ++m) {
            for (int u = 0; u <= n * m; ++u) {
                Sample a, b;
                int remaining = u;
                for (int j = 0; j < m; ++j) b.push_back(10.0 * j);
                for (int i = 0; i < n; ++i) {
                    int k = std::min(m, remaining);
                    remaining -= k;
                    a.push_back(10.0 * k - 5.0 + 0.01 * i);
                }
                double e = mann_whitney_u(a, b, PMethod::Exact).p_value;
                double z = mann_whitney_u(a, b, PMethod::Normal).p_value;
                worst = std::max(worst, std::abs(e - z));
            }
        }
    }
    EXPECT_LE(worst, 0.02);
}

TEST(MannWhitney, NormalApproximationFailsForTinySamples) {
    auto exact = mann_whitney_u({0.0}, {1.0, 2.0, 3.0}, PMethod::Exact);
    auto normal = mann_whitney_u({0.0}, {1.0, 2.0, 3.0}, PMethod::Normal);
    EXPECT_DOUBLE_EQ(exact.p_value, 0.5);
    EXPECT_GT(std::abs(exact.p_value - normal.p_value), 0.1);
}

TEST(MannWhitney, AutoSwitchesOnSize) {
    Sample small(20, 1.0), big(21, 2.0);
    EXPECT_EQ(mann_whitney_u(small, Sample(20, 2.0)).method, "exact");
    EXPECT_EQ(mann_whitney_u(small, big).method, "normal");
}

TEST(MannWhitney, AllTiedIsPOne) {
    auto r = mann_whitney_u({2, 2, 2}, {2, 2}, PMethod::Normal);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_EQ(mann_whitney_u({2, 2, 2}, {2, 2}, PMethod::Exact).p_value, 1.0);
}

TEST(MannWhitney, EmptySample) {
    EXPECT_EQ(error_of([] { mann_whitney_u({}, {1.0}); }), ErrorCode::EmptySample);
    EXPECT_EQ(error_of([] { mann_whitney_u({1.0}, {}); }), ErrorCode::EmptySample);
}

// ---- chi-square, Bonferroni, TOST ----------------------------------------------

TEST(ChiSquare, PerfectSeparation) {
    auto r = chi_square_proportions({{{10, 0}, {0, 10}}});
    EXPECT_EQ(r.statistic, 20.0);
    EXPECT_EQ(*r.effect_size, 1.0);
}

TEST(ChiSquare, ScipyReference) {
    const auto& fc = oracle()["study"]["fully_correct"];
    Table2x2 t{};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) t[i][j] = fc["table"][i][j].get<double>();
    }
    auto r = chi_square_proportions(t);
    EXPECT_NEAR(r.statistic, fc["chi2"].get<double>(), 1e-12);
    EXPECT_NEAR(r.p_value, fc["p"].get<double>(), 1e-12);
}

TEST(ChiSquare, Degenerate) {
    EXPECT_EQ(error_of([] { chi_square_proportions({{{5, 0}, {5, 0}}}); }), ErrorCode::DegenerateTable);
    EXPECT_EQ(error_of([] { chi_square_proportions({{{0, 0}, {0, 0}}}); }), ErrorCode::DegenerateTable);
    EXPECT_EQ(error_of([] { chi_square_proportions({{{-1, 2}, {3, 4}}}); }), ErrorCode::DegenerateTable);
}

TEST(Bonferroni, Basics) {
    EXPECT_EQ(bonferroni_adjust({0.3, 0.01}, 5), (std::vector<double>{1.0, 0.05}));
    EXPECT_EQ(error_of([] { bonferroni_adjust({0.1, 0.2, 0.3}, 2); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { bonferroni_adjust({1.5}, 2); }), ErrorCode::InvalidArgument);
}

// Reported pairs, compared at the precision they were printed with.
TEST(Bonferroni, ReportedPairs) {
    auto printed = [](double v, const std::string& like) {
        auto dot = like.find('.');
        return fmt::format("{:.{}f}", v, like.size() - dot - 1);
    };
    const std::vector<std::tuple<std::string, int, std::string>> pairs{
        {"0.00079", 10, "0.0079"}, {"0.00272", 10, "0.0272"}, {"0.00115", 5, "0.00575"},
        {"0.0471", 5, "0.2355"},   {"0.00079", 5, "0.00395"}};
    for (const auto& [p, m, want] : pairs) {
        EXPECT_EQ(printed(bonferroni_adjust({std::stod(p)}, m)[0], want), want) << p << " x " << m;
    }
}

TEST(Bonferroni, MonotoneAndCapped) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(1 + rng() % 10);
        for (auto& v : p) v = u(rng);
        int m = static_cast<int>(p.size() + rng() % 5);
        auto adj = bonferroni_adjust(p, m);
        for (std::size_t i = 0; i < p.size(); ++i) {
            EXPECT_GE(adj[i], p[i]);
            EXPECT_LE(adj[i], 1.0);
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (p[i] <= p[j]) EXPECT_LE(adj[i], adj[j]);
            }
        }
    }
}

TEST(Tost, StatsmodelsReference) {
    for (const auto& c : oracle()["tost"]) {
        auto r = tost_equivalence(sample_of(c["a"]), sample_of(c["b"]), c["margin"].get<double>());
        EXPECT_NEAR(r.p_value, c["p"].get<double>(), 1e-9) << c["margin"];
    }
}

TEST(Tost, WiderMarginNeverRaisesP) {
    std::mt19937 rng(21);
    std::normal_distribution<double> g(50, 10);
    for (int trial = 0; trial < 100; ++trial) {
        Sample a(3 + rng() % 20), b(3 + rng() % 20);
        for (auto& v : a) v = g(rng);
        for (auto& v : b) v = g(rng);
        double prev = 1.1;
        for (double margin : {1.0, 2.0, 5.0, 10.0, 40.0}) {
            double p = tost_equivalence(a, b, margin).p_value;
            EXPECT_LE(p, prev + 1e-12);
            prev = p;
        }
    }
}

TEST(Tost, Errors) {
    EXPECT_EQ(error_of([] { tost_equivalence({1.0}, {1.0, 2.0}, 1); }), ErrorCode::InsufficientData);
    EXPECT_EQ(error_of([] { tost_equivalence({1.0, 2.0}, {1.0, 2.0}, 0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(tost_equivalence({3, 3}, {3, 3}, 1).p_value, 0.0);
    EXPECT_EQ(tost_equivalence({3, 3}, {5, 5}, 1).p_value, 1.0);
}

// ---- inputs ---------------------------------------------------------------

TEST(Csv, QuotedFieldsAndCrlf) {
    auto rows = read_csv("a,b\r\n\"x, y\",\"he said \"\"hi\"\"\"\r\n1,\r\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0]["a"], "x, y");
    EXPECT_EQ(rows[0]["b"], "he said \"hi\"");
    EXPECT_EQ(rows[1]["b"], "");
}

TEST(Csv, Errors) {
    EXPECT_EQ(error_of([] { read_csv(""); }), ErrorCode::InsufficientData);
    EXPECT_EQ(error_of([] { read_csv("a,b\n1\n"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { read_csv("a\n\"open\n"); }), ErrorCode::InvalidArgument);
}

TEST(StudyTables, ParseRules) {
    auto scores = parse_scores(
        "participant,condition,question,annotator,score,out_of_time\n"
        "P1,baseline,1,A,2,0\nP1,baseline,1,B,1,0\nP2,experimental,1,A,NA,0\nP3,experimental,2,A,2,1\n");
    ASSERT_EQ(scores.size(), 3u);
    EXPECT_FALSE(scores[2].score);
    auto resp = response_scores(scores);
    ASSERT_EQ(resp.size(), 1u);
    EXPECT_DOUBLE_EQ(resp[0].score, 1.5);

    EXPECT_EQ(error_of([] { parse_scores("participant,condition,question,annotator,score\nP,baseline,1,A,3\n"); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_scores("participant,condition,question,annotator,score\nP,control,1,A,1\n"); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_times("participant,condition,question\nP,baseline,1\n"); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] {
                  parse_tlx("participant,condition,mental_demand,physical_demand,time_pressure,performance,effort,"
                            "frustration\nP,baseline,8,1,1,1,1,1\n");
              }),
              ErrorCode::InvalidArgument);
}

// ---- distance groups --------------------------------------------------------

TEST(DistanceMap, GroupsFormReproducesPartition) {
    auto map = load_distance_map(data_path("stats/distance_map.json"));
    std::map<std::string, std::vector<int>> by_group;
    for (const auto& [q, g] : map) by_group[g].push_back(q);
    EXPECT_EQ(by_group["within_caption"], (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(by_group["2P"], (std::vector<int>{5, 9}));
    EXPECT_EQ(by_group["3P"], (std::vector<int>{4, 8}));
    EXPECT_EQ(by_group["4P"], (std::vector<int>{6}));
    EXPECT_EQ(by_group["very_far"], (std::vector<int>{7, 10}));
}

TEST(DistanceMap, DistancesFormBinsToSamePartition) {
    EXPECT_EQ(load_distance_map(data_path("stats/question_distances.json")),
              load_distance_map(data_path("stats/distance_map.json")));
}

TEST(DistanceMap, Errors) {
    using nlohmann::json;
    EXPECT_EQ(error_of([] { parse_distance_map(json{{"groups", {{"5P", {1}}}}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_distance_map(json{{"groups", {{"2P", {1}}, {"3P", {1}}}}}); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_distance_map(json::object()); }), ErrorCode::InvalidArgument);
    DistanceGroupMap m{{1, "2P"}};
    EXPECT_EQ(error_of([&] { check_partition(m, {1, 2}); }), ErrorCode::InvalidArgument);
}

// ---- the synthetic study -----------------------------------------------------

StatsInputs study() {
    StatsInputs in;
    in.scores = parse_scores(read_file(data_path("stats/scores.csv")));
    in.times = parse_times(read_file(data_path("stats/times.csv")));
    in.tlx = parse_tlx(read_file(data_path("stats/tlx.csv")));
    in.distance_map = load_distance_map(data_path("stats/distance_map.json"));
    return in;
}

TEST(Study, MatchesOracle) {
    const auto& o = oracle()["study"];
    auto out = run_stats(study());
    const auto& r = out.report;
    for (const char* level : {"nominal", "ordinal", "interval"}) {
        EXPECT_NEAR(r["reliability"]["alpha_by_level"][level].get<double>(), o["alpha"][level].get<double>(), 1e-9);
    }
    EXPECT_DOUBLE_EQ(r["quality"]["overall"]["statistic"].get<double>(), o["quality_overall"]["U"].get<double>());
    EXPECT_NEAR(r["quality"]["overall"]["p_value"].get<double>(), o["quality_overall"]["p"].get<double>(), 1e-9);
    EXPECT_NEAR(r["quality"]["fully_correct"]["chi_square"]["statistic"].get<double>(),
                o["fully_correct"]["chi2"].get<double>(), 1e-9);
    for (int q : {6, 10}) {
        const auto& row = r["quality"]["per_question"][q - 1];
        ASSERT_EQ(row["question"], q);
        std::string key = "quality_q" + std::to_string(q);
        EXPECT_DOUBLE_EQ(row["statistic"].get<double>(), o[key]["U"].get<double>());
        EXPECT_NEAR(row["p_value"].get<double>(), o[key]["p"].get<double>(), 1e-9);
        EXPECT_EQ(row["correction"]["m"], 10);
    }
    EXPECT_NEAR(r["time"]["overall"]["p_value"].get<double>(), o["time_overall"]["p"].get<double>(), 1e-9);
    EXPECT_NEAR(r["time"]["equivalence"]["overall"]["p_value"].get<double>(), o["time_overall"]["tost_p"].get<double>(),
                1e-9);
}

TEST(Study, PlantedEffectSurvivesCorrection) {
    auto out = run_stats(study());
    for (const auto& g : out.report["quality"]["per_distance_group"]) {
        double adj = g["correction"]["adjusted_p"].get<double>();
        EXPECT_EQ(g["correction"]["m"], 5);
        if (g["group"] == "4P") {
            EXPECT_LT(adj, 0.05);
        } else {
            EXPECT_GT(adj, 0.05) << g["group"];
        }
    }
}

TEST(Study, TableIsAligned) {
    auto out = run_stats(study());
    std::istringstream lines(out.table);
    std::string header, rule, line;
    std::getline(lines, header);
    std::getline(lines, rule);
    EXPECT_EQ(rule.find_first_not_of('-'), std::string::npos);
    auto p_col = header.find(" p ");
    ASSERT_NE(p_col, std::string::npos);
    int rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        // Right-aligned p column ends at the same offset on every row.
        EXPECT_NE(line[p_col + 1], ' ') << line;
    }
    EXPECT_GT(rows, 40);
}

TEST(Study, SectionsFollowInputs) {
    StatsInputs in;
    in.tlx = parse_tlx(read_file(data_path("stats/tlx.csv")));
    auto out = run_stats(in);
    EXPECT_TRUE(out.report.contains("tlx"));
    EXPECT_FALSE(out.report.contains("quality"));
    EXPECT_EQ(out.report["tlx"]["per_dimension"].size(), 6u);
    EXPECT_EQ(error_of([] { run_stats({}); }), ErrorCode::InsufficientData);
}

}  // namespace
}  // namespace crossdoc::analysis
