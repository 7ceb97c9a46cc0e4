#pragma once

// Study statistics: inter-rater reliability, rank tests, proportion tests,
// multiple-comparison correction and equivalence tests, plus the CSV inputs
// and the combined report.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace crossdoc::analysis {

using Json = nlohmann::ordered_json;
using Sample = std::vector<double>;

struct Correction {
    std::string method;  // "bonferroni"
    int m = 0;
    double adjusted_p = 0;
};

struct StatReport {
    std::string test_name;
    double statistic = 0;
    double p_value = 1;
    std::optional<double> effect_size;
    std::vector<std::size_t> n_per_group;
    std::optional<Correction> correction;
    std::string method;  // how p was obtained
};

Json to_json(const StatReport& r);

// ---- reliability ----------------------------------------------------------

enum class Level { Nominal, Ordinal, Interval };

std::optional<Level> parse_level(std::string_view s);
std::string_view to_string(Level level);

// ratings[unit][rater]; nullopt is a missing rating. Units with fewer than two
// ratings are not pairable and are ignored. Zero observed disagreement gives
// 1.0 even when every rating has the same value.
double krippendorff_alpha(const std::vector<std::vector<std::optional<double>>>& ratings, Level level);

// ---- Mann-Whitney ---------------------------------------------------------

enum class PMethod { Auto, Exact, Normal };

// U counts pairs with a > b (ties count one half); r = 1 - 2U/(n*m), so a
// sample `a` that tends higher gives negative r. Two-sided p. Auto is exact
// when n*m <= 400 (permutation distribution of the midrank sum, ties
// included), otherwise the normal approximation with tie and continuity
// correction.
StatReport mann_whitney_u(const Sample& a, const Sample& b, PMethod method = PMethod::Auto);

double mann_whitney_statistic(const Sample& a, const Sample& b);

// ---- proportions ----------------------------------------------------------

using Table2x2 = std::array<std::array<double, 2>, 2>;

// Pearson chi-square, one degree of freedom, no continuity correction.
// Effect size is phi.
StatReport chi_square_proportions(const Table2x2& table);

// ---- corrections and equivalence -------------------------------------------

std::vector<double> bonferroni_adjust(const std::vector<double>& p_values, int m);

// Welch two one-sided tests of |mean(a) - mean(b)| < margin. Statistic is the
// t of the one-sided test with the larger p.
StatReport tost_equivalence(const Sample& a, const Sample& b, double margin);

// ---- study data -----------------------------------------------------------

enum class Condition { Baseline, Experimental };

struct ScoreRow {
    std::string participant;
    Condition condition = Condition::Baseline;
    int question = 0;
    std::string annotator;
    std::optional<int> score;  // 0, 1, 2; missing rows are excluded
};

struct TimeRow {
    std::string participant;
    Condition condition = Condition::Baseline;
    int question = 0;
    std::optional<double> seconds;
};

inline constexpr std::array<std::string_view, 6> kTlxDimensions{
    "mental_demand", "physical_demand", "time_pressure", "performance", "effort", "frustration"};

struct TlxRow {
    std::string participant;
    Condition condition = Condition::Baseline;
    std::array<std::optional<int>, 6> ratings;  // 1..7
};

// Minimal RFC 4180 reader: header row, quoted fields, CRLF tolerated.
std::vector<std::map<std::string, std::string>> read_csv(std::string_view text);

std::vector<ScoreRow> parse_scores(std::string_view csv);
std::vector<TimeRow> parse_times(std::string_view csv);
std::vector<TlxRow> parse_tlx(std::string_view csv);

// Response score per (participant, question): mean over annotators.
struct Response {
    std::string participant;
    Condition condition;
    int question;
    double score;
};
std::vector<Response> response_scores(const std::vector<ScoreRow>& rows);

// ---- distance groups --------------------------------------------------------

inline constexpr std::array<std::string_view, 5> kDistanceGroups{"within_caption", "2P", "3P", "4P", "very_far"};

using DistanceGroupMap = std::map<int, std::string>;  // question -> group

// Either {"groups": {"within_caption": [1, 2, 3], ...}} or
// {"question_distances": {"1": 0, ...}} in paragraphs, binned as 0 -> within
// caption, 1-2 -> 2P, 3 -> 3P, 4 -> 4P, 5+ -> very far.
DistanceGroupMap parse_distance_map(const nlohmann::json& j);
DistanceGroupMap load_distance_map(const std::filesystem::path& path);

// InvalidArgument unless every question in `questions` is mapped exactly once
// to a known group.
void check_partition(const DistanceGroupMap& map, const std::vector<int>& questions);

struct GroupResult {
    std::string group;
    std::vector<int> questions;
    StatReport report;
};

// Mann-Whitney per group (experimental vs baseline), Bonferroni over the
// groups present.
std::vector<GroupResult> distance_group_report(const std::vector<Response>& responses, const DistanceGroupMap& map,
                                               PMethod method = PMethod::Auto);

// ---- combined report ------------------------------------------------------

struct StatsInputs {
    std::vector<ScoreRow> scores;
    std::vector<TimeRow> times;
    std::vector<TlxRow> tlx;
    std::optional<DistanceGroupMap> distance_map;
    Level alpha_level = Level::Ordinal;
    double time_margin_s = 20;
    double tlx_margin = 1;
};

struct StatsOutput {
    Json report;
    std::string table;  // aligned plain text
};

StatsOutput run_stats(const StatsInputs& inputs);

}  // namespace crossdoc::analysis
