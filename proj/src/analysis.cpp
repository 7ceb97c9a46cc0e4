#include "crossdoc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "crossdoc/error.hpp"

namespace crossdoc::analysis {

Json to_json(const StatReport& r) {
    Json j;
    j["test"] = r.test_name;
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    j["effect_size"] = r.effect_size ? Json(*r.effect_size) : Json(nullptr);
    j["n_per_group"] = r.n_per_group;
    j["method"] = r.method;
    if (r.correction) {
        j["correction"] = {{"method", r.correction->method},
                           {"m", r.correction->m},
                           {"adjusted_p", r.correction->adjusted_p}};
    }
    return j;
}

// ---- reliability ----------------------------------------------------------

std::optional<Level> parse_level(std::string_view s) {
    if (s == "nominal") return Level::Nominal;
    if (s == "ordinal") return Level::Ordinal;
    if (s == "interval") return Level::Interval;
    return std::nullopt;
}

std::string_view to_string(Level level) {
    switch (level) {
        case Level::Nominal: return "nominal";
        case Level::Ordinal: return "ordinal";
        case Level::Interval: return "interval";
    }
    return "?";
}

double krippendorff_alpha(const std::vector<std::vector<std::optional<double>>>& ratings, Level level) {
    std::size_t raters = 0;
    for (const auto& unit : ratings) raters = std::max(raters, unit.size());
    if (raters < 2) throw Error(ErrorCode::InsufficientData, "need at least two raters");

    std::vector<double> values;
    for (const auto& unit : ratings) {
        for (const auto& v : unit) {
            if (v) values.push_back(*v);
        }
    }
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const std::size_t V = values.size();
    auto index = [&](double v) {
        return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), v) - values.begin());
    };

    // Coincidence matrix.
    std::vector<std::vector<double>> o(V, std::vector<double>(V, 0.0));
    for (const auto& unit : ratings) {
        std::vector<std::size_t> present;
        for (const auto& v : unit) {
            if (v) present.push_back(index(*v));
        }
        if (present.size() < 2) continue;
        double w = 1.0 / static_cast<double>(present.size() - 1);
        for (std::size_t i = 0; i < present.size(); ++i) {
            for (std::size_t j = 0; j < present.size(); ++j) {
                if (i != j) o[present[i]][present[j]] += w;
            }
        }
    }
    std::vector<double> nc(V, 0.0);
    for (std::size_t c = 0; c < V; ++c) nc[c] = std::accumulate(o[c].begin(), o[c].end(), 0.0);
    double n = std::accumulate(nc.begin(), nc.end(), 0.0);
    if (n < 2) throw Error(ErrorCode::InsufficientData, "no unit has two or more ratings");

    auto delta2 = [&](std::size_t c, std::size_t k) {
        if (c == k) return 0.0;
        switch (level) {
            case Level::Nominal: return 1.0;
            case Level::Interval: return (values[c] - values[k]) * (values[c] - values[k]);
            case Level::Ordinal: {
                std::size_t lo = std::min(c, k), hi = std::max(c, k);
                double s = 0;
                for (std::size_t g = lo; g <= hi; ++g) s += nc[g];
                s -= (nc[c] + nc[k]) / 2.0;
                return s * s;
            }
        }
        return 0.0;
    };

    double observed = 0, expected = 0;
    for (std::size_t c = 0; c < V; ++c) {
        for (std::size_t k = 0; k < V; ++k) {
            double d = delta2(c, k);
            observed += o[c][k] * d;
            expected += nc[c] * nc[k] * d;
        }
    }
    if (observed == 0) return 1.0;
    return 1.0 - (n - 1) * observed / expected;
}

// ---- Mann-Whitney ---------------------------------------------------------

double mann_whitney_statistic(const Sample& a, const Sample& b) {
    // Via rank sums with midranks.
    std::vector<std::pair<double, int>> all;
    for (double v : a) all.emplace_back(v, 0);
    for (double v : b) all.emplace_back(v, 1);
    std::sort(all.begin(), all.end());
    double rank_sum_a = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second == 0) rank_sum_a += mid;
        }
        i = j;
    }
    double n = static_cast<double>(a.size());
    return rank_sum_a - n * (n + 1) / 2.0;
}

namespace {

// Doubled midranks of the pooled sample; a's entries first.
std::vector<long> doubled_ranks(const Sample& a, const Sample& b, double* tie_term) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < a.size(); ++i) all.emplace_back(a[i], i);
    for (std::size_t i = 0; i < b.size(); ++i) all.emplace_back(b[i], a.size() + i);
    std::sort(all.begin(), all.end());
    std::vector<long> r2(all.size());
    *tie_term = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        long twice_mid = static_cast<long>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) r2[all[k].second] = twice_mid;
        double t = static_cast<double>(j - i);
        *tie_term += t * t * t - t;
        i = j;
    }
    return r2;
}

double exact_two_sided(const std::vector<long>& r2, std::size_t n) {
    long total = 0;
    for (long r : r2) total += r;
    long observed = 0;
    for (std::size_t i = 0; i < n; ++i) observed += r2[i];
    // ways[k][s]: subsets of size k with doubled rank sum s.
    std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
    ways[0][0] = 1;
    for (long r : r2) {
        for (std::size_t k = n; k >= 1; --k) {
            auto& dst = ways[k];
            const auto& src = ways[k - 1];
            for (long s = total; s >= r; --s) dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
        }
    }
    double all = 0, le = 0, ge = 0;
    for (long s = 0; s <= total; ++s) {
        double w = ways[n][static_cast<std::size_t>(s)];
        all += w;
        if (s <= observed) le += w;
        if (s >= observed) ge += w;
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

}  // namespace

StatReport mann_whitney_u(const Sample& a, const Sample& b, PMethod method) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySample, "Mann-Whitney needs two non-empty samples");
    const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
    StatReport r;
    r.test_name = "mann_whitney_u";
    r.n_per_group = {a.size(), b.size()};
    r.statistic = mann_whitney_statistic(a, b);
    r.effect_size = 1.0 - 2.0 * r.statistic / (n * m);

    double tie_term = 0;
    auto r2 = doubled_ranks(a, b, &tie_term);
    bool exact = method == PMethod::Exact || (method == PMethod::Auto && n * m <= 400);
    if (exact) {
        r.method = "exact";
        r.p_value = exact_two_sided(r2, a.size());
    } else {
        r.method = "normal";
        double N = n + m;
        double var = n * m / 12.0 * ((N + 1) - tie_term / (N * (N - 1)));
        if (var <= 0) {
            r.p_value = 1.0;
        } else {
            double z = std::max(0.0, std::abs(r.statistic - n * m / 2.0) - 0.5) / std::sqrt(var);
            r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        }
    }
    return r;
}

// ---- proportions ----------------------------------------------------------

StatReport chi_square_proportions(const Table2x2& t) {
    double rows[2] = {t[0][0] + t[0][1], t[1][0] + t[1][1]};
    double cols[2] = {t[0][0] + t[1][0], t[0][1] + t[1][1]};
    double total = rows[0] + rows[1];
    for (const auto& row : t) {
        for (double v : row) {
            if (v < 0 || !std::isfinite(v)) throw Error(ErrorCode::DegenerateTable, "counts must be non-negative");
        }
    }
    double chi2 = 0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double e = rows[i] * cols[j] / total;
            if (!(e > 0)) throw Error(ErrorCode::DegenerateTable, "an expected count is zero");
            chi2 += (t[i][j] - e) * (t[i][j] - e) / e;
        }
    }
    StatReport r;
    r.test_name = "chi_square";
    r.statistic = chi2;
    r.p_value = std::erfc(std::sqrt(chi2 / 2.0));
    r.effect_size = std::sqrt(chi2 / total);
    r.n_per_group = {static_cast<std::size_t>(rows[0]), static_cast<std::size_t>(rows[1])};
    r.method = "pearson, 1 dof";
    return r;
}

// ---- corrections and equivalence -------------------------------------------

std::vector<double> bonferroni_adjust(const std::vector<double>& p_values, int m) {
    if (m < static_cast<int>(p_values.size()) || m < 1) {
        throw Error(ErrorCode::InvalidArgument, "family size is smaller than the number of p-values");
    }
    std::vector<double> out;
    for (double p : p_values) {
        if (!(p >= 0 && p <= 1)) throw Error(ErrorCode::InvalidArgument, "p-value outside [0, 1]");
        out.push_back(std::min(1.0, p * m));
    }
    return out;
}

namespace {

double mean(const Sample& s) { return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()); }

double variance(const Sample& s) {
    double mu = mean(s), acc = 0;
    for (double v : s) acc += (v - mu) * (v - mu);
    return acc / static_cast<double>(s.size() - 1);
}

}  // namespace

StatReport tost_equivalence(const Sample& a, const Sample& b, double margin) {
    if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::InsufficientData, "TOST needs two samples of size >= 2");
    if (!(margin > 0)) throw Error(ErrorCode::InvalidArgument, "equivalence margin must be positive");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double diff = mean(a) - mean(b);
    double va = variance(a) / na, vb = variance(b) / nb;
    double se = std::sqrt(va + vb);

    StatReport r;
    r.test_name = "tost_welch";
    r.n_per_group = {a.size(), b.size()};
    r.effect_size = diff;
    r.method = "welch, margin " + fmt::format("{}", margin);
    if (se == 0) {
        r.statistic = 0;
        r.p_value = std::abs(diff) < margin ? 0.0 : 1.0;
        return r;
    }
    double df = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
    boost::math::students_t dist(df);
    double t_lower = (diff + margin) / se;  // H0: diff <= -margin
    double t_upper = (diff - margin) / se;  // H0: diff >= margin
    double p_lower = boost::math::cdf(boost::math::complement(dist, t_lower));
    double p_upper = boost::math::cdf(dist, t_upper);
    if (p_lower >= p_upper) {
        r.statistic = t_lower;
        r.p_value = p_lower;
    } else {
        r.statistic = t_upper;
        r.p_value = p_upper;
    }
    return r;
}

// ---- CSV ------------------------------------------------------------------

std::vector<std::map<std::string, std::string>> read_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    std::size_t line = 1;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_row();
            ++line;
        } else if (c == '\r') {
            // tolerated before \n
        } else {
            field += c;
            field_started = true;
        }
    }
    if (quoted) throw Error(ErrorCode::InvalidArgument, "unterminated quoted field at line " + std::to_string(line));
    if (!field.empty() || !row.empty()) end_row();
    if (rows.empty()) throw Error(ErrorCode::InsufficientData, "CSV has no header row");

    std::vector<std::string> header = rows[0];
    for (auto& h : header) {
        auto b = h.find_first_not_of(" \t");
        auto e = h.find_last_not_of(" \t");
        h = b == std::string::npos ? "" : h.substr(b, e - b + 1);
        if (h.rfind("\xEF\xBB\xBF", 0) == 0) h.erase(0, 3);
    }
    std::vector<std::map<std::string, std::string>> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != header.size()) {
            throw Error(ErrorCode::InvalidArgument, "CSV row " + std::to_string(r + 1) + " has " +
                                                        std::to_string(rows[r].size()) + " fields, header has " +
                                                        std::to_string(header.size()));
        }
        std::map<std::string, std::string> rec;
        for (std::size_t k = 0; k < header.size(); ++k) rec[header[k]] = rows[r][k];
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

std::string trimmed(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

const std::string& column(const std::map<std::string, std::string>& rec, const std::string& name, std::size_t row) {
    auto it = rec.find(name);
    if (it == rec.end()) {
        throw Error(ErrorCode::InvalidArgument, "CSV row " + std::to_string(row) + " lacks column '" + name + "'");
    }
    return it->second;
}

Condition parse_condition(const std::string& raw, std::size_t row) {
    std::string s = trimmed(raw);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "baseline" || s == "b") return Condition::Baseline;
    if (s == "experimental" || s == "e") return Condition::Experimental;
    throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(row) + ": unknown condition '" + raw + "'");
}

long parse_int(const std::string& raw, std::size_t row, const char* what) {
    std::string s = trimmed(raw);
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) {
        throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(row) + ": " + what + " '" + raw + "' is not an integer");
    }
    return v;
}

bool out_of_time(const std::map<std::string, std::string>& rec) {
    auto it = rec.find("out_of_time");
    if (it == rec.end()) return false;
    std::string s = trimmed(it->second);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s == "1" || s == "true" || s == "yes";
}

int parse_question(const std::string& raw, std::size_t row) {
    long q = parse_int(raw, row, "question");
    if (q < 1) throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(row) + ": question must be positive");
    return static_cast<int>(q);
}

}  // namespace

std::vector<ScoreRow> parse_scores(std::string_view csv) {
    std::vector<ScoreRow> out;
    auto recs = read_csv(csv);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        std::size_t row = i + 2;
        if (out_of_time(rec)) continue;
        ScoreRow s;
        s.participant = trimmed(column(rec, "participant", row));
        s.condition = parse_condition(column(rec, "condition", row), row);
        s.question = parse_question(column(rec, "question", row), row);
        s.annotator = trimmed(column(rec, "annotator", row));
        std::string raw = trimmed(column(rec, "score", row));
        if (!raw.empty() && raw != "NA" && raw != "na") {
            long v = parse_int(raw, row, "score");
            if (v < 0 || v > 2) throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(row) + ": score must be 0, 1 or 2");
            s.score = static_cast<int>(v);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TimeRow> parse_times(std::string_view csv) {
    std::vector<TimeRow> out;
    auto recs = read_csv(csv);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        std::size_t row = i + 2;
        if (out_of_time(rec)) continue;
        TimeRow t;
        t.participant = trimmed(column(rec, "participant", row));
        t.condition = parse_condition(column(rec, "condition", row), row);
        t.question = parse_question(column(rec, "question", row), row);
        std::string raw = trimmed(column(rec, "seconds", row));
        if (!raw.empty() && raw != "NA" && raw != "na") {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(raw, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != raw.size() || !(v >= 0) || !std::isfinite(v)) {
                throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(row) + ": bad seconds '" + raw + "'");
            }
            t.seconds = v;
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<TlxRow> parse_tlx(std::string_view csv) {
    std::vector<TlxRow> out;
    auto recs = read_csv(csv);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        std::size_t row = i + 2;
        TlxRow t;
        t.participant = trimmed(column(rec, "participant", row));
        t.condition = parse_condition(column(rec, "condition", row), row);
        for (std::size_t d = 0; d < kTlxDimensions.size(); ++d) {
            std::string raw = trimmed(column(rec, std::string(kTlxDimensions[d]), row));
            if (raw.empty() || raw == "NA" || raw == "na") continue;
            long v = parse_int(raw, row, kTlxDimensions[d].data());
            if (v < 1 || v > 7) {
                throw Error(ErrorCode::InvalidArgument,
                            "row " + std::to_string(row) + ": " + std::string(kTlxDimensions[d]) + " must be 1..7");
            }
            t.ratings[d] = static_cast<int>(v);
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Response> response_scores(const std::vector<ScoreRow>& rows) {
    struct Acc {
        Condition condition;
        double sum = 0;
        int n = 0;
    };
    std::map<std::pair<std::string, int>, Acc> acc;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.participant, r.question);
        auto [it, fresh] = acc.try_emplace(key, Acc{r.condition});
        if (!fresh && it->second.condition != r.condition) {
            throw Error(ErrorCode::InvalidArgument, "participant '" + r.participant + "' appears in both conditions");
        }
        if (r.score) {
            it->second.sum += *r.score;
            ++it->second.n;
        }
    }
    std::vector<Response> out;
    for (const auto& [key, a] : acc) {
        if (a.n == 0) continue;
        out.push_back({key.first, a.condition, key.second, a.sum / a.n});
    }
    return out;
}

// ---- distance groups --------------------------------------------------------

namespace {

bool known_group(const std::string& g) {
    return std::find(kDistanceGroups.begin(), kDistanceGroups.end(), g) != kDistanceGroups.end();
}

std::string bin_distance(long d) {
    if (d <= 0) return "within_caption";
    if (d <= 2) return "2P";
    if (d == 3) return "3P";
    if (d == 4) return "4P";
    return "very_far";
}

}  // namespace

DistanceGroupMap parse_distance_map(const nlohmann::json& j) {
    DistanceGroupMap out;
    auto add = [&](int q, const std::string& g) {
        if (q < 1) throw Error(ErrorCode::InvalidArgument, "question numbers must be positive");
        if (!out.emplace(q, g).second) {
            throw Error(ErrorCode::InvalidArgument, "question " + std::to_string(q) + " is in more than one group");
        }
    };
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "distance map must be a JSON object");
    if (j.contains("groups")) {
        if (!j["groups"].is_object()) throw Error(ErrorCode::InvalidArgument, "groups must be an object");
        for (const auto& [g, qs] : j["groups"].items()) {
            if (!known_group(g)) throw Error(ErrorCode::InvalidArgument, "unknown distance group '" + g + "'");
            if (!qs.is_array()) throw Error(ErrorCode::InvalidArgument, "group '" + g + "' must list questions");
            for (const auto& q : qs) {
                if (!q.is_number_integer()) throw Error(ErrorCode::InvalidArgument, "question ids must be integers");
                add(q.get<int>(), g);
            }
        }
    } else if (j.contains("question_distances")) {
        if (!j["question_distances"].is_object()) {
            throw Error(ErrorCode::InvalidArgument, "question_distances must be an object");
        }
        for (const auto& [q, d] : j["question_distances"].items()) {
            if (!d.is_number_integer()) throw Error(ErrorCode::InvalidArgument, "distances must be integers");
            int qn = 0;
            try {
                qn = std::stoi(q);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidArgument, "question key '" + q + "' is not a number");
            }
            add(qn, bin_distance(d.get<long>()));
        }
    } else {
        throw Error(ErrorCode::InvalidArgument, "distance map needs 'groups' or 'question_distances'");
    }
    return out;
}

DistanceGroupMap load_distance_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read distance map " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, path.string() + " is not valid JSON");
    return parse_distance_map(j);
}

void check_partition(const DistanceGroupMap& map, const std::vector<int>& questions) {
    for (int q : questions) {
        auto it = map.find(q);
        if (it == map.end()) {
            throw Error(ErrorCode::InvalidArgument, "distance map does not place question " + std::to_string(q));
        }
        if (!known_group(it->second)) throw Error(ErrorCode::InvalidArgument, "unknown group " + it->second);
    }
}

std::vector<GroupResult> distance_group_report(const std::vector<Response>& responses, const DistanceGroupMap& map,
                                               PMethod method) {
    std::set<int> qs;
    for (const auto& r : responses) qs.insert(r.question);
    check_partition(map, {qs.begin(), qs.end()});

    std::vector<GroupResult> out;
    for (auto group : kDistanceGroups) {
        GroupResult g;
        g.group = group;
        Sample exp, base;
        for (const auto& [q, name] : map) {
            if (name == group) g.questions.push_back(q);
        }
        for (const auto& r : responses) {
            if (map.at(r.question) != group) continue;
            (r.condition == Condition::Experimental ? exp : base).push_back(r.score);
        }
        if (exp.empty() || base.empty()) continue;
        g.report = mann_whitney_u(exp, base, method);
        out.push_back(std::move(g));
    }
    std::vector<double> ps;
    for (const auto& g : out) ps.push_back(g.report.p_value);
    int m = static_cast<int>(out.size());
    if (m > 0) {
        auto adj = bonferroni_adjust(ps, m);
        for (std::size_t i = 0; i < out.size(); ++i) out[i].report.correction = Correction{"bonferroni", m, adj[i]};
    }
    return out;
}

// ---- combined report ------------------------------------------------------

namespace {

struct TableRow {
    std::string section, subject, test;
    const StatReport* report;
};

void apply_bonferroni(std::vector<StatReport*> family) {
    std::vector<double> ps;
    for (auto* r : family) ps.push_back(r->p_value);
    if (ps.empty()) return;
    auto adj = bonferroni_adjust(ps, static_cast<int>(ps.size()));
    for (std::size_t i = 0; i < family.size(); ++i) {
        family[i]->correction = Correction{"bonferroni", static_cast<int>(ps.size()), adj[i]};
    }
}

std::string num(double v) {
    if (std::abs(v) >= 1e-3 || v == 0) return fmt::format("{:.4f}", v);
    return fmt::format("{:.3g}", v);
}

std::string render_table(const std::vector<TableRow>& rows) {
    std::vector<std::array<std::string, 8>> cells;
    cells.push_back({"section", "subject", "test", "n", "statistic", "p", "effect", "p_adj"});
    for (const auto& r : rows) {
        const auto& s = *r.report;
        std::string n;
        for (std::size_t k = 0; k < s.n_per_group.size(); ++k) n += (k ? "/" : "") + std::to_string(s.n_per_group[k]);
        cells.push_back({r.section, r.subject, r.test, n, num(s.statistic), num(s.p_value),
                         s.effect_size ? num(*s.effect_size) : "", s.correction ? num(s.correction->adjusted_p) : ""});
    }
    std::array<std::size_t, 8> width{};
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string line;
        for (std::size_t c = 0; c < 8; ++c) {
            bool right = c >= 3;
            line += right ? fmt::format("{:>{}}", cells[i][c], width[c]) : fmt::format("{:<{}}", cells[i][c], width[c]);
            if (c + 1 < 8) line += "  ";
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w;
            out += std::string(total + 14, '-') + "\n";
        }
    }
    return out;
}

template <typename Row, typename Value>
std::pair<Sample, Sample> split(const std::vector<Row>& rows, Value value) {
    Sample exp, base;
    for (const auto& r : rows) {
        auto v = value(r);
        if (!v) continue;
        (r.condition == Condition::Experimental ? exp : base).push_back(*v);
    }
    return {exp, base};
}

}  // namespace

StatsOutput run_stats(const StatsInputs& in) {
    Json report;
    std::vector<TableRow> table;
    // Reports live here so the table can point at them.
    std::vector<std::unique_ptr<StatReport>> store;
    auto keep = [&](StatReport r) {
        store.push_back(std::make_unique<StatReport>(std::move(r)));
        return store.back().get();
    };
    std::optional<DistanceGroupMap> groups = in.distance_map;

    if (!in.scores.empty()) {
        Json q;
        // Reliability: units are responses, raters are annotators.
        std::vector<std::string> annotators;
        for (const auto& r : in.scores) {
            if (std::find(annotators.begin(), annotators.end(), r.annotator) == annotators.end()) {
                annotators.push_back(r.annotator);
            }
        }
        std::sort(annotators.begin(), annotators.end());
        std::map<std::pair<std::string, int>, std::vector<std::optional<double>>> units;
        for (const auto& r : in.scores) {
            auto& u = units[{r.participant, r.question}];
            u.resize(annotators.size());
            auto k = static_cast<std::size_t>(std::find(annotators.begin(), annotators.end(), r.annotator) -
                                              annotators.begin());
            if (r.score) u[k] = *r.score;
        }
        std::vector<std::vector<std::optional<double>>> matrix;
        for (auto& [key, u] : units) matrix.push_back(u);
        Json rel;
        rel["level"] = to_string(in.alpha_level);
        rel["annotators"] = annotators;
        rel["units"] = matrix.size();
        try {
            rel["alpha"] = krippendorff_alpha(matrix, in.alpha_level);
            for (Level l : {Level::Nominal, Level::Ordinal, Level::Interval}) {
                rel["alpha_by_level"][std::string(to_string(l))] = krippendorff_alpha(matrix, l);
            }
        } catch (const Error& e) {
            rel["alpha"] = nullptr;
            rel["error"] = e.what();
        }
        report["reliability"] = rel;

        auto responses = response_scores(in.scores);
        auto [exp, base] = split(responses, [](const Response& r) { return std::optional<double>(r.score); });
        auto* overall = keep(mann_whitney_u(exp, base));
        q["overall"] = to_json(*overall);
        table.push_back({"quality", "overall", "mann-whitney", overall});

        Table2x2 t{};
        for (const auto& r : responses) {
            int row = r.condition == Condition::Experimental ? 0 : 1;
            t[row][r.score == 2.0 ? 0 : 1] += 1;
        }
        q["fully_correct"] = {{"table", {{"experimental", {t[0][0], t[0][1]}}, {"baseline", {t[1][0], t[1][1]}}}}};
        try {
            auto* chi = keep(chi_square_proportions(t));
            q["fully_correct"]["chi_square"] = to_json(*chi);
            table.push_back({"quality", "fully correct", "chi-square", chi});
        } catch (const Error& e) {
            q["fully_correct"]["error"] = e.what();
        }

        std::set<int> questions;
        for (const auto& r : responses) questions.insert(r.question);
        std::vector<StatReport*> family;
        std::vector<int> tested;
        for (int qn : questions) {
            auto [e, b] = split(responses, [qn](const Response& r) {
                return r.question == qn ? std::optional<double>(r.score) : std::nullopt;
            });
            if (e.empty() || b.empty()) continue;
            family.push_back(keep(mann_whitney_u(e, b)));
            tested.push_back(qn);
        }
        apply_bonferroni(family);
        Json per_q = Json::array();
        for (std::size_t i = 0; i < family.size(); ++i) {
            Json row = to_json(*family[i]);
            row["question"] = tested[i];
            per_q.push_back(row);
            table.push_back({"quality", "Q" + std::to_string(tested[i]), "mann-whitney", family[i]});
        }
        q["per_question"] = per_q;

        if (groups) {
            auto results = distance_group_report(responses, *groups);
            Json per_g = Json::array();
            for (auto& g : results) {
                auto* rep = keep(g.report);
                Json row = to_json(*rep);
                row["group"] = g.group;
                row["questions"] = g.questions;
                per_g.push_back(row);
                table.push_back({"quality", g.group, "mann-whitney", rep});
            }
            q["per_distance_group"] = per_g;
        }
        report["quality"] = q;
    }

    if (!in.times.empty()) {
        Json tj;
        auto secs = [](const TimeRow& r) { return r.seconds; };
        auto [exp, base] = split(in.times, secs);
        auto* overall = keep(mann_whitney_u(exp, base));
        auto* overall_eq = keep(tost_equivalence(exp, base, in.time_margin_s));
        tj["overall"] = to_json(*overall);
        table.push_back({"time", "overall", "mann-whitney", overall});

        Json eq;
        eq["margin_s"] = in.time_margin_s;
        eq["overall"] = to_json(*overall_eq);
        table.push_back({"time", "overall", "tost", overall_eq});

        std::set<int> questions;
        for (const auto& r : in.times) questions.insert(r.question);
        Json per_q = Json::array(), per_q_eq = Json::array();
        std::vector<StatReport*> family;
        std::vector<std::pair<int, StatReport*>> tost_rows;
        std::vector<int> tested;
        for (int qn : questions) {
            auto [e, b] = split(in.times, [qn](const TimeRow& r) {
                return r.question == qn ? r.seconds : std::nullopt;
            });
            if (e.empty() || b.empty()) continue;
            family.push_back(keep(mann_whitney_u(e, b)));
            tested.push_back(qn);
            if (e.size() >= 2 && b.size() >= 2) tost_rows.emplace_back(qn, keep(tost_equivalence(e, b, in.time_margin_s)));
        }
        for (std::size_t i = 0; i < family.size(); ++i) {
            Json row = to_json(*family[i]);
            row["question"] = tested[i];
            per_q.push_back(row);
            table.push_back({"time", "Q" + std::to_string(tested[i]), "mann-whitney", family[i]});
        }
        for (auto& [qn, rep] : tost_rows) {
            Json row = to_json(*rep);
            row["question"] = qn;
            per_q_eq.push_back(row);
            table.push_back({"time", "Q" + std::to_string(qn), "tost", rep});
        }
        tj["per_question"] = per_q;
        eq["per_question"] = per_q_eq;

        if (groups) {
            std::vector<int> qv(questions.begin(), questions.end());
            check_partition(*groups, qv);
            Json per_g = Json::array(), per_g_eq = Json::array();
            for (auto group : kDistanceGroups) {
                auto [e, b] = split(in.times, [&](const TimeRow& r) {
                    return groups->at(r.question) == group ? r.seconds : std::nullopt;
                });
                if (e.empty() || b.empty()) continue;
                auto* rep = keep(mann_whitney_u(e, b));
                Json row = to_json(*rep);
                row["group"] = group;
                per_g.push_back(row);
                table.push_back({"time", std::string(group), "mann-whitney", rep});
                if (e.size() >= 2 && b.size() >= 2) {
                    auto* eqr = keep(tost_equivalence(e, b, in.time_margin_s));
                    Json erow = to_json(*eqr);
                    erow["group"] = group;
                    per_g_eq.push_back(erow);
                    table.push_back({"time", std::string(group), "tost", eqr});
                }
            }
            tj["per_distance_group"] = per_g;
            eq["per_distance_group"] = per_g_eq;
        }
        tj["equivalence"] = eq;
        report["time"] = tj;
    }

    if (!in.tlx.empty()) {
        Json tl;
        tl["margin"] = in.tlx_margin;
        Json dims = Json::array();
        for (std::size_t d = 0; d < kTlxDimensions.size(); ++d) {
            auto [e, b] = split(in.tlx, [d](const TlxRow& r) {
                return r.ratings[d] ? std::optional<double>(*r.ratings[d]) : std::nullopt;
            });
            if (e.empty() || b.empty()) continue;
            Json row;
            row["dimension"] = kTlxDimensions[d];
            auto* mw = keep(mann_whitney_u(e, b));
            row["mann_whitney"] = to_json(*mw);
            table.push_back({"tlx", std::string(kTlxDimensions[d]), "mann-whitney", mw});
            if (e.size() >= 2 && b.size() >= 2) {
                auto* eqr = keep(tost_equivalence(e, b, in.tlx_margin));
                row["tost"] = to_json(*eqr);
                table.push_back({"tlx", std::string(kTlxDimensions[d]), "tost", eqr});
            }
            dims.push_back(row);
        }
        tl["per_dimension"] = dims;
        report["tlx"] = tl;
    }

    if (report.is_null()) throw Error(ErrorCode::InsufficientData, "no input data");
    return {report, render_table(table)};
}

}  // namespace crossdoc::analysis
