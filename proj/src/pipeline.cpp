#include "crossdoc/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "crossdoc/image.hpp"
#include "crossdoc/prompts.hpp"

namespace crossdoc::pipeline {

using linkgraph::EntityDescription;
using linkgraph::FigureRecord;
using linkgraph::Link;
using linkgraph::LocationKind;
using linkgraph::MentionLocation;
using linkgraph::TextMention;

namespace {

// Width in bytes of the whitespace unit at text[i] (ASCII space or NBSP), 0 if none.
std::size_t space_width(std::string_view text, std::size_t i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return 1;
    if (c == 0xC2 && i + 1 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0xA0) return 2;
    return 0;
}

std::string collapse_space(std::string_view text) {
    std::string out;
    bool pending = false;
    for (std::size_t i = 0; i < text.size();) {
        if (std::size_t w = space_width(text, i)) {
            pending = !out.empty();
            i += w;
            continue;
        }
        if (pending) out += ' ';
        pending = false;
        out += text[i++];
    }
    return out;
}

std::string strip_space(std::string_view text) {
    std::string out;
    for (std::size_t i = 0; i < text.size();) {
        if (std::size_t w = space_width(text, i)) {
            i += w;
        } else {
            out += text[i++];
        }
    }
    return out;
}

std::string ascii_lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

Json parse_ordered(std::string_view raw) {
    auto value = providers::first_json_value(raw);
    if (!value) {
        throw providers::ResponseError(ErrorCode::UnparsableResponse, "no JSON value in response", std::string(raw));
    }
    Json j = Json::parse(*value, nullptr, false);
    if (j.is_discarded()) {
        throw providers::ResponseError(ErrorCode::UnparsableResponse, "malformed JSON", std::string(raw));
    }
    return j;
}

std::string fig_tag(const char* stage, int n) { return std::string(stage) + "/fig" + std::to_string(n); }

providers::Attachment paper_attachment(const Document& doc) {
    return {providers::Attachment::Kind::Document, "", doc.source, doc.doc_id + ".html"};
}

providers::Attachment image_attachment(const std::filesystem::path& p) {
    return {providers::Attachment::Kind::Image, p.string(), "", p.filename().string()};
}

void require_image(const FigureInput& in) {
    std::error_code ec;
    if (in.image_path.empty() || !std::filesystem::is_regular_file(in.image_path, ec)) {
        throw Error(ErrorCode::ImageUnreadable, "figure image not found: " + in.image_path.string());
    }
}

// Position of `needle` in `hay` at or after `from`, letting any whitespace
// run match any other. Returns the matched range.
std::optional<Span> find_loose(std::string_view hay, std::string_view needle, std::size_t from) {
    std::string n = collapse_space(needle);
    if (n.empty()) return std::nullopt;
    for (std::size_t start = from; start < hay.size(); ++start) {
        if (space_width(hay, start)) continue;
        std::size_t h = start;
        std::size_t k = 0;
        while (k < n.size() && h < hay.size()) {
            if (n[k] == ' ') {
                std::size_t w = space_width(hay, h);
                if (!w) break;
                while (h < hay.size() && (w = space_width(hay, h))) h += w;
                ++k;
            } else if (hay[h] == n[k]) {
                ++h;
                ++k;
            } else {
                break;
            }
        }
        if (k == n.size()) return Span{start, h};
    }
    return std::nullopt;
}

std::vector<std::string_view> code_points(std::string_view s) {
    std::vector<std::string_view> out;
    for (std::size_t i = 0; i < s.size();) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::set<std::string> word_tokens(std::string_view s) {
    std::set<std::string> out;
    std::string cur;
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.insert(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.insert(std::move(cur));
    return out;
}

}  // namespace

std::string label_key(std::string_view label) {
    std::string k = ascii_lower(collapse_space(label));
    for (std::string_view article : {"a ", "an ", "the "}) {
        if (k.size() > article.size() && k.compare(0, article.size(), article) == 0) {
            k.erase(0, article.size());
            break;
        }
    }
    return k;
}

// ---- identification -------------------------------------------------------

namespace {

std::vector<std::string> labels_from_array(const Json& arr, std::string_view raw) {
    std::vector<std::string> out;
    for (const auto& item : arr) {
        if (item.is_string()) {
            out.push_back(item.get<std::string>());
        } else if (item.is_object()) {
            bool found = false;
            for (const char* key : {"label", "name", "element"}) {
                if (item.contains(key) && item[key].is_string()) {
                    out.push_back(item[key].get<std::string>());
                    found = true;
                    break;
                }
            }
            if (!found) {
                throw providers::ResponseError(ErrorCode::UnparsableResponse, "element without a label",
                                               std::string(raw));
            }
        } else {
            throw providers::ResponseError(ErrorCode::UnparsableResponse, "element list holds a non-string",
                                           std::string(raw));
        }
    }
    return out;
}

const Json* figure_entry(const Json& obj, int n) {
    const std::string want1 = "fig" + std::to_string(n);
    const std::string want2 = "figure" + std::to_string(n);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        std::string k = ascii_lower(strip_space(it.key()));
        std::erase_if(k, [](char c) { return c == '#' || c == '_' || c == '.' || c == '-'; });
        if (k == want1 || k == want2) return &it.value();
    }
    return nullptr;
}

std::vector<std::string> dedupe(std::vector<std::string> labels) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (auto& l : labels) {
        std::string clean = collapse_space(l);
        if (clean.empty()) continue;
        if (seen.insert(label_key(clean)).second) out.push_back(std::move(clean));
    }
    return out;
}

std::vector<std::string> labels_from_lines(std::string_view raw) {
    std::vector<std::string> out;
    std::istringstream in{std::string(raw)};
    std::string line;
    while (std::getline(in, line)) {
        std::string s = collapse_space(line);
        // Drop list markers: "-", "*", "•", "1.", "1)".
        if (s.rfind("\xE2\x80\xA2", 0) == 0) s.erase(0, 3);
        std::size_t i = 0;
        if (!s.empty() && (s[0] == '-' || s[0] == '*')) {
            i = 1;
        } else {
            while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
            if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
                ++i;
            } else {
                i = 0;
            }
        }
        s = collapse_space(s.substr(i));
        while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';')) s.pop_back();
        if (s.empty() || s.back() == ':') continue;
        out.push_back(s);
    }
    return out;
}

}  // namespace

std::vector<std::string> parse_identification(std::string_view raw, int figure_number, IdentificationPrompt variant) {
    if (variant == IdentificationPrompt::Paper) {
        Json j = parse_ordered(raw);
        if (!j.is_object()) {
            throw providers::ResponseError(ErrorCode::UnparsableResponse, "expected an object keyed by figure",
                                           std::string(raw));
        }
        const Json* entry = figure_entry(j, figure_number);
        if (!entry) {
            throw providers::ResponseError(ErrorCode::MissingFigureKey,
                                           "response has no key fig" + std::to_string(figure_number), std::string(raw));
        }
        if (!entry->is_array()) {
            throw providers::ResponseError(ErrorCode::UnparsableResponse, "figure entry is not a list",
                                           std::string(raw));
        }
        return dedupe(labels_from_array(*entry, raw));
    }
    if (auto value = providers::first_json_value(raw)) {
        Json j = Json::parse(*value, nullptr, false);
        if (j.is_array()) return dedupe(labels_from_array(j, raw));
        if (j.is_object()) {
            if (const Json* entry = figure_entry(j, figure_number); entry && entry->is_array()) {
                return dedupe(labels_from_array(*entry, raw));
            }
        }
    }
    auto lines = labels_from_lines(raw);
    if (lines.empty() && !collapse_space(raw).empty()) {
        throw providers::ResponseError(ErrorCode::UnparsableResponse, "no labels in response", std::string(raw));
    }
    return dedupe(std::move(lines));
}

std::vector<std::string> identify_visual_entities(const FigureInput& in, const Document& doc,
                                                  providers::ChatProvider& chat, const PromptOptions& options) {
    require_image(in);
    providers::ChatRequest req;
    req.tag = fig_tag("identify", in.figure->figure_number);
    if (options.identification == IdentificationPrompt::Paper) {
        req.instructions = std::string(prompts::identify_paper());
        req.attachments = {paper_attachment(doc), image_attachment(in.image_path)};
    } else {
        req.user_content = std::string(prompts::identify_image());
        req.attachments = {image_attachment(in.image_path)};
    }
    auto resp = providers::chat(chat, req);
    return parse_identification(resp.text, in.figure->figure_number, options.identification);
}

// ---- pointing -------------------------------------------------------------

std::size_t LocateResult::total_points() const {
    std::size_t n = 0;
    for (const auto& [label, pts] : points) n += pts.size();
    return n;
}

LocateResult locate_entities(const FigureInput& in, const std::vector<std::string>& labels,
                             providers::PointingProvider& pointing) {
    if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "no labels to locate");
    providers::ImageRef image = providers::load_image_ref(in.image_path);
    LocateResult out;
    for (const auto& label : labels) {
        std::vector<NormPoint> pts;
        try {
            for (const auto& p :
                 providers::point(pointing, image, label, fig_tag("point", in.figure->figure_number) + "/" + label)) {
                pts.push_back({p.x, p.y});
            }
        } catch (const Error& e) {
            out.failures.push_back({label, e.code(), e.what()});
        }
        out.points.emplace_back(label, std::move(pts));
    }
    return out;
}

// ---- linking --------------------------------------------------------------

std::vector<DiffOp> aligned_diff(std::string_view expected, std::string_view actual) {
    auto a = code_points(expected);
    auto b = code_points(actual);
    std::size_t pre = 0;
    while (pre < a.size() && pre < b.size() && a[pre] == b[pre]) ++pre;
    std::size_t suf = 0;
    while (suf < a.size() - pre && suf < b.size() - pre && a[a.size() - 1 - suf] == b[b.size() - 1 - suf]) ++suf;

    std::vector<std::pair<DiffOp::Kind, std::string_view>> steps;
    for (std::size_t i = 0; i < pre; ++i) steps.emplace_back(DiffOp::Kind::Equal, a[i]);
    std::size_t n = a.size() - pre - suf;
    std::size_t m = b.size() - pre - suf;
    if (n * m <= 4'000'000) {
        // LCS table over the differing middle.
        std::vector<std::vector<std::uint32_t>> lcs(n + 1, std::vector<std::uint32_t>(m + 1, 0));
        for (std::size_t i = n; i-- > 0;) {
            for (std::size_t j = m; j-- > 0;) {
                lcs[i][j] = a[pre + i] == b[pre + j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
            }
        }
        std::size_t i = 0, j = 0;
        while (i < n || j < m) {
            if (i < n && j < m && a[pre + i] == b[pre + j]) {
                steps.emplace_back(DiffOp::Kind::Equal, a[pre + i]);
                ++i;
                ++j;
            } else if (j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j])) {
                steps.emplace_back(DiffOp::Kind::Insert, b[pre + j++]);
            } else {
                steps.emplace_back(DiffOp::Kind::Delete, a[pre + i++]);
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) steps.emplace_back(DiffOp::Kind::Delete, a[pre + i]);
        for (std::size_t j = 0; j < m; ++j) steps.emplace_back(DiffOp::Kind::Insert, b[pre + j]);
    }
    for (std::size_t i = a.size() - suf; i < a.size(); ++i) steps.emplace_back(DiffOp::Kind::Equal, a[i]);

    std::vector<DiffOp> ops;
    for (auto& [kind, piece] : steps) {
        if (!ops.empty() && ops.back().kind == kind) {
            ops.back().text += piece;
        } else {
            ops.push_back({kind, std::string(piece)});
        }
    }
    return ops;
}

std::string render_diff(const std::vector<DiffOp>& ops, std::size_t context) {
    std::string out;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        const auto& op = ops[i];
        switch (op.kind) {
            case DiffOp::Kind::Delete: out += "[-" + op.text + "-]"; break;
            case DiffOp::Kind::Insert: out += "{+" + op.text + "+}"; break;
            case DiffOp::Kind::Equal: {
                auto cps = code_points(op.text);
                bool first = i == 0;
                bool last = i + 1 == ops.size();
                std::size_t keep_head = first ? 0 : context;
                std::size_t keep_tail = last ? 0 : context;
                if (cps.size() <= keep_head + keep_tail + 1) {
                    out += op.text;
                } else {
                    for (std::size_t k = 0; k < keep_head; ++k) out += cps[k];
                    out += "\xE2\x80\xA6";
                    for (std::size_t k = cps.size() - keep_tail; k < cps.size(); ++k) out += cps[k];
                }
                break;
            }
        }
    }
    return out;
}

LinkResult parse_link_response(std::string_view raw, std::string_view unit, std::string_view tag) {
    Json j = parse_ordered(raw);
    if (!j.is_object()) {
        throw providers::ResponseError(ErrorCode::UnparsableResponse, "expected an object keyed by sentence",
                                       std::string(raw));
    }
    std::vector<std::string> keys;
    std::string joined;
    for (auto it = j.begin(); it != j.end(); ++it) {
        keys.push_back(it.key());
        joined += it.key();
    }

    LinkResult result;
    std::vector<std::size_t> starts;
    if (joined == unit) {
        std::size_t at = 0;
        for (const auto& k : keys) {
            starts.push_back(at);
            at += k.size();
        }
    } else if (strip_space(joined) == strip_space(unit)) {
        result.realigned = true;
        std::size_t t = 0;
        for (const auto& k : keys) {
            std::optional<std::size_t> first;
            for (std::size_t i = 0; i < k.size();) {
                if (std::size_t w = space_width(k, i)) {
                    i += w;
                    continue;
                }
                while (t < unit.size()) {
                    std::size_t w = space_width(unit, t);
                    if (!w) break;
                    t += w;
                }
                if (!first) first = t;
                ++t;
                ++i;
            }
            starts.push_back(keys.size() == starts.size() + 1 && starts.empty() ? 0 : first.value_or(t));
        }
        if (!starts.empty()) starts[0] = 0;
    } else {
        throw providers::ResponseError(ErrorCode::ReconstructionMismatch,
                                       "keys do not reproduce the text: " + render_diff(aligned_diff(unit, joined)),
                                       std::string(raw));
    }

    auto issue = [&](std::string code, std::string message) {
        result.issues.push_back({std::move(code), std::string(tag), std::move(message)});
    };

    std::size_t index = 0;
    for (auto it = j.begin(); it != j.end(); ++it, ++index) {
        std::size_t begin = starts[index];
        std::size_t end = index + 1 < starts.size() ? starts[index + 1] : unit.size();
        LinkedSentence sentence{std::string(unit.substr(begin, end - begin)), Span{begin, end}, {}};
        const Json& pairs = it.value();
        if (!pairs.is_array()) {
            throw providers::ResponseError(ErrorCode::UnparsableResponse, "sentence value is not a list",
                                           std::string(raw));
        }
        std::map<std::string, std::size_t> resume;  // repeated phrases continue after the last hit
        for (const auto& pair : pairs) {
            std::string phrase, entity;
            if (pair.is_array() && pair.size() >= 2 && pair[0].is_string() && pair[1].is_string()) {
                phrase = pair[0].get<std::string>();
                entity = pair[1].get<std::string>();
            } else if (pair.is_object() && pair.contains("label") && pair.contains("entity") &&
                       pair["label"].is_string() && pair["entity"].is_string()) {
                phrase = pair["label"].get<std::string>();
                entity = pair["entity"].get<std::string>();
            } else {
                throw providers::ResponseError(ErrorCode::UnparsableResponse, "malformed label/entity pair",
                                               std::string(raw));
            }
            if (collapse_space(entity).empty()) {
                issue("EMPTY_ENTITY_LABEL", "phrase '" + phrase + "' names no entity");
                continue;
            }
            if (phrase.empty()) {
                issue("PHRASE_NOT_FOUND", "empty phrase for entity '" + entity + "'");
                continue;
            }
            std::string_view host = std::string_view(sentence.sentence);
            std::size_t from = resume.count(phrase) ? resume[phrase] : 0;
            std::optional<Span> hit;
            if (std::size_t at = host.find(phrase, from); at != std::string_view::npos) {
                hit = Span{at, at + phrase.size()};
            } else if (result.realigned) {
                hit = find_loose(host, phrase, from);
            }
            if (!hit) {
                issue("PHRASE_NOT_FOUND",
                      "'" + phrase + "' not found in sentence " + std::to_string(index) + " for entity '" + entity + "'");
                continue;
            }
            resume[phrase] = hit->end;
            Span abs{begin + hit->begin, begin + hit->end};
            sentence.phrases.push_back({std::string(unit.substr(abs.begin, abs.end - abs.begin)),
                                        collapse_space(entity), abs});
        }
        result.sentences.push_back(std::move(sentence));
    }
    return result;
}

LinkResult link_text_mentions(std::string_view unit_text, const std::vector<std::string>& entities,
                              providers::ChatProvider& chat, const PromptOptions& options, std::string tag) {
    if (collapse_space(unit_text).empty()) throw Error(ErrorCode::InvalidArgument, "empty text unit");
    providers::ChatRequest req;
    req.user_content = prompts::link_prompt(entities, unit_text, options.fix_link_prompt_typo);
    req.tag = tag;
    auto resp = providers::chat(chat, req);
    return parse_link_response(resp.text, unit_text, tag);
}

// ---- descriptions ---------------------------------------------------------

std::optional<int> resolve_related_sentence(const Document& doc, std::string_view sentence) {
    std::string needle = collapse_space(sentence);
    if (needle.empty()) return std::nullopt;
    for (const auto& p : doc.passages) {
        if (collapse_space(p.text).find(needle) != std::string::npos) return static_cast<int>(p.index);
    }
    std::string lowered = ascii_lower(needle);
    for (const auto& p : doc.passages) {
        if (ascii_lower(collapse_space(p.text)).find(lowered) != std::string::npos) return static_cast<int>(p.index);
    }

    auto want = word_tokens(needle);
    if (want.size() < 3) return std::nullopt;
    double best = 0;
    std::optional<int> best_passage;
    for (const auto& p : doc.passages) {
        for (const auto& span : ingest::sentence_spans(p.text)) {
            auto have = word_tokens(std::string_view(p.text).substr(span.begin, span.end - span.begin));
            std::size_t common = 0;
            for (const auto& w : want) common += have.count(w);
            double dice = 2.0 * static_cast<double>(common) / static_cast<double>(want.size() + have.size());
            if (dice > best) {
                best = dice;
                best_passage = static_cast<int>(p.index);
            }
        }
    }
    if (best >= 0.8) return best_passage;
    return std::nullopt;
}

std::string limit_sentences(std::string_view text, std::size_t max_sentences, bool* truncated) {
    auto spans = ingest::sentence_spans(text);
    if (truncated) *truncated = false;
    if (spans.size() <= max_sentences || max_sentences == 0) return std::string(text);
    std::string out(text.substr(0, spans[max_sentences - 1].end));
    while (!out.empty() && space_width(out, out.size() - 1)) out.pop_back();
    if (truncated) *truncated = true;
    return out + "\xE2\x80\xA6";
}

DescriptionResult parse_descriptions(std::string_view raw, const std::vector<std::string>& labels,
                                     const Document& doc, std::string_view subject) {
    Json j = parse_ordered(raw);
    if (!j.is_object()) {
        throw providers::ResponseError(ErrorCode::UnparsableResponse, "expected an object keyed by element",
                                       std::string(raw));
    }
    std::map<std::string, std::string> by_key;
    for (const auto& l : labels) by_key.emplace(label_key(l), l);

    DescriptionResult out;
    auto issue = [&](std::string code, std::string message) {
        out.issues.push_back({std::move(code), std::string(subject), std::move(message)});
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto found = by_key.find(label_key(it.key()));
        if (found == by_key.end()) {
            issue("UNKNOWN_DESCRIPTION_KEY", "no entity named '" + it.key() + "'");
            continue;
        }
        const std::string& label = found->second;
        if (out.by_label.count(label)) {
            issue("DUPLICATE_DESCRIPTION", "second description for '" + label + "' ignored");
            continue;
        }
        std::string text;
        std::vector<std::string> related;
        const Json& v = it.value();
        if (v.is_string()) {
            text = v.get<std::string>();
        } else if (v.is_object()) {
            for (const char* key : {"description", "text"}) {
                if (v.contains(key) && v[key].is_string()) {
                    text = v[key].get<std::string>();
                    break;
                }
            }
            for (const char* key : {"related_sentences", "related"}) {
                if (v.contains(key) && v[key].is_array()) {
                    for (const auto& s : v[key]) {
                        if (s.is_string()) related.push_back(s.get<std::string>());
                    }
                    break;
                }
            }
        } else {
            issue("MALFORMED_DESCRIPTION", "description for '" + label + "' is neither text nor an object");
            continue;
        }
        text = collapse_space(text);
        if (text.empty()) {
            issue("EMPTY_DESCRIPTION", "description for '" + label + "' is empty");
            continue;
        }
        DescriptionDraft d;
        d.text = limit_sentences(text, 3, &d.truncated);
        if (d.truncated) issue("DESCRIPTION_TRUNCATED", "description for '" + label + "' cut to three sentences");
        std::set<int> ids;
        for (const auto& s : related) {
            if (auto p = resolve_related_sentence(doc, s)) {
                ids.insert(*p);
            } else {
                d.unresolved_related.push_back(s);
                issue("UNRESOLVED_RELATED_SENTENCE", "'" + s + "' for '" + label + "' matches no passage");
            }
        }
        d.related_passage_ids.assign(ids.begin(), ids.end());
        out.by_label.emplace(label, std::move(d));
    }
    for (const auto& l : labels) {
        if (!out.by_label.count(l)) issue("MISSING_DESCRIPTION", "no description for '" + l + "'");
    }
    return out;
}

DescriptionResult generate_descriptions(const FigureInput& in, const std::vector<std::string>& labels,
                                        const Document& doc, providers::ChatProvider& chat) {
    if (labels.empty()) return {};
    providers::ChatRequest req;
    req.tag = fig_tag("describe", in.figure->figure_number);
    req.instructions = std::string(prompts::describe());
    std::string user = "Figure " + std::to_string(in.figure->figure_number) + ".\nEntities:\n";
    for (const auto& l : labels) user += "- " + l + "\n";
    user += "\n" + std::string(prompts::describe_related_request());
    req.user_content = std::move(user);
    req.attachments.push_back(paper_attachment(doc));
    std::error_code ec;
    if (std::filesystem::is_regular_file(in.image_path, ec)) req.attachments.push_back(image_attachment(in.image_path));
    auto resp = providers::chat(chat, req);
    return parse_descriptions(resp.text, labels, doc, req.tag);
}

// ---- orchestration --------------------------------------------------------

PipelineOptions options_from_config(const Config& config, std::filesystem::path asset_root) {
    PipelineOptions o;
    o.prompts = {config.identification_prompt, config.fix_link_prompt_typo};
    o.pruning = config.pruning;
    o.point_provisional = config.point_provisional;
    o.workers = config.workers;
    o.references = reference_pattern(config);
    o.asset_root = std::move(asset_root);
    return o;
}

namespace {

struct UnitLink {
    LocationKind kind;
    int index;  // passage index or figure number
    std::optional<LinkResult> result;
};

struct FigureWork {
    int figure_number = 0;
    bool identified = false;
    std::vector<std::string> visual;
    std::vector<std::string> provisional;
    std::map<std::string, std::vector<NormPoint>> points;  // by label
    std::vector<UnitLink> units;
    DescriptionResult descriptions;
    std::vector<Diagnostic> diagnostics;
    Json stages = Json::object();
};

std::string stage_error(const Error& e) { return std::string(e.what()); }

FigureWork annotate_figure(const Document& doc, const Figure& figure, const ProviderSet& providers,
                           const PipelineOptions& options) {
    FigureWork w;
    w.figure_number = figure.figure_number;
    const std::string subject = "fig" + std::to_string(figure.figure_number);
    auto diag = [&](std::string code, std::string message, std::string sub = {}) {
        w.diagnostics.push_back({std::move(code), sub.empty() ? subject : std::move(sub), std::move(message)});
    };

    FigureInput in{&figure, {}};
    std::filesystem::path ref(figure.image_ref);
    in.image_path = ref.is_absolute() || figure.image_ref.find("://") != std::string::npos
                        ? ref
                        : options.asset_root / ref;

    try {
        w.visual = identify_visual_entities(in, doc, *providers.chat, options.prompts);
        w.identified = true;
        w.stages["identify"] = {{"status", "ok"}, {"labels", w.visual.size()}};
    } catch (const Error& e) {
        diag("IDENTIFY_FAILED", stage_error(e));
        w.stages["identify"] = {{"status", "failed"}, {"error", to_string(e.code())}};
        return w;
    }

    auto locate = [&](const std::vector<std::string>& labels, const char* stage) {
        Json failures = Json::array();
        std::size_t found = 0;
        try {
            auto r = locate_entities(in, labels, *providers.pointing);
            for (auto& [label, pts] : r.points) {
                found += pts.size();
                w.points[label] = std::move(pts);
            }
            for (const auto& f : r.failures) {
                diag("POINT_FAILED", "'" + f.label + "': " + f.message);
                failures.push_back({{"label", f.label}, {"error", to_string(f.code)}});
            }
            w.stages[stage] = {{"status", r.failures.empty() ? "ok" : "partial"}, {"points", found},
                               {"failures", failures}};
        } catch (const Error& e) {
            diag("LOCATE_FAILED", stage_error(e));
            w.stages[stage] = {{"status", "failed"}, {"error", to_string(e.code())}};
        }
    };
    if (!w.visual.empty()) locate(w.visual, "locate");

    // Caption first, then each passage citing the figure.
    w.units.push_back({LocationKind::Caption, figure.figure_number, std::nullopt});
    std::set<std::size_t> citing;
    for (const auto& ref_hit : ingest::find_figure_references(doc, figure.figure_number, options.references)) {
        citing.insert(ref_hit.passage_index);
    }
    for (std::size_t p : citing) w.units.push_back({LocationKind::Body, static_cast<int>(p), std::nullopt});

    std::size_t linked = 0, failed = 0;
    for (auto& unit : w.units) {
        std::string tag = unit.kind == LocationKind::Caption
                              ? fig_tag("link", figure.figure_number) + "/caption"
                              : fig_tag("link", figure.figure_number) + "/p" + std::to_string(unit.index);
        const std::string& text = unit.kind == LocationKind::Caption
                                      ? figure.caption
                                      : doc.passages[static_cast<std::size_t>(unit.index)].text;
        try {
            unit.result = link_text_mentions(text, w.visual, *providers.chat, options.prompts, tag);
            ++linked;
            if (unit.result->realigned) diag("LINK_REALIGNED", "keys matched after ignoring whitespace", tag);
            for (const auto& i : unit.result->issues) w.diagnostics.push_back(i);
        } catch (const Error& e) {
            ++failed;
            diag("LINK_FAILED", stage_error(e), tag);
        }
    }
    w.stages["link"] = {{"units", w.units.size()}, {"linked", linked}, {"failed", failed}};

    std::set<std::string> known;
    for (const auto& l : w.visual) known.insert(label_key(l));
    for (const auto& unit : w.units) {
        if (!unit.result) continue;
        for (const auto& s : unit.result->sentences) {
            for (const auto& p : s.phrases) {
                if (known.insert(label_key(p.entity_label)).second) w.provisional.push_back(p.entity_label);
            }
        }
    }
    if (options.point_provisional && !w.provisional.empty()) locate(w.provisional, "locate_provisional");

    std::vector<std::string> all = w.visual;
    all.insert(all.end(), w.provisional.begin(), w.provisional.end());
    if (!all.empty()) {
        try {
            w.descriptions = generate_descriptions(in, all, doc, *providers.chat);
            for (const auto& i : w.descriptions.issues) w.diagnostics.push_back(i);
            w.stages["describe"] = {{"status", "ok"}, {"described", w.descriptions.by_label.size()}};
        } catch (const Error& e) {
            diag("DESCRIBE_FAILED", stage_error(e));
            w.stages["describe"] = {{"status", "failed"}, {"error", to_string(e.code())}};
        }
    }
    return w;
}

struct Candidate {
    MentionLocation location;
    std::string phrase;
    std::size_t entity;  // index into the assembled entity list
    int figure_number;
};

}  // namespace

PipelineResult run_pipeline(const Document& doc, const ProviderSet& providers, const PipelineOptions& options) {
    if (!providers.chat || !providers.pointing) throw Error(ErrorCode::InvalidArgument, "providers not configured");

    std::vector<const Figure*> figures;
    for (const auto& f : doc.figures) figures.push_back(&f);
    std::sort(figures.begin(), figures.end(),
              [](const Figure* a, const Figure* b) { return a->figure_number < b->figure_number; });

    // Stage work, optionally in parallel. Results land by figure slot, so
    // completion order never shows in the output.
    std::vector<FigureWork> work(figures.size());
    const std::size_t workers = static_cast<std::size_t>(std::max(1, options.workers));
    if (workers == 1) {
        for (std::size_t i = 0; i < figures.size(); ++i) work[i] = annotate_figure(doc, *figures[i], providers, options);
    } else {
        for (std::size_t start = 0; start < figures.size(); start += workers) {
            std::vector<std::future<FigureWork>> batch;
            for (std::size_t i = start; i < std::min(figures.size(), start + workers); ++i) {
                batch.push_back(std::async(std::launch::async, [&, i] {
                    return annotate_figure(doc, *figures[i], providers, options);
                }));
            }
            for (std::size_t k = 0; k < batch.size(); ++k) work[start + k] = batch[k].get();
        }
    }

    AugmentationBundle b;
    b.doc_id = doc.doc_id;
    b.source_hash = doc.source_hash;

    // Captions citing other figures are not referring passages; say so.
    for (const Figure* f : figures) {
        for (const Figure* other : figures) {
            if (other == f) continue;
            if (!options.references.find(f->caption, other->figure_number).empty()) {
                b.diagnostics.push_back({"CROSS_CAPTION_REFERENCE", "fig" + std::to_string(f->figure_number),
                                         "caption cites figure " + std::to_string(other->figure_number) +
                                             "; not linked"});
            }
        }
    }

    for (const Figure* f : figures) {
        FigureRecord rec;
        rec.figure_number = f->figure_number;
        rec.element_id = f->element_id;
        rec.image_ref = f->image_ref;
        std::filesystem::path p = options.asset_root / f->image_ref;
        if (std::ifstream in{p, std::ios::binary}) {
            std::ostringstream ss;
            ss << in.rdbuf();
            if (auto info = probe_image(ss.str())) {
                rec.width = info->width;
                rec.height = info->height;
            }
        }
        b.figures.push_back(std::move(rec));
    }

    // Entities: figure order, then first appearance (image labels before
    // labels the linking stage introduced).
    std::map<std::pair<int, std::string>, std::size_t> entity_index;
    for (const auto& w : work) {
        for (const auto& d : w.diagnostics) b.diagnostics.push_back(d);
        auto add = [&](const std::string& label, bool provisional) {
            linkgraph::Entity e;
            e.entity_id = "e" + std::to_string(b.entities.size() + 1);
            e.figure_number = w.figure_number;
            e.label = label;
            e.provisional = provisional;
            if (auto it = w.points.find(label); it != w.points.end()) e.points = it->second;
            entity_index[{w.figure_number, label_key(label)}] = b.entities.size();
            b.entities.push_back(std::move(e));
        };
        for (const auto& l : w.visual) add(l, false);
        for (const auto& l : w.provisional) add(l, true);
    }

    // Mentions, resolved per text unit: longest phrase wins an overlap.
    std::map<std::pair<int, int>, std::vector<Candidate>> by_unit;  // (kind, index)
    for (const auto& w : work) {
        for (const auto& unit : w.units) {
            if (!unit.result) continue;
            for (std::size_t s = 0; s < unit.result->sentences.size(); ++s) {
                for (const auto& p : unit.result->sentences[s].phrases) {
                    auto it = entity_index.find({w.figure_number, label_key(p.entity_label)});
                    if (it == entity_index.end()) continue;
                    MentionLocation loc{unit.kind, unit.index, static_cast<int>(s), p.span};
                    by_unit[{static_cast<int>(unit.kind), unit.index}].push_back(
                        {loc, p.phrase, it->second, w.figure_number});
                }
            }
        }
    }

    auto unit_order = [&](const MentionLocation& loc) {
        if (loc.kind == LocationKind::Body) return std::make_tuple(static_cast<std::size_t>(loc.passage_or_figure), 1, 0);
        const Figure* f = doc.figure(loc.passage_or_figure);
        return std::make_tuple(f ? f->position_index : 0, 0, loc.passage_or_figure);
    };

    std::vector<Candidate> accepted;
    for (auto& [unit, cands] : by_unit) {
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& c) {
            std::size_t la = a.location.char_span.end - a.location.char_span.begin;
            std::size_t lc = c.location.char_span.end - c.location.char_span.begin;
            return std::make_tuple(-static_cast<long long>(la), a.location.char_span.begin, a.figure_number, a.entity) <
                   std::make_tuple(-static_cast<long long>(lc), c.location.char_span.begin, c.figure_number, c.entity);
        });
        std::vector<const Candidate*> kept;
        for (const auto& c : cands) {
            const Candidate* clash = nullptr;
            for (const Candidate* k : kept) {
                if (c.location.char_span.begin < k->location.char_span.end &&
                    k->location.char_span.begin < c.location.char_span.end) {
                    clash = k;
                    break;
                }
            }
            if (clash) {
                bool same = clash->location.char_span == c.location.char_span && clash->entity == c.entity;
                if (!same) {
                    std::string where = (c.location.kind == LocationKind::Caption ? "caption " : "passage ") +
                                        std::to_string(c.location.passage_or_figure);
                    b.diagnostics.push_back({"MENTION_OVERLAP_DISCARDED", b.entities[c.entity].entity_id,
                                             "'" + c.phrase + "' in " + where + " overlaps '" + clash->phrase + "'"});
                }
                continue;
            }
            kept.push_back(&c);
        }
        for (const Candidate* k : kept) accepted.push_back(*k);
    }
    std::sort(accepted.begin(), accepted.end(), [&](const Candidate& a, const Candidate& c) {
        return std::make_tuple(unit_order(a.location), a.location.char_span.begin) <
               std::make_tuple(unit_order(c.location), c.location.char_span.begin);
    });
    for (const auto& c : accepted) {
        TextMention m;
        m.mention_id = "m" + std::to_string(b.mentions.size() + 1);
        m.location = c.location;
        m.phrase = c.phrase;
        auto& e = b.entities[c.entity];
        m.entity_id = e.entity_id;
        m.anchor_id = "cd-" + e.entity_id + "-" + m.mention_id;
        e.mentions.push_back(m.mention_id);
        b.mentions.push_back(std::move(m));
    }

    // Descriptions and links.
    for (const auto& w : work) {
        for (const auto& [label, draft] : w.descriptions.by_label) {
            auto it = entity_index.find({w.figure_number, label_key(label)});
            if (it == entity_index.end()) continue;
            EntityDescription d;
            d.entity_id = b.entities[it->second].entity_id;
            d.text = draft.text;
            d.related_passage_ids = draft.related_passage_ids;
            d.unresolved_related = draft.unresolved_related;
            b.descriptions.push_back(std::move(d));
        }
    }
    std::sort(b.descriptions.begin(), b.descriptions.end(), [&](const EntityDescription& a, const EntityDescription& c) {
        return std::stoi(a.entity_id.substr(1)) < std::stoi(c.entity_id.substr(1));
    });
    for (const auto& e : b.entities) {
        for (const auto& mid : e.mentions) {
            b.links.push_back({"l" + std::to_string(b.links.size() + 1), e.entity_id,
                               std::string(linkgraph::kDirectReference), {mid, std::nullopt}, Json::object()});
        }
        if (const EntityDescription* d = b.description(e.entity_id)) {
            for (int p : d->related_passage_ids) {
                b.links.push_back({"l" + std::to_string(b.links.size() + 1), e.entity_id,
                                   std::string(linkgraph::kRelatedPassage), {std::nullopt, p}, Json::object()});
            }
        }
    }
    b.scan_sequences = linkgraph::compute_scan_sequences(b);

    if (options.pruning) {
        AugmentationBundle pruned = linkgraph::prune_unlinked_entities(b);
        for (const auto& e : b.entities) {
            if (!pruned.entity(e.entity_id)) {
                bool linked = std::any_of(b.links.begin(), b.links.end(),
                                          [&](const Link& l) { return l.entity_id == e.entity_id; });
                pruned.diagnostics.push_back(
                    {"ENTITY_PRUNED", e.entity_id,
                     "'" + e.label + "' " +
                         (linked ? "is provisional with no points and fewer than two mentions"
                                 : "has no direct reference or related passage")});
            }
        }
        b = std::move(pruned);
    }

    PipelineResult result;
    result.validation = linkgraph::validate_bundle(b, doc, options.references);

    std::size_t annotated = 0, points = 0;
    Json figs = Json::array();
    for (const auto& w : work) {
        if (w.identified) ++annotated;
        std::size_t fig_points = 0;
        for (const auto& e : b.entities) {
            if (e.figure_number == w.figure_number) fig_points += e.points.size();
        }
        points += fig_points;
        figs.push_back({{"figure_number", w.figure_number},
                        {"status", w.identified ? "ok" : "failed"},
                        {"points", fig_points},
                        {"stages", w.stages}});
    }
    result.report = {{"doc_id", doc.doc_id},
                     {"figures", figs},
                     {"annotated_figures", annotated},
                     {"mean_points_per_figure", annotated ? static_cast<double>(points) / annotated : 0.0},
                     {"diagnostics", b.diagnostics.size()},
                     {"validation", linkgraph::report_to_json(result.validation)}};
    result.bundle = std::move(b);

    if (!figures.empty() && annotated == 0) {
        throw PipelineError("no figure could be annotated", result.report);
    }
    if (!result.validation.ok()) {
        const auto& f = result.validation.errors.front();
        throw PipelineError(
            "assembled bundle failed validation: " + f.code + " " + f.subject_id + " " + f.message, result.report);
    }
    return result;
}

}  // namespace crossdoc::pipeline
