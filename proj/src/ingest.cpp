#include "crossdoc/ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <map>
#include <regex>
#include <set>

#include "crossdoc/digest.hpp"
#include "crossdoc/error.hpp"

namespace crossdoc::ingest {

namespace {

using html::NodeKind;
using html::Tree;

constexpr std::array<std::string_view, 6> kPassageTags = {"p", "li", "dd", "dt", "blockquote", "pre"};
constexpr std::array<std::string_view, 12> kSkipSubtree = {
    "script", "style", "noscript", "template", "head", "nav", "aside", "footer", "header", "svg", "form", "button"};

template <std::size_t N>
bool one_of(std::string_view tag, const std::array<std::string_view, N>& set) {
    return std::find(set.begin(), set.end(), tag) != set.end();
}

bool is_passage_tag(std::string_view tag) { return one_of(tag, kPassageTags); }

bool is_figure_container(const html::Node& n) {
    return n.kind == NodeKind::Element && (n.tag == "figure" || (n.tag == "div" && n.has_class("figure")));
}

std::size_t find_descendant(const Tree& tree, std::size_t start, bool (*pred)(const html::Node&)) {
    std::size_t found = html::npos;
    tree.walk(start, [&](std::size_t i) {
        if (found != html::npos) return false;
        if (i != start && pred(tree.node(i))) {
            found = i;
            return false;
        }
        return true;
    });
    return found;
}

bool is_image(const html::Node& n) { return n.kind == NodeKind::Element && n.tag == "img"; }

bool is_caption(const html::Node& n) {
    return n.kind == NodeKind::Element &&
           (n.tag == "figcaption" || n.has_class("caption") || n.has_class("figcaption"));
}

bool is_passage_node(const html::Node& n) { return n.kind == NodeKind::Element && is_passage_tag(n.tag); }

bool contains_passage(const Tree& tree, std::size_t start) {
    bool found = false;
    tree.walk(start, [&](std::size_t i) {
        if (found) return false;
        const auto& n = tree.node(i);
        if (i != start && (is_figure_container(n) || one_of(std::string_view(n.tag), kSkipSubtree))) return false;
        if (i != start && is_passage_node(n)) {
            found = true;
            return false;
        }
        return true;
    });
    return found;
}

std::optional<int> leading_figure_number(std::string_view caption) {
    static const std::regex re(R"(^\s*(?:figure|fig\.?)\s*(\d+))", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(caption.begin(), caption.end(), m, re)) {
        return std::atoi(m[1].str().c_str());
    }
    return std::nullopt;
}

std::optional<int> trailing_number(const std::string* id) {
    if (!id || id->empty()) return std::nullopt;
    std::size_t e = id->size();
    std::size_t b = e;
    while (b > 0 && std::isdigit(static_cast<unsigned char>((*id)[b - 1]))) --b;
    if (b == e || e - b > 6) return std::nullopt;
    int v = std::atoi(id->c_str() + b);
    return v > 0 ? std::optional<int>(v) : std::nullopt;
}

std::string regex_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::string_view(R"(\^$.|?*+()[]{}-)").find(c) != std::string_view::npos) out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

constexpr std::array<std::string_view, 36> kAbbreviations = {
    "fig", "figs", "eq",  "eqs", "sec",  "secs", "tab",  "ref",  "refs", "al",   "e.g",  "i.e",
    "cf",  "vs",   "approx", "resp", "no", "nos", "dr", "mr",  "mrs",  "ms",   "prof", "st",
    "vol", "pp",   "ch",  "app", "appx", "ca",   "incl", "viz",  "jr",   "sr",   "est",  "max"};

bool is_abbreviation_before(std::string_view text, std::size_t dot) {
    std::size_t b = dot;
    while (b > 0 && (std::isalpha(static_cast<unsigned char>(text[b - 1])) || text[b - 1] == '.')) --b;
    std::string token(text.substr(b, dot - b));
    if (token.empty()) return false;
    if (token.size() == 1 && std::isupper(static_cast<unsigned char>(token[0]))) return true;  // initial
    for (auto& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), token) != kAbbreviations.end();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

bool can_start_sentence(unsigned char c) {
    return std::isupper(c) || std::isdigit(c) || c >= 0x80 || c == '"' || c == '\'' || c == '(' || c == '[';
}

}  // namespace

bool is_valid_utf8(std::string_view bytes) {
    std::size_t i = 0;
    while (i < bytes.size()) {
        unsigned char c = static_cast<unsigned char>(bytes[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        if (len == 0 || i + len > bytes.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(bytes[i + k]) >> 6) != 0x2) return false;
        }
        i += len;
    }
    return true;
}

const Figure* Document::figure(int figure_number) const {
    for (const auto& f : figures) {
        if (f.figure_number == figure_number) return &f;
    }
    return nullptr;
}

const Passage* Document::passage(std::size_t index) const {
    return index < passages.size() ? &passages[index] : nullptr;
}

Layout layout_document(std::string_view source) {
    Layout layout;
    layout.tree = Tree::parse(source);
    const Tree& tree = layout.tree;

    layout.body = tree.root();
    for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
        if (tree.node(i).kind == NodeKind::Element && tree.node(i).tag == "body") {
            layout.body = i;
            break;
        }
    }

    std::map<std::string, int> id_counts;
    for (const auto& n : tree.nodes()) {
        if (const std::string* id = n.attribute("id")) ++id_counts[*id];
    }
    auto unique_id = [&](const html::Node& n) {
        const std::string* id = n.attribute("id");
        return id && !id->empty() && id_counts[*id] == 1;
    };

    tree.walk(layout.body, [&](std::size_t i) {
        const auto& n = tree.node(i);
        if (n.kind != NodeKind::Element) return false;
        if (i != layout.body && one_of(std::string_view(n.tag), kSkipSubtree)) return false;
        if (is_figure_container(n)) {
            std::size_t img = find_descendant(tree, i, &is_image);
            std::size_t cap = find_descendant(tree, i, &is_caption);
            if (img != html::npos && cap != html::npos &&
                !html::extract_text(tree, source, cap).text.empty()) {
                layout.figure_nodes.push_back({i, img, cap, unique_id(n)});
            }
            return false;
        }
        if (is_passage_tag(n.tag) && !contains_passage(tree, i)) {
            if (html::extract_text(tree, source, i).text.empty()) return false;
            layout.passage_nodes.push_back(i);
            layout.passage_has_id.push_back(unique_id(n));
            return false;
        }
        return true;
    });
    return layout;
}

Document parse_document(std::string_view html_bytes) {
    if (html_bytes.empty()) throw Error(ErrorCode::NoContent, "empty input");
    if (!is_valid_utf8(html_bytes)) throw Error(ErrorCode::MalformedInput, "input is not valid UTF-8");

    Layout layout = layout_document(html_bytes);
    if (layout.tree.element_count() == 0) {
        throw Error(ErrorCode::MalformedInput, "no HTML elements found");
    }
    const Tree& tree = layout.tree;

    Document doc;
    doc.source.assign(html_bytes);
    std::string hex = sha256_hex(html_bytes);
    doc.source_hash = "sha256:" + hex;
    doc.doc_id = "doc-" + hex.substr(0, 12);

    // Passages and figures are interleaved in reading order; recover each
    // figure's position from the passages preceding it in the source.
    std::vector<std::size_t> passage_starts;
    for (std::size_t k = 0; k < layout.passage_nodes.size(); ++k) {
        const auto& n = tree.node(layout.passage_nodes[k]);
        Passage p;
        p.index = doc.passages.size();
        p.text = html::extract_text(tree, html_bytes, layout.passage_nodes[k]).text;
        p.html_span = n.outer;
        p.element_id = layout.passage_has_id[k] ? *n.attribute("id") : "cd-p" + std::to_string(p.index);
        doc.passages.push_back(std::move(p));
        passage_starts.push_back(n.outer.begin);
    }

    std::set<int> used_numbers;
    std::vector<std::optional<int>> printed;
    for (const auto& fn : layout.figure_nodes) {
        std::string caption = html::extract_text(tree, html_bytes, fn.caption).text;
        auto number = leading_figure_number(caption);
        if (!number) number = trailing_number(tree.node(fn.figure).attribute("id"));
        printed.push_back(number);
    }
    int ordinal = 0;
    for (std::size_t k = 0; k < layout.figure_nodes.size(); ++k) {
        const auto& fn = layout.figure_nodes[k];
        const auto& fig_node = tree.node(fn.figure);
        Figure f;
        f.caption = html::extract_text(tree, html_bytes, fn.caption).text;
        ++ordinal;
        int number = printed[k].value_or(ordinal);
        if (number <= 0 || used_numbers.count(number)) {
            number = used_numbers.empty() ? 1 : *used_numbers.rbegin() + 1;
        }
        used_numbers.insert(number);
        f.figure_number = number;
        f.element_id = fn.has_id ? *fig_node.attribute("id") : "cd-fig" + std::to_string(number);
        const std::string* src = tree.node(fn.image).attribute("src");
        f.image_ref = src ? *src : std::string();
        f.caption_sentences = split_caption_sentences(f.caption);
        f.html_span = fig_node.outer;
        f.position_index = static_cast<std::size_t>(
            std::lower_bound(passage_starts.begin(), passage_starts.end(), fig_node.outer.begin) -
            passage_starts.begin());
        doc.figures.push_back(std::move(f));
    }

    if (doc.passages.empty() && doc.figures.empty()) {
        throw Error(ErrorCode::NoContent, "no passages or captioned figures found");
    }
    return doc;
}

ReferencePattern::ReferencePattern() {
    // "{N}" is substituted with the figure number. The tail admits a single
    // sub-figure letter ("3b", "3(b)") but rejects longer numbers and
    // dotted numbering ("30", "3.2").
    patterns_.push_back(R"(\b(?:figure|fig\.?|figs\.?|figures)(?:\s|\xC2\xA0)*{N}(?:[a-z](?![a-z0-9])|\([a-z]\))?(?!\d|\.\d))");
}

void ReferencePattern::add_pattern(std::string pattern) { patterns_.push_back(std::move(pattern)); }

std::vector<Span> ReferencePattern::find(std::string_view text, int figure_number) const {
    std::vector<Span> spans;
    const std::string number = std::to_string(figure_number);
    for (const auto& p : patterns_) {
        std::string expr = p;
        for (std::size_t pos = expr.find("{N}"); pos != std::string::npos; pos = expr.find("{N}", pos)) {
            expr.replace(pos, 3, regex_escape(number));
            pos += number.size();
        }
        std::regex re(expr, std::regex::ECMAScript | std::regex::icase);
        using It = std::string_view::const_iterator;
        for (std::regex_iterator<It> it(text.begin(), text.end(), re), end; it != end; ++it) {
            std::size_t b = static_cast<std::size_t>(it->position(0));
            spans.push_back({b, b + static_cast<std::size_t>(it->length(0))});
        }
    }
    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.begin != b.begin ? a.begin < b.begin : a.end > b.end; });
    // Overlapping matches from several patterns collapse to the first.
    std::vector<Span> merged;
    for (const auto& s : spans) {
        if (!merged.empty() && s.begin < merged.back().end) continue;
        merged.push_back(s);
    }
    return merged;
}

const ReferencePattern& default_reference_pattern() {
    static const ReferencePattern pattern;
    return pattern;
}

std::vector<PassageRef> find_figure_references(const Document& doc, int figure_number,
                                               const ReferencePattern& pattern) {
    if (figure_number < 1) throw Error(ErrorCode::InvalidArgument, "figure number must be >= 1");
    std::vector<PassageRef> refs;
    for (const auto& p : doc.passages) {
        for (const auto& span : pattern.find(p.text, figure_number)) {
            refs.push_back({p.index, span, p.text.substr(span.begin, span.size())});
        }
    }
    return refs;
}

std::vector<Span> sentence_spans(std::string_view text) {
    std::vector<Span> spans;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c != '.' && c != '!' && c != '?') {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
        while (j < text.size() && (text[j] == '"' || text[j] == '\'' || text[j] == ')' || text[j] == ']')) ++j;
        // Closing curly quotes (U+2019, U+201D).
        while (j + 2 < text.size() && static_cast<unsigned char>(text[j]) == 0xE2 &&
               static_cast<unsigned char>(text[j + 1]) == 0x80 &&
               (static_cast<unsigned char>(text[j + 2]) == 0x99 || static_cast<unsigned char>(text[j + 2]) == 0x9D))
            j += 3;
        std::size_t ws = j;
        while (ws < text.size() && is_space(text[ws])) ++ws;
        bool boundary = ws > j && ws < text.size() && can_start_sentence(static_cast<unsigned char>(text[ws]));
        if (boundary && c == '.' && j == i + 1 && is_abbreviation_before(text, i)) boundary = false;
        if (boundary) {
            spans.push_back({start, ws});
            start = ws;
        }
        i = std::max(j, i + 1);
    }
    if (start < text.size() || spans.empty()) spans.push_back({start, text.size()});
    return spans;
}

std::vector<std::string> split_caption_sentences(std::string_view caption) {
    if (caption.empty()) throw Error(ErrorCode::EmptyCaption, "caption is empty");
    std::vector<std::string> out;
    for (const auto& s : sentence_spans(caption)) out.emplace_back(caption.substr(s.begin, s.size()));
    return out;
}

std::size_t paragraph_distance(const Document& doc, int figure_number, std::size_t passage_index) {
    const Figure* f = doc.figure(figure_number);
    if (!f) throw Error(ErrorCode::UnknownFigure, "figure " + std::to_string(figure_number));
    if (!doc.passage(passage_index)) throw Error(ErrorCode::UnknownPassage, "passage " + std::to_string(passage_index));
    return f->position_index > passage_index ? f->position_index - passage_index : passage_index - f->position_index;
}

}  // namespace crossdoc::ingest
