#include "crossdoc/html.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <utility>

namespace crossdoc::html {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool iequals_at(std::string_view hay, std::size_t pos, std::string_view needle) {
    if (pos + needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i < needle.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(hay[pos + i])) !=
            std::tolower(static_cast<unsigned char>(needle[i])))
            return false;
    }
    return true;
}

template <std::size_t N>
bool one_of(std::string_view tag, const std::array<std::string_view, N>& set) {
    return std::find(set.begin(), set.end(), tag) != set.end();
}

constexpr std::array<std::string_view, 6> kRawText = {"script", "style", "textarea", "title", "xmp",
                                                      "plaintext"};

// Start tags that implicitly close an open <p>.
constexpr std::array<std::string_view, 32> kClosesP = {
    "address", "article", "aside",  "blockquote", "details", "div",     "dl",     "fieldset",
    "figcaption", "figure", "footer", "form",     "h1",      "h2",      "h3",     "h4",
    "h5",      "h6",      "header", "hr",         "main",    "menu",    "nav",    "ol",
    "p",       "pre",     "section", "table",     "ul",      "li",      "dd",     "dt"};

// Elements that bound the search for an implicitly closable element.
constexpr std::array<std::string_view, 20> kScopeBoundary = {
    "#document", "html",   "body",  "div",     "section", "article", "aside",
    "figure",    "table",  "td",    "th",      "blockquote", "main", "header",
    "footer",    "nav",    "figcaption", "details", "button", "template"};

// Elements that separate words when extracting text.
constexpr std::array<std::string_view, 36> kBlockLike = {
    "address", "article", "aside", "blockquote", "br",    "dd",     "div",    "dl",    "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1",    "h2",     "h3",    "h4",
    "h5",      "h6",      "header", "hr",       "li",     "main",  "nav",    "ol",    "p",
    "pre",     "section", "table",  "td",       "th",     "tr",    "ul",     "img",   "caption"};

constexpr std::array<std::string_view, 6> kSkipText = {"script", "style", "noscript", "template",
                                                       "head",   "svg"};

struct NamedEntity {
    std::string_view name;
    char32_t cp;
};

constexpr NamedEntity kEntities[] = {
    {"amp", '&'},      {"lt", '<'},       {"gt", '>'},       {"quot", '"'},     {"apos", '\''},
    {"nbsp", 0xA0},    {"ndash", 0x2013}, {"mdash", 0x2014}, {"hellip", 0x2026}, {"lsquo", 0x2018},
    {"rsquo", 0x2019}, {"ldquo", 0x201C}, {"rdquo", 0x201D}, {"copy", 0xA9},    {"reg", 0xAE},
    {"trade", 0x2122}, {"times", 0xD7},   {"minus", 0x2212}, {"deg", 0xB0},     {"middot", 0xB7},
    {"bull", 0x2022},  {"shy", 0xAD},     {"thinsp", 0x2009}, {"ensp", 0x2002}, {"emsp", 0x2003},
    {"zwnj", 0x200C},  {"zwj", 0x200D},   {"laquo", 0xAB},   {"raquo", 0xBB},   {"sect", 0xA7},
    {"para", 0xB6},    {"plusmn", 0xB1},  {"le", 0x2264},    {"ge", 0x2265},    {"rarr", 0x2192},
    {"larr", 0x2190},  {"alpha", 0x3B1},  {"beta", 0x3B2},   {"gamma", 0x3B3},  {"delta", 0x3B4},
    {"lambda", 0x3BB}, {"mu", 0x3BC},     {"pi", 0x3C0},     {"sigma", 0x3C3},  {"eacute", 0xE9},
};

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes a character reference starting at raw[pos] == '&'. Returns the
// number of bytes consumed (0 if this is not a reference).
std::size_t decode_reference(std::string_view raw, std::size_t pos, std::string& out) {
    std::size_t semi = raw.find(';', pos + 1);
    if (semi == std::string_view::npos || semi - pos > 12 || semi == pos + 1) return 0;
    std::string_view body = raw.substr(pos + 1, semi - pos - 1);
    char32_t cp = 0;
    if (body[0] == '#') {
        unsigned long value = 0;
        const char* first = body.data() + 1;
        const char* last = body.data() + body.size();
        int base = 10;
        if (first != last && (*first == 'x' || *first == 'X')) {
            ++first;
            base = 16;
        }
        if (first == last) return 0;
        auto [ptr, ec] = std::from_chars(first, last, value, base);
        if (ec != std::errc() || ptr != last || value == 0 || value > 0x10FFFF) return 0;
        cp = static_cast<char32_t>(value);
    } else {
        bool found = false;
        for (const auto& e : kEntities) {
            if (e.name == body) {
                cp = e.cp;
                found = true;
                break;
            }
        }
        if (!found) return 0;
    }
    append_utf8(out, cp);
    return semi - pos + 1;
}

struct Builder {
    std::string_view src;
    std::vector<Node> nodes;
    std::vector<std::size_t> open;
    std::size_t elements = 0;

    std::size_t add(Node n) {
        std::size_t parent = open.back();
        n.parent = parent;
        nodes.push_back(std::move(n));
        std::size_t idx = nodes.size() - 1;
        nodes[parent].children.push_back(idx);
        return idx;
    }

    void close_top(std::size_t at, std::optional<ByteRange> end_tag) {
        std::size_t idx = open.back();
        open.pop_back();
        nodes[idx].end_tag = end_tag;
        nodes[idx].outer.end = end_tag ? end_tag->end : at;
        if (nodes[idx].outer.end < nodes[idx].start_tag.end) nodes[idx].outer.end = nodes[idx].start_tag.end;
    }

    // Closes the nearest open `tag` if it sits above any scope boundary.
    template <std::size_t N>
    void close_implied(std::string_view tag, std::size_t at, const std::array<std::string_view, N>& boundary) {
        for (std::size_t k = open.size(); k-- > 1;) {
            const auto& t = nodes[open[k]].tag;
            if (t == tag) {
                while (open.size() > k) close_top(at, std::nullopt);
                return;
            }
            if (one_of(t, boundary)) return;
        }
    }

    void text(std::size_t b, std::size_t e) {
        if (b >= e) return;
        Node n;
        n.kind = NodeKind::Text;
        n.start_tag = {b, e};
        n.outer = {b, e};
        add(std::move(n));
    }

    void comment(std::size_t b, std::size_t e) {
        Node n;
        n.kind = NodeKind::Comment;
        n.start_tag = {b, e};
        n.outer = {b, e};
        add(std::move(n));
    }

    // Parses a start tag at src[pos] == '<'. Returns the end position.
    std::size_t start_tag(std::size_t pos) {
        std::size_t i = pos + 1;
        std::size_t name_begin = i;
        while (i < src.size() && !is_space(src[i]) && src[i] != '>' && src[i] != '/') ++i;
        Node n;
        n.kind = NodeKind::Element;
        n.tag = lower(src.substr(name_begin, i - name_begin));
        bool self_closing = false;
        while (i < src.size() && src[i] != '>') {
            if (is_space(src[i])) {
                ++i;
                continue;
            }
            if (src[i] == '/') {
                self_closing = (i + 1 < src.size() && src[i + 1] == '>');
                ++i;
                continue;
            }
            std::size_t an = i;
            while (i < src.size() && !is_space(src[i]) && src[i] != '=' && src[i] != '>' &&
                   !(src[i] == '/' && i + 1 < src.size() && src[i + 1] == '>'))
                ++i;
            Attribute attr;
            attr.name = lower(src.substr(an, i - an));
            while (i < src.size() && is_space(src[i])) ++i;
            if (i < src.size() && src[i] == '=') {
                ++i;
                while (i < src.size() && is_space(src[i])) ++i;
                if (i < src.size() && (src[i] == '"' || src[i] == '\'')) {
                    char q = src[i++];
                    std::size_t vb = i;
                    while (i < src.size() && src[i] != q) ++i;
                    attr.value = decode_entities(src.substr(vb, i - vb));
                    if (i < src.size()) ++i;
                } else {
                    std::size_t vb = i;
                    while (i < src.size() && !is_space(src[i]) && src[i] != '>') ++i;
                    attr.value = decode_entities(src.substr(vb, i - vb));
                }
            }
            if (!attr.name.empty()) n.attributes.push_back(std::move(attr));
        }
        std::size_t end = i < src.size() ? i + 1 : src.size();
        n.start_tag = {pos, end};
        n.outer = {pos, end};

        if (one_of(n.tag, kClosesP)) close_implied("p", pos, kScopeBoundary);
        if (n.tag == "li") {
            close_implied("li", pos, std::array<std::string_view, 4>{"ul", "ol", "menu", "#document"});
        } else if (n.tag == "dt" || n.tag == "dd") {
            close_implied("dt", pos, std::array<std::string_view, 2>{"dl", "#document"});
            close_implied("dd", pos, std::array<std::string_view, 2>{"dl", "#document"});
        } else if (n.tag == "td" || n.tag == "th") {
            close_implied("td", pos, std::array<std::string_view, 3>{"tr", "table", "#document"});
            close_implied("th", pos, std::array<std::string_view, 3>{"tr", "table", "#document"});
        } else if (n.tag == "tr") {
            close_implied("tr", pos, std::array<std::string_view, 2>{"table", "#document"});
        }

        std::string tag = n.tag;
        std::size_t idx = add(std::move(n));
        ++elements;
        if (self_closing || is_void_element(tag)) {
            return end;
        }
        open.push_back(idx);
        if (one_of(std::string_view(tag), kRawText)) {
            std::string closing = "</" + tag;
            std::size_t j = end;
            while (j < src.size() && !iequals_at(src, j, closing)) ++j;
            text(end, j);
            if (j >= src.size()) return src.size();
            std::size_t close_end = src.find('>', j);
            close_end = close_end == std::string_view::npos ? src.size() : close_end + 1;
            close_top(j, ByteRange{j, close_end});
            return close_end;
        }
        return end;
    }

    std::size_t end_tag(std::size_t pos) {
        std::size_t i = pos + 2;
        std::size_t nb = i;
        while (i < src.size() && !is_space(src[i]) && src[i] != '>') ++i;
        std::string tag = lower(src.substr(nb, i - nb));
        std::size_t gt = src.find('>', i);
        std::size_t end = gt == std::string_view::npos ? src.size() : gt + 1;
        for (std::size_t k = open.size(); k-- > 1;) {
            if (nodes[open[k]].tag == tag) {
                while (open.size() > k + 1) close_top(pos, std::nullopt);
                close_top(pos, ByteRange{pos, end});
                break;
            }
        }
        return end;
    }
};

}  // namespace

const std::string* Node::attribute(std::string_view name) const {
    for (const auto& a : attributes) {
        if (a.name == name) return &a.value;
    }
    return nullptr;
}

bool Node::has_class(std::string_view cls) const {
    const std::string* value = attribute("class");
    if (!value) return false;
    std::string_view v = *value;
    std::size_t i = 0;
    while (i < v.size()) {
        while (i < v.size() && is_space(v[i])) ++i;
        std::size_t b = i;
        while (i < v.size() && !is_space(v[i])) ++i;
        if (v.substr(b, i - b) == cls) return true;
    }
    return false;
}

bool is_void_element(std::string_view tag) {
    static constexpr std::array<std::string_view, 14> kVoid = {
        "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"};
    return one_of(tag, kVoid);
}

Tree Tree::parse(std::string_view source) {
    Builder b{source, {}, {}, 0};
    Node root;
    root.tag = "#document";
    root.outer = {0, source.size()};
    root.start_tag = {0, 0};
    b.nodes.push_back(std::move(root));
    b.open.push_back(0);

    std::size_t pos = 0;
    std::size_t text_begin = 0;
    while (pos < source.size()) {
        if (source[pos] != '<') {
            ++pos;
            continue;
        }
        std::size_t next = pos + 1;
        bool handled = false;
        if (source.compare(pos, 4, "<!--") == 0) {
            b.text(text_begin, pos);
            std::size_t e = source.find("-->", pos + 4);
            e = e == std::string_view::npos ? source.size() : e + 3;
            b.comment(pos, e);
            next = e;
            handled = true;
        } else if (next < source.size() && (source[next] == '!' || source[next] == '?')) {
            b.text(text_begin, pos);
            std::size_t e = source.find('>', pos);
            e = e == std::string_view::npos ? source.size() : e + 1;
            b.comment(pos, e);
            next = e;
            handled = true;
        } else if (next + 1 < source.size() && source[next] == '/' &&
                   std::isalpha(static_cast<unsigned char>(source[next + 1]))) {
            b.text(text_begin, pos);
            next = b.end_tag(pos);
            handled = true;
        } else if (next < source.size() && std::isalpha(static_cast<unsigned char>(source[next]))) {
            b.text(text_begin, pos);
            next = b.start_tag(pos);
            handled = true;
        }
        if (handled) {
            pos = next;
            text_begin = next;
        } else {
            ++pos;
        }
    }
    b.text(text_begin, source.size());
    while (b.open.size() > 1) b.close_top(source.size(), std::nullopt);

    Tree t;
    t.nodes_ = std::move(b.nodes);
    t.element_count_ = b.elements;
    return t;
}

bool Tree::has_ancestor(std::size_t i, std::string_view tag) const {
    for (std::size_t p = nodes_[i].parent; p != npos; p = nodes_[p].parent) {
        if (nodes_[p].tag == tag) return true;
    }
    return false;
}

std::string decode_entities(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
        if (raw[i] == '&') {
            std::size_t used = decode_reference(raw, i, out);
            if (used) {
                i += used;
                continue;
            }
        }
        out.push_back(raw[i++]);
    }
    return out;
}

MappedText extract_text(const Tree& tree, std::string_view source, std::size_t start) {
    MappedText out;
    bool pending = false;
    ByteRange pending_range;

    auto soft_break = [&](std::size_t at) {
        if (!pending) {
            pending = true;
            pending_range = {at, at};
        }
    };
    auto emit = [&](std::string_view bytes, ByteRange range) {
        if (pending && !out.text.empty()) {
            out.text.push_back(' ');
            out.source_of.push_back(pending_range);
        }
        pending = false;
        for (char c : bytes) {
            out.text.push_back(c);
            out.source_of.push_back(range);
        }
    };

    // Post-order hooks for block ends are emulated by pushing a marker.
    struct Frame {
        std::size_t node;
        bool exit;
    };
    std::vector<Frame> stack{{start, false}};
    while (!stack.empty()) {
        Frame f = stack.back();
        stack.pop_back();
        const Node& n = tree.node(f.node);
        if (f.exit) {
            soft_break(n.outer.end);
            continue;
        }
        if (n.kind == NodeKind::Comment) continue;
        if (n.kind == NodeKind::Text) {
            std::string_view raw = source.substr(n.start_tag.begin, n.start_tag.size());
            std::size_t base = n.start_tag.begin;
            std::string decoded;
            for (std::size_t i = 0; i < raw.size();) {
                if (raw[i] == '&') {
                    decoded.clear();
                    std::size_t used = decode_reference(raw, i, decoded);
                    if (used) {
                        ByteRange r{base + i, base + i + used};
                        if (decoded.size() == 1 && is_space(decoded[0])) {
                            if (!pending) {
                                pending = true;
                                pending_range = r;
                            }
                        } else {
                            emit(decoded, r);
                        }
                        i += used;
                        continue;
                    }
                }
                if (is_space(raw[i])) {
                    if (!pending) {
                        pending = true;
                        pending_range = {base + i, base + i + 1};
                    }
                    ++i;
                    continue;
                }
                emit(raw.substr(i, 1), {base + i, base + i + 1});
                ++i;
            }
            continue;
        }
        if (f.node != start && one_of(std::string_view(n.tag), kSkipText)) continue;
        bool block = one_of(std::string_view(n.tag), kBlockLike);
        if (block) {
            soft_break(n.outer.begin);
            stack.push_back({f.node, true});
        }
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back({*it, false});
    }
    return out;
}

std::vector<ByteRange> source_segments(const MappedText& mapped, std::size_t begin, std::size_t end) {
    std::vector<ByteRange> pieces;
    end = std::min(end, mapped.source_of.size());
    std::optional<ByteRange> cur;
    ByteRange last;
    for (std::size_t k = begin; k < end; ++k) {
        ByteRange r = mapped.source_of[k];
        if (r.empty()) {
            if (cur) pieces.push_back(*cur);
            cur.reset();
            continue;
        }
        bool same_char = cur && r == last;
        if (same_char) continue;
        last = r;
        if (cur && r.begin == cur->end) {
            cur->end = r.end;
        } else {
            if (cur) pieces.push_back(*cur);
            cur = r;
        }
    }
    if (cur) pieces.push_back(*cur);
    return pieces;
}

std::string escape_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string escape_attribute(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

void Rewriter::insert(std::size_t pos, std::string text, int order) {
    edits_.push_back({pos, 0, order, edits_.size(), std::move(text)});
}

void Rewriter::replace(ByteRange range, std::string text) {
    edits_.push_back({range.begin, range.size(), 0, edits_.size(), std::move(text)});
}

void Rewriter::remove(ByteRange range) {
    // Removals sort first at their position so nested edits are dropped.
    edits_.push_back({range.begin, range.size(), -1000, edits_.size(), {}});
}

std::string Rewriter::apply() const {
    std::vector<const Edit*> sorted;
    sorted.reserve(edits_.size());
    for (const auto& e : edits_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](const Edit* a, const Edit* b) {
        if (a->pos != b->pos) return a->pos < b->pos;
        if (a->order != b->order) return a->order < b->order;
        return a->seq < b->seq;
    });
    std::string out;
    out.reserve(source_.size() + source_.size() / 4);
    std::size_t cursor = 0;
    for (const Edit* e : sorted) {
        if (e->pos < cursor) continue;
        out.append(source_.substr(cursor, e->pos - cursor));
        out += e->text;
        cursor = e->pos + e->erase;
    }
    if (cursor < source_.size()) out.append(source_.substr(cursor));
    return out;
}

}  // namespace crossdoc::html
