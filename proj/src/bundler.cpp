#include "crossdoc/bundler.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>

#include "crossdoc/error.hpp"
#include "crossdoc/html.hpp"

namespace crossdoc::bundler {

using linkgraph::Entity;
using linkgraph::EntityDescription;
using linkgraph::FigureRecord;
using linkgraph::Link;
using linkgraph::LocationKind;
using linkgraph::TextMention;

// ---- JSON -----------------------------------------------------------------

namespace {

void merge_extra(Json& out, const Json& extra) {
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        if (!out.contains(it.key())) out[it.key()] = it.value();
    }
}

Json points_json(const std::vector<linkgraph::NormPoint>& pts) {
    Json a = Json::array();
    for (const auto& p : pts) a.push_back({{"x", p.x}, {"y", p.y}});
    return a;
}

}  // namespace

Json bundle_to_json(const AugmentationBundle& b) {
    Json j;
    j["format_version"] = b.format_version;
    j["doc_id"] = b.doc_id;
    j["source_hash"] = b.source_hash;

    Json figures = Json::array();
    for (const auto& f : b.figures) {
        Json o;
        o["figure_number"] = f.figure_number;
        o["element_id"] = f.element_id;
        o["image_ref"] = f.image_ref;
        if (f.width) o["width"] = *f.width;
        if (f.height) o["height"] = *f.height;
        merge_extra(o, f.extra);
        figures.push_back(std::move(o));
    }
    j["figures"] = std::move(figures);

    Json entities = Json::array();
    for (const auto& e : b.entities) {
        Json o;
        o["entity_id"] = e.entity_id;
        o["figure_number"] = e.figure_number;
        o["label"] = e.label;
        o["provisional"] = e.provisional;
        o["points"] = points_json(e.points);
        o["mentions"] = e.mentions;
        merge_extra(o, e.extra);
        entities.push_back(std::move(o));
    }
    j["entities"] = std::move(entities);

    Json mentions = Json::array();
    for (const auto& m : b.mentions) {
        Json o;
        o["mention_id"] = m.mention_id;
        o["entity_id"] = m.entity_id;
        o["anchor_id"] = m.anchor_id;
        o["phrase"] = m.phrase;
        Json loc;
        if (m.location.kind == LocationKind::Caption) {
            loc["kind"] = "caption";
            loc["figure_number"] = m.location.passage_or_figure;
        } else {
            loc["kind"] = "body";
            loc["passage_index"] = m.location.passage_or_figure;
        }
        if (m.location.sentence_index) loc["sentence_index"] = *m.location.sentence_index;
        loc["start"] = m.location.char_span.begin;
        loc["end"] = m.location.char_span.end;
        o["location"] = std::move(loc);
        merge_extra(o, m.extra);
        mentions.push_back(std::move(o));
    }
    j["mentions"] = std::move(mentions);

    Json links = Json::array();
    for (const auto& l : b.links) {
        Json o;
        o["link_id"] = l.link_id;
        o["entity_id"] = l.entity_id;
        o["kind"] = l.kind;
        Json target = Json::object();
        if (l.target.mention_id) target["mention_id"] = *l.target.mention_id;
        if (l.target.passage_index) target["passage_index"] = *l.target.passage_index;
        o["target"] = std::move(target);
        merge_extra(o, l.extra);
        links.push_back(std::move(o));
    }
    j["links"] = std::move(links);

    Json descriptions = Json::array();
    for (const auto& d : b.descriptions) {
        Json o;
        o["entity_id"] = d.entity_id;
        o["text"] = d.text;
        o["related_passage_ids"] = d.related_passage_ids;
        o["unresolved_related"] = d.unresolved_related;
        if (d.manual_override) o["manual_override"] = *d.manual_override;
        merge_extra(o, d.extra);
        descriptions.push_back(std::move(o));
    }
    j["descriptions"] = std::move(descriptions);

    Json scans = Json::object();
    for (const auto& [fig, ids] : b.scan_sequences) scans[std::to_string(fig)] = ids;
    j["scan_sequences"] = std::move(scans);

    Json diags = Json::array();
    for (const auto& d : b.diagnostics) diags.push_back({{"code", d.code}, {"subject", d.subject}, {"message", d.message}});
    j["diagnostics"] = std::move(diags);

    merge_extra(j, b.extra);
    return j;
}

namespace {

// Walks a JSON value, tracking the pointer for error messages.
class Reader {
public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorCode::SchemaViolation, (path_.empty() ? "/" : path_) + ": " + what);
    }

    const Json& value() const { return j_; }
    const std::string& path() const { return path_; }

    Reader object() const {
        if (!j_.is_object()) fail("expected an object");
        return *this;
    }

    Reader at(std::string_view key) const {
        if (!j_.is_object()) fail("expected an object");
        auto it = j_.find(std::string(key));
        if (it == j_.end()) Reader(j_, path_ + "/" + escape(key)).fail("missing required field");
        return Reader(*it, path_ + "/" + escape(key));
    }

    bool has(std::string_view key) const { return j_.is_object() && j_.contains(std::string(key)); }

    std::vector<Reader> items() const {
        if (!j_.is_array()) fail("expected an array");
        std::vector<Reader> out;
        for (std::size_t i = 0; i < j_.size(); ++i) out.emplace_back(j_[i], path_ + "/" + std::to_string(i));
        return out;
    }

    std::string str() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }

    long long integer() const {
        if (!j_.is_number_integer()) fail("expected an integer");
        return j_.get<long long>();
    }

    int small_int() const {
        long long v = integer();
        if (v < INT32_MIN || v > INT32_MAX) fail("integer out of range");
        return static_cast<int>(v);
    }

    std::size_t offset() const {
        long long v = integer();
        if (v < 0) fail("expected a non-negative integer");
        return static_cast<std::size_t>(v);
    }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        return j_.get<double>();
    }

    bool boolean() const {
        if (!j_.is_boolean()) fail("expected a boolean");
        return j_.get<bool>();
    }

    std::vector<std::string> strings() const {
        std::vector<std::string> out;
        for (const auto& r : items()) out.push_back(r.str());
        return out;
    }

    // Fields not in `known`, for forward compatibility.
    Json extra(std::initializer_list<std::string_view> known) const {
        Json out = Json::object();
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool listed = false;
            for (auto k : known) listed = listed || it.key() == k;
            if (!listed) out[it.key()] = it.value();
        }
        return out;
    }

private:
    static std::string escape(std::string_view key) {
        std::string out;
        for (char c : key) {
            if (c == '~') {
                out += "~0";
            } else if (c == '/') {
                out += "~1";
            } else {
                out += c;
            }
        }
        return out;
    }

    const Json& j_;
    std::string path_;
};

void check_version(const Reader& r) {
    std::string v = r.str();
    int major = 0, minor = 0, patch = 0;
    char tail = 0;
    if (std::sscanf(v.c_str(), "%d.%d.%d%c", &major, &minor, &patch, &tail) != 3) {
        r.fail("format_version is not MAJOR.MINOR.PATCH");
    }
    std::string supported(linkgraph::kBundleFormatVersion);
    if (major != std::stoi(supported.substr(0, supported.find('.')))) {
        throw Error(ErrorCode::VersionUnsupported,
                    "bundle format " + v + " is not supported (this build reads " + supported + ")");
    }
}

}  // namespace

AugmentationBundle bundle_from_json(const Json& j) {
    Reader root = Reader(j, "").object();
    AugmentationBundle b;
    check_version(root.at("format_version"));
    b.format_version = root.at("format_version").str();
    b.doc_id = root.at("doc_id").str();
    b.source_hash = root.at("source_hash").str();

    for (const auto& r : root.at("figures").items()) {
        r.object();
        FigureRecord f;
        f.figure_number = r.at("figure_number").small_int();
        f.element_id = r.at("element_id").str();
        f.image_ref = r.at("image_ref").str();
        if (r.has("width")) f.width = r.at("width").small_int();
        if (r.has("height")) f.height = r.at("height").small_int();
        f.extra = r.extra({"figure_number", "element_id", "image_ref", "width", "height"});
        b.figures.push_back(std::move(f));
    }

    for (const auto& r : root.at("entities").items()) {
        r.object();
        Entity e;
        e.entity_id = r.at("entity_id").str();
        e.figure_number = r.at("figure_number").small_int();
        e.label = r.at("label").str();
        e.provisional = r.has("provisional") ? r.at("provisional").boolean() : false;
        for (const auto& p : r.at("points").items()) {
            p.object();
            e.points.push_back({p.at("x").number(), p.at("y").number()});
        }
        e.mentions = r.at("mentions").strings();
        e.extra = r.extra({"entity_id", "figure_number", "label", "provisional", "points", "mentions"});
        b.entities.push_back(std::move(e));
    }

    for (const auto& r : root.at("mentions").items()) {
        r.object();
        TextMention m;
        m.mention_id = r.at("mention_id").str();
        m.entity_id = r.at("entity_id").str();
        m.anchor_id = r.at("anchor_id").str();
        m.phrase = r.at("phrase").str();
        Reader loc = r.at("location").object();
        std::string kind = loc.at("kind").str();
        if (kind == "caption") {
            m.location.kind = LocationKind::Caption;
            m.location.passage_or_figure = loc.at("figure_number").small_int();
        } else if (kind == "body") {
            m.location.kind = LocationKind::Body;
            m.location.passage_or_figure = loc.at("passage_index").small_int();
        } else {
            loc.at("kind").fail("expected \"caption\" or \"body\"");
        }
        if (loc.has("sentence_index")) m.location.sentence_index = loc.at("sentence_index").small_int();
        m.location.char_span = {loc.at("start").offset(), loc.at("end").offset()};
        if (m.location.char_span.end < m.location.char_span.begin) loc.at("end").fail("end precedes start");
        m.extra = r.extra({"mention_id", "entity_id", "anchor_id", "phrase", "location"});
        b.mentions.push_back(std::move(m));
    }

    for (const auto& r : root.at("links").items()) {
        r.object();
        Link l;
        l.link_id = r.at("link_id").str();
        l.entity_id = r.at("entity_id").str();
        l.kind = r.at("kind").str();
        Reader t = r.at("target").object();
        if (t.has("mention_id")) l.target.mention_id = t.at("mention_id").str();
        if (t.has("passage_index")) l.target.passage_index = t.at("passage_index").small_int();
        l.extra = r.extra({"link_id", "entity_id", "kind", "target"});
        b.links.push_back(std::move(l));
    }

    for (const auto& r : root.at("descriptions").items()) {
        r.object();
        EntityDescription d;
        d.entity_id = r.at("entity_id").str();
        d.text = r.at("text").str();
        for (const auto& p : r.at("related_passage_ids").items()) d.related_passage_ids.push_back(p.small_int());
        if (r.has("unresolved_related")) d.unresolved_related = r.at("unresolved_related").strings();
        if (r.has("manual_override")) d.manual_override = r.at("manual_override").str();
        d.extra = r.extra({"entity_id", "text", "related_passage_ids", "unresolved_related", "manual_override"});
        b.descriptions.push_back(std::move(d));
    }

    Reader scans = root.at("scan_sequences").object();
    for (auto it = scans.value().begin(); it != scans.value().end(); ++it) {
        Reader r(it.value(), scans.path() + "/" + it.key());
        std::size_t used = 0;
        int fig = 0;
        try {
            fig = std::stoi(it.key(), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != it.key().size() || std::to_string(fig) != it.key()) {
            r.fail("scan key is not a figure number");
        }
        b.scan_sequences[fig] = r.strings();
    }

    if (root.has("diagnostics")) {
        for (const auto& r : root.at("diagnostics").items()) {
            r.object();
            b.diagnostics.push_back({r.at("code").str(), r.at("subject").str(), r.at("message").str()});
        }
    }

    b.extra = root.extra({"format_version", "doc_id", "source_hash", "figures", "entities", "mentions", "links",
                          "descriptions", "scan_sequences", "diagnostics"});
    return b;
}

std::string write_bundle(const AugmentationBundle& bundle) { return bundle_to_json(bundle).dump(2) + "\n"; }

AugmentationBundle read_bundle(std::string_view bytes) {
    Json j = Json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::SchemaViolation, "/: not valid JSON (truncated or corrupt file)");
    return bundle_from_json(j);
}

// ---- HTML -----------------------------------------------------------------

std::string_view stylesheet() {
    return ".cd-inert{color:inherit;text-decoration:none;cursor:text}"
           ".cd-phrase{border-bottom:1px dotted currentColor}"
           ".cd-figure-frame{position:relative;display:inline-block}"
           ".cd-overlay{position:absolute;left:0;top:0;width:100%;height:100%;pointer-events:none}"
           ".cd-point{r:var(--cd-point-radius,6px);fill:rgba(220,60,40,.35);pointer-events:all}";
}

namespace {

struct Selector {
    std::string tag;
    std::string cls;
    std::string id;
};

Selector parse_selector(std::string_view s) {
    Selector out;
    if (s.empty()) throw Error(ErrorCode::InvalidArgument, "empty strip selector");
    if (s[0] == '#') {
        out.id = s.substr(1);
    } else if (auto dot = s.find('.'); dot != std::string_view::npos) {
        out.tag = s.substr(0, dot);
        out.cls = s.substr(dot + 1);
    } else {
        out.tag = s;
    }
    for (auto& c : out.tag) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto simple = [](std::string_view part) {
        return std::all_of(part.begin(), part.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
        });
    };
    if ((s[0] == '#' && out.id.empty()) || (s.find('.') != std::string_view::npos && out.cls.empty()) ||
        !simple(out.tag) || !simple(out.cls) || !simple(out.id)) {
        throw Error(ErrorCode::InvalidArgument, "unsupported strip selector '" + std::string(s) + "'");
    }
    return out;
}

bool matches(const html::Node& n, const Selector& sel) {
    if (n.kind != html::NodeKind::Element) return false;
    if (!sel.id.empty()) {
        const std::string* id = n.attribute("id");
        return id && *id == sel.id;
    }
    if (!sel.tag.empty() && n.tag != sel.tag) return false;
    if (!sel.cls.empty() && !n.has_class(sel.cls)) return false;
    return true;
}

// Where to add attributes inside a start tag.
std::size_t attribute_slot(std::string_view source, const html::Node& n) {
    std::size_t end = n.start_tag.end;
    if (end >= 2 && source[end - 2] == '/') return end - 2;
    return end - 1;
}

std::string fmt_coord(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s(buf);
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    if (s == "-0") s = "0";
    return s;
}

// Edits shared by both variants. Returns the layout it was computed on.
ingest::Layout base_edits(const Document& doc, const RenderOptions& options, html::Rewriter& rw) {
    std::string_view src = doc.source;
    ingest::Layout layout = ingest::layout_document(src);
    const html::Tree& tree = layout.tree;

    std::vector<Selector> selectors;
    for (const auto& s : options.strip_selectors) selectors.push_back(parse_selector(s));

    std::vector<html::ByteRange> protected_ranges;
    for (const auto& p : doc.passages) protected_ranges.push_back(p.html_span);
    for (const auto& f : doc.figures) protected_ranges.push_back(f.html_span);

    std::vector<html::ByteRange> removed;
    tree.walk(tree.root(), [&](std::size_t i) {
        const auto& n = tree.node(i);
        if (n.kind != html::NodeKind::Element) return false;
        for (const auto& sel : selectors) {
            if (!matches(n, sel)) continue;
            for (const auto& r : protected_ranges) {
                if (r.begin < n.outer.end && n.outer.begin < r.end) {
                    throw Error(ErrorCode::InvalidArgument,
                                "strip selector would remove document content at byte " + std::to_string(r.begin));
                }
            }
            rw.remove(n.outer);
            removed.push_back(n.outer);
            return false;
        }
        return true;
    });
    auto is_removed = [&](std::size_t pos) {
        for (const auto& r : removed) {
            if (r.contains(pos)) return true;
        }
        return false;
    };

    // Hyperlinks become inert spans; their id stays so in-page targets survive.
    for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
        const auto& n = tree.node(i);
        if (n.kind != html::NodeKind::Element || n.tag != "a" || is_removed(n.outer.begin)) continue;
        std::string open = "<span class=\"cd-inert\"";
        if (const std::string* id = n.attribute("id")) open += " id=\"" + html::escape_attribute(*id) + "\"";
        open += ">";
        rw.replace(n.start_tag, open);
        if (n.end_tag) rw.replace(*n.end_tag, "</span>");
    }

    for (std::size_t k = 0; k < layout.passage_nodes.size(); ++k) {
        const auto& n = tree.node(layout.passage_nodes[k]);
        std::string attrs = " data-cd-passage=\"" + std::to_string(k) + "\"";
        if (!layout.passage_has_id[k]) attrs += " id=\"" + html::escape_attribute(doc.passages[k].element_id) + "\"";
        rw.insert(attribute_slot(src, n), attrs);
    }
    for (std::size_t k = 0; k < layout.figure_nodes.size(); ++k) {
        const auto& n = tree.node(layout.figure_nodes[k].figure);
        std::string attrs = " data-cd-figure=\"" + std::to_string(doc.figures[k].figure_number) + "\"";
        if (!layout.figure_nodes[k].has_id) attrs += " id=\"" + html::escape_attribute(doc.figures[k].element_id) + "\"";
        rw.insert(attribute_slot(src, n), attrs);
    }

    // Head additions: doc id and stylesheet.
    std::string head = "<meta name=\"crossdoc-doc-id\" content=\"" + html::escape_attribute(doc.doc_id) +
                       "\">\n<style data-crossdoc>" + std::string(stylesheet()) + "</style>\n";
    std::size_t head_pos = html::npos;
    for (const auto& n : tree.nodes()) {
        if (n.kind == html::NodeKind::Element && n.tag == "head" && n.end_tag) {
            head_pos = n.end_tag->begin;
            break;
        }
    }
    if (head_pos == html::npos) head_pos = tree.node(layout.body).kind == html::NodeKind::Element && layout.body != 0
                                               ? tree.node(layout.body).start_tag.begin
                                               : 0;
    rw.insert(head_pos, head);
    return layout;
}

}  // namespace

std::string emit_baseline_html(const Document& doc, const RenderOptions& options) {
    html::Rewriter rw(doc.source);
    base_edits(doc, options, rw);
    return rw.apply();
}

std::string augment_html(const Document& doc, const AugmentationBundle& bundle, const RenderOptions& options) {
    if (bundle.source_hash != doc.source_hash) {
        throw Error(ErrorCode::InvalidArgument, "bundle was made for a different document revision");
    }
    std::string_view src = doc.source;
    html::Rewriter rw(src);
    ingest::Layout layout = base_edits(doc, options, rw);
    const html::Tree& tree = layout.tree;

    std::map<int, std::size_t> figure_slot;
    for (std::size_t k = 0; k < doc.figures.size(); ++k) figure_slot[doc.figures[k].figure_number] = k;

    // Mentions: one anchor per contiguous source piece.
    std::map<std::pair<int, int>, html::MappedText> texts;
    std::vector<html::ByteRange> claimed;
    for (const auto& m : bundle.mentions) {
        std::size_t node = html::npos;
        if (m.location.kind == LocationKind::Body) {
            auto p = static_cast<std::size_t>(m.location.passage_or_figure);
            if (p >= layout.passage_nodes.size()) throw Error(ErrorCode::SpanCollision, m.mention_id + ": no passage");
            node = layout.passage_nodes[p];
        } else {
            auto it = figure_slot.find(m.location.passage_or_figure);
            if (it == figure_slot.end()) throw Error(ErrorCode::SpanCollision, m.mention_id + ": no figure");
            node = layout.figure_nodes[it->second].caption;
        }
        auto key = std::make_pair(static_cast<int>(m.location.kind), m.location.passage_or_figure);
        auto found = texts.find(key);
        if (found == texts.end()) found = texts.emplace(key, html::extract_text(tree, src, node)).first;
        const html::MappedText& mapped = found->second;
        const auto& span = m.location.char_span;
        if (span.end > mapped.text.size() || span.begin >= span.end) {
            throw Error(ErrorCode::SpanCollision, m.mention_id + ": span outside its text");
        }
        auto pieces = html::source_segments(mapped, span.begin, span.end);
        // Collapsed whitespace leaves gaps of plain whitespace; close them.
        for (std::size_t k = 1; k < pieces.size();) {
            std::string_view gap = src.substr(pieces[k - 1].end, pieces[k].begin - pieces[k - 1].end);
            if (gap.find_first_not_of(" \t\r\n\f") == std::string_view::npos) {
                pieces[k - 1].end = pieces[k].end;
                pieces.erase(pieces.begin() + static_cast<std::ptrdiff_t>(k));
            } else {
                ++k;
            }
        }
        std::string attrs = " data-entity=\"" + html::escape_attribute(m.entity_id) + "\" data-mention=\"" +
                            html::escape_attribute(m.mention_id) + "\"";
        for (std::size_t k = 0; k < pieces.size(); ++k) {
            const auto& r = pieces[k];
            for (const auto& c : claimed) {
                if (r.begin < c.end && c.begin < r.end) {
                    throw Error(ErrorCode::SpanCollision, m.mention_id + " overlaps another anchor");
                }
            }
            claimed.push_back(r);
            std::string open = "<span class=\"cd-phrase\"";
            if (k == 0) open += " id=\"" + html::escape_attribute(m.anchor_id) + "\"";
            open += attrs + ">";
            rw.insert(r.begin, open, 1);
            rw.insert(r.end, "</span>", -1);
        }
    }

    // Figures: wrap the image and lay an SVG over it.
    for (std::size_t k = 0; k < doc.figures.size(); ++k) {
        int number = doc.figures[k].figure_number;
        const auto& img = tree.node(layout.figure_nodes[k].image);
        const FigureRecord* rec = bundle.figure(number);
        bool sized = rec && rec->width && rec->height;
        std::string open = "<span class=\"cd-figure-frame";
        if (!sized) open += " cd-no-overlay";
        open += "\" data-figure=\"" + std::to_string(number) + "\">";
        rw.insert(img.outer.begin, open, 1);
        std::string close;
        if (sized) {
            int w = *rec->width, h = *rec->height;
            close += "<svg class=\"cd-overlay\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
                     "\" preserveAspectRatio=\"none\" data-figure=\"" + std::to_string(number) + "\">";
            for (const auto& e : bundle.entities) {
                if (e.figure_number != number) continue;
                for (const auto& p : e.points) {
                    close += "<circle class=\"cd-point\" cx=\"" + fmt_coord(p.x * w) + "\" cy=\"" + fmt_coord(p.y * h) +
                             "\" data-entity=\"" + html::escape_attribute(e.entity_id) + "\"></circle>";
                }
            }
            close += "</svg>";
        }
        close += "</span>";
        rw.insert(img.outer.end, close, -1);
    }
    return rw.apply();
}

std::string strip_augmentation(std::string_view augmented) {
    html::Tree tree = html::Tree::parse(augmented);
    html::Rewriter rw(augmented);
    tree.walk(tree.root(), [&](std::size_t i) {
        const auto& n = tree.node(i);
        if (n.kind != html::NodeKind::Element) return false;
        if (n.tag == "svg" && n.has_class("cd-overlay")) {
            rw.remove(n.outer);
            return false;
        }
        if (n.tag == "span" && (n.has_class("cd-phrase") || n.has_class("cd-figure-frame"))) {
            rw.remove(n.start_tag);
            if (n.end_tag) rw.remove(*n.end_tag);
        }
        return true;
    });
    return rw.apply();
}

std::vector<std::string> passage_texts(std::string_view html) {
    std::vector<std::string> out;
    for (auto& p : ingest::parse_document(html).passages) out.push_back(std::move(p.text));
    return out;
}

}  // namespace crossdoc::bundler
