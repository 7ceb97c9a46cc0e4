#include "crossdoc/linkgraph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "crossdoc/error.hpp"

namespace crossdoc::linkgraph {

const Entity* AugmentationBundle::entity(std::string_view id) const {
    for (const auto& e : entities) {
        if (e.entity_id == id) return &e;
    }
    return nullptr;
}

const TextMention* AugmentationBundle::mention(std::string_view id) const {
    for (const auto& m : mentions) {
        if (m.mention_id == id) return &m;
    }
    return nullptr;
}

const EntityDescription* AugmentationBundle::description(std::string_view entity_id) const {
    for (const auto& d : descriptions) {
        if (d.entity_id == entity_id) return &d;
    }
    return nullptr;
}

const FigureRecord* AugmentationBundle::figure(int figure_number) const {
    for (const auto& f : figures) {
        if (f.figure_number == figure_number) return &f;
    }
    return nullptr;
}

bool ValidationReport::has_error(std::string_view code) const {
    return std::any_of(errors.begin(), errors.end(), [&](const Finding& f) { return f.code == code; });
}

namespace {

const std::string* unit_text(const Document& doc, const MentionLocation& loc) {
    if (loc.kind == LocationKind::Caption) {
        const Figure* f = doc.figure(loc.passage_or_figure);
        return f ? &f->caption : nullptr;
    }
    if (loc.passage_or_figure < 0) return nullptr;
    const Passage* p = doc.passage(static_cast<std::size_t>(loc.passage_or_figure));
    return p ? &p->text : nullptr;
}

bool in_unit_range(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

std::string location_key(const MentionLocation& loc) {
    return (loc.kind == LocationKind::Caption ? "caption:" : "body:") + std::to_string(loc.passage_or_figure);
}

}  // namespace

ValidationReport validate_bundle(const AugmentationBundle& b, const Document& doc, const ReferencePattern& pattern) {
    ValidationReport r;
    auto error = [&](std::string code, std::string subject, std::string msg) {
        r.errors.push_back({std::move(code), std::move(subject), std::move(msg)});
    };
    auto warn = [&](std::string code, std::string subject, std::string msg) {
        r.warnings.push_back({std::move(code), std::move(subject), std::move(msg)});
    };

    if (b.doc_id != doc.doc_id || b.source_hash != doc.source_hash) {
        error("DOC_MISMATCH", b.doc_id,
              "bundle is bound to " + b.source_hash + " but the document hashes to " + doc.source_hash);
        return r;
    }
    if (b.format_version.empty()) error("VERSION_MISSING", "", "format_version is empty");

    // Id spaces.
    std::unordered_map<std::string, const Entity*> entities;
    std::unordered_map<std::string, const TextMention*> mentions;
    std::unordered_set<std::string> link_ids;
    for (const auto& e : b.entities) {
        if (!entities.emplace(e.entity_id, &e).second) error("DUPLICATE_ID", e.entity_id, "duplicate entity id");
    }
    for (const auto& m : b.mentions) {
        if (!mentions.emplace(m.mention_id, &m).second) error("DUPLICATE_ID", m.mention_id, "duplicate mention id");
    }
    for (const auto& l : b.links) {
        if (!link_ids.insert(l.link_id).second) error("DUPLICATE_ID", l.link_id, "duplicate link id");
    }

    std::set<int> figure_numbers;
    for (const auto& f : b.figures) {
        std::string subject = "fig" + std::to_string(f.figure_number);
        if (!figure_numbers.insert(f.figure_number).second) error("DUPLICATE_ID", subject, "duplicate figure record");
        if (!doc.figure(f.figure_number)) error("UNKNOWN_FIGURE", subject, "figure not in document");
        if (!f.width || !f.height || *f.width <= 0 || *f.height <= 0) {
            warn("IMAGE_DIMENSIONS_UNKNOWN", subject, "no image dimensions; overlay omitted");
        }
    }

    // Entities.
    for (const auto& e : b.entities) {
        r.stats.entities++;
        r.stats.points += e.points.size();
        if (e.label.empty()) error("EMPTY_LABEL", e.entity_id, "entity label is empty");
        if (!doc.figure(e.figure_number)) {
            error("UNKNOWN_FIGURE", e.entity_id, "figure " + std::to_string(e.figure_number) + " not in document");
        }
        for (const auto& p : e.points) {
            if (!in_unit_range(p.x) || !in_unit_range(p.y)) {
                error("POINT_OUT_OF_RANGE", e.entity_id, "point outside [0,1]^2");
            }
        }
        for (const auto& mid : e.mentions) {
            auto it = mentions.find(mid);
            if (it == mentions.end()) {
                error("UNKNOWN_TARGET", e.entity_id, "entity lists unknown mention " + mid);
            } else if (it->second->entity_id != e.entity_id) {
                error("BIDIRECTIONAL_BROKEN", e.entity_id, "mention " + mid + " belongs to " + it->second->entity_id);
            }
        }
    }

    // Which passages cite which figure, for the direct-reference rule.
    std::map<int, std::set<std::size_t>> citing;
    auto cites = [&](int figure_number, std::size_t passage) {
        auto it = citing.find(figure_number);
        if (it == citing.end()) {
            std::set<std::size_t> s;
            if (doc.figure(figure_number)) {
                for (const auto& ref : ingest::find_figure_references(doc, figure_number, pattern)) s.insert(ref.passage_index);
            }
            it = citing.emplace(figure_number, std::move(s)).first;
        }
        return it->second.count(passage) > 0;
    };

    // Mentions.
    std::map<std::string, std::vector<const TextMention*>> by_unit;
    for (const auto& m : b.mentions) {
        r.stats.mentions++;
        auto eit = entities.find(m.entity_id);
        if (eit == entities.end()) {
            error("UNKNOWN_ENTITY", m.mention_id, "mention points to unknown entity " + m.entity_id);
        } else {
            const auto& listed = eit->second->mentions;
            if (std::find(listed.begin(), listed.end(), m.mention_id) == listed.end()) {
                error("BIDIRECTIONAL_BROKEN", m.mention_id, "entity " + m.entity_id + " does not list this mention");
            }
        }
        const std::string* text = unit_text(doc, m.location);
        if (!text) {
            error("UNKNOWN_TARGET", m.mention_id, "mention location " + location_key(m.location) + " not in document");
            continue;
        }
        const Span& s = m.location.char_span;
        if (s.begin > s.end || s.end > text->size()) {
            error("SPAN_OUT_OF_RANGE", m.mention_id,
                  "span [" + std::to_string(s.begin) + "," + std::to_string(s.end) + ") exceeds text length " +
                      std::to_string(text->size()));
            continue;
        }
        if (s.begin == s.end || text->compare(s.begin, s.end - s.begin, m.phrase) != 0) {
            error("PHRASE_MISMATCH", m.mention_id, "phrase does not match the text at its span");
        }
        by_unit[location_key(m.location)].push_back(&m);
    }
    for (auto& [unit, list] : by_unit) {
        std::sort(list.begin(), list.end(), [](const TextMention* a, const TextMention* c) {
            return std::tie(a->location.char_span.begin, a->mention_id) <
                   std::tie(c->location.char_span.begin, c->mention_id);
        });
        const TextMention* reach = nullptr;  // mention extending furthest so far
        for (const TextMention* m : list) {
            if (reach && m->location.char_span.begin < reach->location.char_span.end) {
                error("MENTION_OVERLAP", m->mention_id, "overlaps " + reach->mention_id + " in " + unit);
            }
            if (!reach || m->location.char_span.end > reach->location.char_span.end) reach = m;
        }
    }

    // Links.
    std::unordered_set<std::string> linked_mentions;
    std::set<std::pair<std::string, int>> related_links;
    for (const auto& l : b.links) {
        auto eit = entities.find(l.entity_id);
        if (eit == entities.end()) error("UNKNOWN_ENTITY", l.link_id, "link from unknown entity " + l.entity_id);
        if (l.kind == kDirectReference) {
            r.stats.direct_links++;
            if (!l.target.mention_id) {
                error("LINK_KIND_MISMATCH", l.link_id, "direct reference must target a mention");
                continue;
            }
            auto mit = mentions.find(*l.target.mention_id);
            if (mit == mentions.end()) {
                error("UNKNOWN_TARGET", l.link_id, "unknown mention " + *l.target.mention_id);
                continue;
            }
            const TextMention& m = *mit->second;
            linked_mentions.insert(m.mention_id);
            if (m.entity_id != l.entity_id) {
                error("BIDIRECTIONAL_BROKEN", l.link_id, "mention " + m.mention_id + " belongs to " + m.entity_id);
            }
            if (m.location.kind == LocationKind::Body && eit != entities.end() && m.location.passage_or_figure >= 0 &&
                !cites(eit->second->figure_number, static_cast<std::size_t>(m.location.passage_or_figure))) {
                error("LINK_KIND_MISMATCH", l.link_id, "passage does not reference the entity's figure");
            }
        } else if (l.kind == kRelatedPassage) {
            r.stats.related_links++;
            if (!l.target.passage_index || l.target.mention_id) {
                error("LINK_KIND_MISMATCH", l.link_id, "related passage must target a passage index");
                continue;
            }
            if (*l.target.passage_index < 0 || !doc.passage(static_cast<std::size_t>(*l.target.passage_index))) {
                error("UNKNOWN_TARGET", l.link_id, "passage " + std::to_string(*l.target.passage_index) + " not in document");
                continue;
            }
            related_links.emplace(l.entity_id, *l.target.passage_index);
        } else {
            r.stats.other_links++;
            warn("UNKNOWN_LINK_KIND", l.link_id, "link kind '" + l.kind + "' has no behavior");
        }
    }
    for (const auto& m : b.mentions) {
        if (!linked_mentions.count(m.mention_id)) {
            error("BIDIRECTIONAL_BROKEN", m.mention_id, "mention has no direct-reference link");
        }
    }

    // Descriptions.
    std::unordered_set<std::string> described;
    for (const auto& d : b.descriptions) {
        if (!entities.count(d.entity_id)) error("UNKNOWN_ENTITY", d.entity_id, "description for unknown entity");
        if (!described.insert(d.entity_id).second) error("DUPLICATE_ID", d.entity_id, "two descriptions for entity");
        if (d.display_text().empty()) error("EMPTY_DESCRIPTION", d.entity_id, "description text is empty");
        for (int p : d.related_passage_ids) {
            if (p < 0 || !doc.passage(static_cast<std::size_t>(p))) {
                error("UNKNOWN_TARGET", d.entity_id, "related passage " + std::to_string(p) + " not in document");
            } else if (!related_links.count({d.entity_id, p})) {
                error("BIDIRECTIONAL_BROKEN", d.entity_id, "related passage " + std::to_string(p) + " has no link");
            }
        }
        for (const auto& s : d.unresolved_related) {
            warn("UNRESOLVED_RELATED_SENTENCE", d.entity_id, "kept as free text: " + s);
        }
    }

    // Scan sequences.
    for (const auto& [fig, seq] : b.scan_sequences) {
        std::multiset<std::string> listed(seq.begin(), seq.end());
        std::multiset<std::string> expected;
        for (const auto& e : b.entities) {
            if (e.figure_number == fig) expected.insert(e.entity_id);
        }
        if (listed != expected) {
            error("SCAN_INCOMPLETE", "fig" + std::to_string(fig), "scan sequence differs from the figure's entities");
        }
    }
    for (const auto& e : b.entities) {
        if (!b.scan_sequences.count(e.figure_number)) {
            error("SCAN_INCOMPLETE", "fig" + std::to_string(e.figure_number), "figure has entities but no scan");
            break;
        }
    }

    for (const auto& f : doc.figures) {
        std::string joined;
        for (const auto& s : f.caption_sentences) joined += s;
        if (joined != f.caption) {
            error("CAPTION_RECONSTRUCTION", "fig" + std::to_string(f.figure_number),
                  "caption sentences do not reproduce the caption");
        }
    }
    return r;
}

Json report_to_json(const ValidationReport& report) {
    auto findings = [](const std::vector<Finding>& list) {
        Json arr = Json::array();
        for (const auto& f : list) arr.push_back({{"code", f.code}, {"subject_id", f.subject_id}, {"message", f.message}});
        return arr;
    };
    const auto& s = report.stats;
    return Json{{"ok", report.ok()},
                {"errors", findings(report.errors)},
                {"warnings", findings(report.warnings)},
                {"stats",
                 {{"entities", s.entities},
                  {"points", s.points},
                  {"mentions", s.mentions},
                  {"links", {{"direct_reference", s.direct_links}, {"related_passage", s.related_links}, {"other", s.other_links}}}}}};
}

// ---- pruning --------------------------------------------------------------

AugmentationBundle prune_unlinked_entities(const AugmentationBundle& bundle) {
    std::unordered_set<std::string> direct, related;
    for (const auto& l : bundle.links) {
        if (l.kind == kDirectReference) direct.insert(l.entity_id);
        if (l.kind == kRelatedPassage) related.insert(l.entity_id);
    }

    std::unordered_set<std::string> removed;
    for (const auto& e : bundle.entities) {
        bool unlinked = !direct.count(e.entity_id) && !related.count(e.entity_id);
        bool weak_provisional = e.provisional && e.points.empty() && e.mentions.size() < 2;
        if (unlinked || weak_provisional) removed.insert(e.entity_id);
    }

    AugmentationBundle out = bundle;
    if (removed.empty()) return out;

    std::unordered_set<std::string> removed_mentions;
    out.mentions.clear();
    for (const auto& m : bundle.mentions) {
        if (removed.count(m.entity_id) || !bundle.entity(m.entity_id)) {
            removed_mentions.insert(m.mention_id);
        } else {
            out.mentions.push_back(m);
        }
    }
    out.entities.clear();
    for (const auto& e : bundle.entities) {
        if (removed.count(e.entity_id)) continue;
        Entity kept = e;
        std::erase_if(kept.mentions, [&](const std::string& id) { return removed_mentions.count(id) > 0; });
        out.entities.push_back(std::move(kept));
    }
    std::erase_if(out.links, [&](const Link& l) {
        return removed.count(l.entity_id) || (l.target.mention_id && removed_mentions.count(*l.target.mention_id));
    });
    std::erase_if(out.descriptions, [&](const EntityDescription& d) { return removed.count(d.entity_id) > 0; });
    for (auto it = out.scan_sequences.begin(); it != out.scan_sequences.end();) {
        std::erase_if(it->second, [&](const std::string& id) { return removed.count(id) > 0; });
        it = it->second.empty() ? out.scan_sequences.erase(it) : std::next(it);
    }
    return out;
}

std::map<int, std::vector<std::string>> compute_scan_sequences(const AugmentationBundle& bundle) {
    std::unordered_map<std::string, std::size_t> first_caption;
    for (const auto& m : bundle.mentions) {
        if (m.location.kind != LocationKind::Caption) continue;
        const Entity* e = bundle.entity(m.entity_id);
        if (!e || e->figure_number != m.location.passage_or_figure) continue;
        auto [it, inserted] = first_caption.emplace(m.entity_id, m.location.char_span.begin);
        if (!inserted) it->second = std::min(it->second, m.location.char_span.begin);
    }

    struct Key {
        int tier;
        std::size_t caption_at;
        double y, x;
        std::size_t order;
        bool operator<(const Key& o) const {
            return std::tie(tier, caption_at, y, x, order) < std::tie(o.tier, o.caption_at, o.y, o.x, o.order);
        }
    };
    std::map<int, std::vector<std::pair<Key, std::string>>> keyed;
    for (std::size_t i = 0; i < bundle.entities.size(); ++i) {
        const Entity& e = bundle.entities[i];
        Key k{2, 0, 0, 0, i};
        if (auto it = first_caption.find(e.entity_id); it != first_caption.end()) {
            k.tier = 0;
            k.caption_at = it->second;
        } else if (!e.points.empty()) {
            auto top = std::min_element(e.points.begin(), e.points.end(), [](const NormPoint& a, const NormPoint& c) {
                return std::tie(a.y, a.x) < std::tie(c.y, c.x);
            });
            k.tier = 1;
            k.y = top->y;
            k.x = top->x;
        }
        keyed[e.figure_number].emplace_back(k, e.entity_id);
    }
    std::map<int, std::vector<std::string>> out;
    for (auto& [fig, list] : keyed) {
        std::sort(list.begin(), list.end(), [](const auto& a, const auto& c) { return a.first < c.first; });
        for (auto& [k, id] : list) out[fig].push_back(id);
    }
    return out;
}

// ---- queries --------------------------------------------------------------

EntityContext entity_context(const AugmentationBundle& bundle, std::string_view entity_id) {
    const Entity* e = bundle.entity(entity_id);
    if (!e) throw Error(ErrorCode::UnknownEntity, "no entity '" + std::string(entity_id) + "'");
    EntityContext ctx;
    ctx.entity = *e;
    if (const FigureRecord* f = bundle.figure(e->figure_number)) {
        ctx.figure = *f;
    } else {
        ctx.figure.figure_number = e->figure_number;
    }
    if (const EntityDescription* d = bundle.description(entity_id)) ctx.description = *d;
    std::set<int> seen;
    for (const auto& l : bundle.links) {
        if (l.entity_id != entity_id) continue;
        if (l.kind == kDirectReference && l.target.mention_id) {
            if (const TextMention* m = bundle.mention(*l.target.mention_id)) ctx.direct_references.push_back(*m);
        } else if (l.kind == kRelatedPassage && l.target.passage_index && seen.insert(*l.target.passage_index).second) {
            ctx.related_passages.push_back(*l.target.passage_index);
        }
    }
    return ctx;
}

Json context_to_json(const EntityContext& c) {
    Json points = Json::array();
    for (const auto& p : c.entity.points) points.push_back({p.x, p.y});
    Json refs = Json::array();
    for (const auto& m : c.direct_references) {
        refs.push_back({{"mention_id", m.mention_id},
                        {"kind", m.location.kind == LocationKind::Caption ? "caption" : "body"},
                        {"passage_or_figure", m.location.passage_or_figure},
                        {"char_span", {m.location.char_span.begin, m.location.char_span.end}},
                        {"phrase", m.phrase}});
    }
    Json j{{"entity_id", c.entity.entity_id},
           {"label", c.entity.label},
           {"figure", {{"figure_number", c.figure.figure_number}, {"image_ref", c.figure.image_ref}}},
           {"points", points},
           {"description", c.description ? Json(c.description->display_text()) : Json(nullptr)},
           {"direct_references", refs},
           {"related_passages", c.related_passages}};
    if (c.description && !c.description->unresolved_related.empty()) {
        j["unresolved_related"] = c.description->unresolved_related;
    }
    return j;
}

std::vector<ScanStep> figure_scan_sequence(const AugmentationBundle& bundle, int figure_number) {
    std::vector<std::string> order;
    if (auto it = bundle.scan_sequences.find(figure_number); it != bundle.scan_sequences.end()) {
        order = it->second;
    } else {
        auto computed = compute_scan_sequences(bundle);
        if (auto c = computed.find(figure_number); c != computed.end()) order = c->second;
    }
    if (order.empty()) {
        throw Error(ErrorCode::NoEntities, "figure " + std::to_string(figure_number) + " has no entities");
    }
    std::vector<ScanStep> steps;
    for (const auto& id : order) {
        const Entity* e = bundle.entity(id);
        if (!e) throw Error(ErrorCode::UnknownEntity, "scan lists unknown entity '" + id + "'");
        const EntityDescription* d = bundle.description(id);
        steps.push_back({e->entity_id, e->label, e->points, d ? d->display_text() : std::string()});
    }
    return steps;
}

std::vector<std::string> reverse_lookup(const AugmentationBundle& bundle, const GraphLocation& location) {
    std::unordered_set<std::string> hits;
    if (const auto* mid = std::get_if<std::string>(&location)) {
        const TextMention* m = bundle.mention(*mid);
        if (!m) throw Error(ErrorCode::UnknownLocation, "no mention '" + *mid + "'");
        hits.insert(m->entity_id);
        for (const auto& l : bundle.links) {
            if (l.target.mention_id == *mid) hits.insert(l.entity_id);
        }
    } else if (const auto* pt = std::get_if<PointLocation>(&location)) {
        for (const auto& e : bundle.entities) {
            if (e.figure_number != pt->figure_number) continue;
            for (const auto& p : e.points) {
                if (std::abs(p.x - pt->point.x) <= 1e-9 && std::abs(p.y - pt->point.y) <= 1e-9) hits.insert(e.entity_id);
            }
        }
    } else {
        int passage = std::get<PassageLocation>(location).passage_index;
        for (const auto& l : bundle.links) {
            if (l.target.passage_index == passage && !l.target.mention_id) hits.insert(l.entity_id);
        }
    }
    if (hits.empty()) throw Error(ErrorCode::UnknownLocation, "no entity is linked to this location");
    std::vector<std::string> out;
    for (const auto& e : bundle.entities) {
        if (hits.count(e.entity_id)) out.push_back(e.entity_id);
    }
    return out;
}

std::vector<GraphLocation> forward_targets(const AugmentationBundle& bundle, std::string_view entity_id) {
    const Entity* e = bundle.entity(entity_id);
    if (!e) throw Error(ErrorCode::UnknownEntity, "no entity '" + std::string(entity_id) + "'");
    std::vector<GraphLocation> out;
    for (const auto& l : bundle.links) {
        if (l.entity_id != entity_id) continue;
        if (l.target.mention_id) {
            out.emplace_back(*l.target.mention_id);
        } else if (l.target.passage_index) {
            out.emplace_back(PassageLocation{*l.target.passage_index});
        }
    }
    for (const auto& p : e->points) out.emplace_back(PointLocation{e->figure_number, p});
    return out;
}

}  // namespace crossdoc::linkgraph
