#pragma once

// Hand-rolled generators and tables shared by the unit tests and the
// acceptance binary.

#include <random>
#include <string>
#include <vector>

#include "crossdoc/linkgraph.hpp"

namespace crossdoc::testing {

struct ReferenceCase {
    std::string text;
    int figure;
    std::vector<std::string> expected;  // matched substrings in order
};

inline const std::vector<ReferenceCase>& reference_cases() {
    static const std::vector<ReferenceCase> cases{
        {"as shown in Figure 3 above", 3, {"Figure 3"}},
        {"(see fig. 3)", 3, {"fig. 3"}},
        {"Figure 30 shows more", 3, {}},
        {"Figure 13 shows more", 3, {}},
        {"in Fig 3b the curve", 3, {"Fig 3b"}},
        {"Figure 3(a) and Figure 3(b)", 3, {"Figure 3(a)", "Figure 3(b)"}},
        {"FIGURE 3 again", 3, {"FIGURE 3"}},
        {"fig.3 without space", 3, {"fig.3"}},
        {"Figure3 glued", 3, {"Figure3"}},
        {"see Figures 3 for all", 3, {"Figures 3"}},
        {"Figure 3.5 is a section number", 3, {}},
        {"ends with Figure 3.", 3, {"Figure 3"}},
        {"Table 3 is not a figure", 3, {}},
        {"we configure 3 workers", 3, {}},
        {"Figure\xC2\xA0" "3 with a non-breaking space", 3, {"Figure\xC2\xA0" "3"}},
        {"Figure 2 and Figure 3", 2, {"Figure 2"}},
        {"Figure 2 and Figure 3", 3, {"Figure 3"}},
        {"Fig. 12 is far away", 12, {"Fig. 12"}},
        {"Fig. 12 is far away", 1, {}},
        {"Figure 3-4 range", 3, {"Figure 3"}},
        {"Figure 3c, right", 3, {"Figure 3c"}},
        {"prefigure 3", 3, {}},
        {"Figure 03 is not figure 3", 3, {"figure 3"}},
        {"no reference here", 3, {}},
    };
    return cases;
}

inline std::string random_caption(std::mt19937& rng) {
    static const std::vector<std::string> atoms{
        "Figure 3:", "Fig.",   "Overview of the system.", "Step 1",  "e.g.", "et al.", "i.e.,", "3.5",
        "results",   "(a)",    "the encoder",            "!",       "?",    ".",      "  ",    "\n",
        "\"quoted.\"", "U.S.", "\xE2\x92\xB6",           "x.Y",     "Dr.",  "vs.",    "1.",    "end."};
    std::string c;
    int n = 1 + static_cast<int>(rng() % 24);
    for (int k = 0; k < n; ++k) {
        c += atoms[rng() % atoms.size()];
        if (rng() % 3) c += ' ';
    }
    return c;
}

inline std::string random_text(std::mt19937& rng) {
    static const std::vector<std::string> parts{"a", "Z", " ", "\xC3\xA9", "\"", "\\", "\n", "\xE2\x93\x90", "<b>", "0"};
    std::string s;
    for (int i = rng() % 12; i > 0; --i) s += parts[rng() % parts.size()];
    return s;
}

// Structurally arbitrary bundle; it need not validate against a document.
inline linkgraph::AugmentationBundle random_bundle(std::mt19937& rng) {
    using namespace linkgraph;
    std::uniform_real_distribution<double> unit(0, 1);
    AugmentationBundle b;
    b.doc_id = "doc-" + std::to_string(rng() % 100000);
    b.source_hash = "sha256:" + std::to_string(rng());
    int figures = 1 + static_cast<int>(rng() % 4);
    for (int f = 1; f <= figures; ++f) {
        FigureRecord r{f, "fig" + std::to_string(f), "img/" + random_text(rng)};
        if (rng() % 2) {
            r.width = 1 + static_cast<int>(rng() % 2000);
            r.height = 1 + static_cast<int>(rng() % 2000);
        }
        if (rng() % 4 == 0) r.extra["alt"] = random_text(rng);
        b.figures.push_back(r);
    }
    int entities = static_cast<int>(rng() % 7), mention_n = 0, link_n = 0;
    for (int e = 1; e <= entities; ++e) {
        Entity ent;
        ent.entity_id = "e" + std::to_string(e);
        ent.figure_number = 1 + static_cast<int>(rng() % figures);
        ent.label = random_text(rng);
        ent.provisional = rng() % 3 == 0;
        for (int p = rng() % 3; p > 0; --p) ent.points.push_back({unit(rng), unit(rng)});
        for (int m = rng() % 3; m > 0; --m) {
            TextMention tm;
            tm.mention_id = "m" + std::to_string(++mention_n);
            tm.entity_id = ent.entity_id;
            tm.anchor_id = "cd-" + ent.entity_id + "-" + tm.mention_id;
            tm.phrase = random_text(rng);
            bool caption = rng() % 2;
            tm.location.kind = caption ? LocationKind::Caption : LocationKind::Body;
            tm.location.passage_or_figure = caption ? ent.figure_number : static_cast<int>(rng() % 20);
            if (rng() % 2) tm.location.sentence_index = static_cast<int>(rng() % 5);
            std::size_t begin = rng() % 200;
            tm.location.char_span = {begin, begin + 1 + rng() % 30};
            ent.mentions.push_back(tm.mention_id);
            b.mentions.push_back(tm);
            b.links.push_back({"l" + std::to_string(++link_n), ent.entity_id, std::string(kDirectReference),
                               {tm.mention_id, std::nullopt}});
        }
        if (rng() % 2) {
            int passage = static_cast<int>(rng() % 20);
            b.links.push_back({"l" + std::to_string(++link_n), ent.entity_id, std::string(kRelatedPassage),
                               {std::nullopt, passage}});
        }
        if (rng() % 2) {
            EntityDescription d{ent.entity_id, random_text(rng)};
            if (rng() % 2) d.related_passage_ids = {static_cast<int>(rng() % 9)};
            if (rng() % 3 == 0) d.unresolved_related = {random_text(rng)};
            if (rng() % 4 == 0) d.manual_override = random_text(rng);
            b.descriptions.push_back(d);
        }
        if (rng() % 5 == 0) ent.extra["note"] = {{"k", static_cast<int>(rng() % 7)}};
        b.scan_sequences[ent.figure_number].push_back(ent.entity_id);
        b.entities.push_back(ent);
    }
    for (int d = rng() % 3; d > 0; --d) b.diagnostics.push_back({"CODE_" + std::to_string(d), "s", random_text(rng)});
    if (rng() % 3 == 0) b.extra["generator"] = "property";
    return b;
}

}  // namespace crossdoc::testing
