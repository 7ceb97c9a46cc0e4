#include "crossdoc/linkgraph.hpp"

#include <gtest/gtest.h>

#include <random>

#include "crossdoc/bundler.hpp"
#include "crossdoc/error.hpp"
#include "test_util.hpp"

namespace crossdoc::linkgraph {
namespace {

namespace td = crossdoc::testing;

ErrorCode error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::InvalidArgument;
}

Document golden_doc() { return ingest::parse_document(td::read_file(td::data_path("golden/paper01.html"))); }
AugmentationBundle golden() {
    return bundler::read_bundle(td::read_file(td::data_path("golden/paper01.bundle.json")));
}

bool has_kind(const AugmentationBundle& b, const std::string& entity, std::string_view kind) {
    for (const auto& l : b.links) {
        if (l.entity_id == entity && l.kind == kind) return true;
    }
    return false;
}

// Random bundle over the golden document with some entities left unlinked.
AugmentationBundle random_graph(std::mt19937& rng) {
    AugmentationBundle b = golden();
    std::uniform_real_distribution<double> unit(0, 1);
    int next = 100;
    for (int k = rng() % 6; k > 0; --k) {
        Entity e;
        e.entity_id = "e" + std::to_string(next++);
        e.figure_number = 1 + static_cast<int>(rng() % 3);
        e.label = "extra " + e.entity_id;
        e.provisional = rng() % 2;
        if (rng() % 2) e.points.push_back({unit(rng), unit(rng)});
        if (rng() % 3 == 0) {
            b.links.push_back({"l" + std::to_string(next++), e.entity_id, std::string(kRelatedPassage),
                               {std::nullopt, static_cast<int>(rng() % 12)}});
        }
        b.entities.push_back(e);
    }
    // Drop a random subset of existing links.
    std::vector<Link> kept;
    for (const auto& l : b.links) {
        if (rng() % 4) kept.push_back(l);
    }
    b.links = kept;
    return b;
}

// ---- validation ---------------------------------------------------------------

TEST(Validate, GoldenIsValid) {
    auto r = validate_bundle(golden(), golden_doc());
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(r.stats.entities, 12u);
    EXPECT_EQ(r.stats.direct_links, 20u);
    EXPECT_EQ(r.stats.related_links, 6u);
}

TEST(Validate, DocMismatchReportedAlone) {
    auto b = golden();
    b.source_hash = "sha256:beef";
    b.links.front().entity_id = "e404";
    auto r = validate_bundle(b, golden_doc());
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_EQ(r.errors[0].code, "DOC_MISMATCH");
}

TEST(Validate, DanglingReferences) {
    auto b = golden();
    b.links.front().entity_id = "e404";
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("UNKNOWN_ENTITY"));

    b = golden();
    b.links.front().target.mention_id = "m404";
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("UNKNOWN_TARGET"));

    b = golden();
    b.entities.front().figure_number = 9;
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("UNKNOWN_FIGURE"));
}

TEST(Validate, GeometryAndSpans) {
    auto b = golden();
    b.entities.front().points.push_back({1.2, 0.5});
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("POINT_OUT_OF_RANGE"));

    b = golden();
    b.mentions.front().location.char_span = {5000, 5004};
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("SPAN_OUT_OF_RANGE"));

    b = golden();
    b.mentions.front().phrase = "not what the text says";
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("PHRASE_MISMATCH"));
}

TEST(Validate, DuplicatesAndBidirectionality) {
    auto b = golden();
    b.entities.push_back(b.entities.front());
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("DUPLICATE_ID"));

    b = golden();
    b.entities.front().mentions.clear();
    EXPECT_TRUE(validate_bundle(b, golden_doc()).has_error("BIDIRECTIONAL_BROKEN"));
}

// ---- pruning ------------------------------------------------------------------

TEST(Prune, GoldenHasNoUnlinkedEntity) {
    auto b = golden();
    auto pruned = prune_unlinked_entities(b);
    EXPECT_EQ(pruned, b);
    for (const auto& e : pruned.entities) {
        EXPECT_TRUE(has_kind(pruned, e.entity_id, kDirectReference) || has_kind(pruned, e.entity_id, kRelatedPassage))
            << e.entity_id;
    }
}

TEST(Prune, PropertyRuleAndIdempotence) {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        auto b = random_graph(rng);
        auto once = prune_unlinked_entities(b);
        EXPECT_EQ(prune_unlinked_entities(once), once);
        for (const auto& e : once.entities) {
            bool direct = has_kind(once, e.entity_id, kDirectReference);
            bool related = has_kind(once, e.entity_id, kRelatedPassage);
            EXPECT_TRUE(direct || related) << e.entity_id;
            if (e.provisional) EXPECT_TRUE(!e.points.empty() || e.mentions.size() >= 2) << e.entity_id;
        }
        // Nothing points at a removed entity.
        for (const auto& l : once.links) EXPECT_NE(once.entity(l.entity_id), nullptr);
        for (const auto& m : once.mentions) EXPECT_NE(once.entity(m.entity_id), nullptr);
        for (const auto& d : once.descriptions) EXPECT_NE(once.entity(d.entity_id), nullptr);
        for (const auto& [fig, ids] : once.scan_sequences) {
            for (const auto& id : ids) EXPECT_NE(once.entity(id), nullptr);
        }
        // Entities that satisfy the rule survive.
        for (const auto& e : b.entities) {
            bool linked = has_kind(b, e.entity_id, kDirectReference) || has_kind(b, e.entity_id, kRelatedPassage);
            bool weak = e.provisional && e.points.empty() && e.mentions.size() < 2;
            EXPECT_EQ(once.entity(e.entity_id) != nullptr, linked && !weak) << e.entity_id;
        }
    }
}

// ---- scans and queries --------------------------------------------------------------

TEST(Scan, CaptionMentionOrderThenPoints) {
    auto b = golden();
    auto scans = compute_scan_sequences(b);
    EXPECT_EQ(scans, b.scan_sequences);
    EXPECT_EQ(scans.at(1), (std::vector<std::string>{"e2", "e1", "e4", "e6", "e3", "e5"}));
    EXPECT_EQ(scans.at(3), (std::vector<std::string>{"e12", "e14", "e13"}));
}

TEST(Scan, StepsCarryDescriptions) {
    auto steps = figure_scan_sequence(golden(), 2);
    ASSERT_EQ(steps.size(), 3u);
    EXPECT_EQ(steps[0].entity_id, "e8");
    EXPECT_EQ(steps[0].description_text, "Turns call audio into text and removes long silences.");
    EXPECT_EQ(error_of([] { figure_scan_sequence(golden(), 7); }), ErrorCode::NoEntities);
}

TEST(Context, MatchesSnapshot) {
    auto b = golden();
    auto snapshot = td::read_json(td::data_path("golden/paper01.contexts.json"));
    ASSERT_EQ(snapshot.size(), b.entities.size());
    for (const auto& e : b.entities) {
        EXPECT_EQ(nlohmann::json::parse(context_to_json(entity_context(b, e.entity_id)).dump()), snapshot[e.entity_id])
            << e.entity_id;
    }
}

TEST(Context, CountsPassThrough) {
    auto b = golden();
    auto c = entity_context(b, "e8");
    EXPECT_EQ(c.direct_references.size(), 3u);
    EXPECT_EQ(c.related_passages, (std::vector<int>{10}));
    EXPECT_EQ(error_of([&] { entity_context(b, "e7"); }), ErrorCode::UnknownEntity);
}

TEST(Queries, ForwardAndReverseAgree) {
    auto b = golden();
    for (const auto& e : b.entities) {
        for (const auto& loc : forward_targets(b, e.entity_id)) {
            auto back = reverse_lookup(b, loc);
            EXPECT_NE(std::find(back.begin(), back.end(), e.entity_id), back.end()) << e.entity_id;
        }
    }
    EXPECT_EQ(error_of([&] { reverse_lookup(b, std::string("m404")); }), ErrorCode::UnknownLocation);
    EXPECT_EQ(error_of([&] { reverse_lookup(b, PassageLocation{11}); }), ErrorCode::UnknownLocation);
}

}  // namespace
}  // namespace crossdoc::linkgraph
