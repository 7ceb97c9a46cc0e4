#pragma once

// The entity-link graph of one document and the queries the reader needs.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossdoc/ingest.hpp"

namespace crossdoc::linkgraph {

using ingest::Document;
using ingest::Figure;
using ingest::Passage;
using ingest::ReferencePattern;
using ingest::Span;
using ingest::default_reference_pattern;

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kBundleFormatVersion = "1.0.0";
inline constexpr std::string_view kDirectReference = "direct_reference";
inline constexpr std::string_view kRelatedPassage = "related_passage";

struct NormPoint {
    double x = 0;  // fraction of image width
    double y = 0;  // fraction of image height
    friend bool operator==(const NormPoint&, const NormPoint&) = default;
};

enum class LocationKind { Caption, Body };

struct MentionLocation {
    LocationKind kind = LocationKind::Body;
    // Passage index for body text, figure number for captions.
    int passage_or_figure = 0;
    std::optional<int> sentence_index;
    Span char_span;  // UTF-8 byte offsets into the passage text or caption

    friend bool operator==(const MentionLocation&, const MentionLocation&) = default;
};

struct TextMention {
    std::string mention_id;
    MentionLocation location;
    std::string phrase;
    std::string entity_id;
    std::string anchor_id;  // cd-e<N>-m<N>
    Json extra = Json::object();

    friend bool operator==(const TextMention&, const TextMention&) = default;
};

struct Entity {
    std::string entity_id;
    int figure_number = 0;
    std::string label;
    std::vector<NormPoint> points;
    std::vector<std::string> mentions;
    bool provisional = false;  // introduced by the linking stage, not the image
    Json extra = Json::object();

    friend bool operator==(const Entity&, const Entity&) = default;
};

struct EntityDescription {
    std::string entity_id;
    std::string text;
    std::vector<int> related_passage_ids;
    std::vector<std::string> unresolved_related;
    std::optional<std::string> manual_override;
    Json extra = Json::object();

    const std::string& display_text() const { return manual_override ? *manual_override : text; }
    friend bool operator==(const EntityDescription&, const EntityDescription&) = default;
};

struct LinkTarget {
    std::optional<std::string> mention_id;
    std::optional<int> passage_index;
    friend bool operator==(const LinkTarget&, const LinkTarget&) = default;
};

struct Link {
    std::string link_id;
    std::string entity_id;
    std::string kind;  // direct_reference | related_passage; other strings are preserved
    LinkTarget target;
    Json extra = Json::object();

    friend bool operator==(const Link&, const Link&) = default;
};

struct FigureRecord {
    int figure_number = 0;
    std::string element_id;
    std::string image_ref;
    std::optional<int> width;
    std::optional<int> height;
    Json extra = Json::object();

    friend bool operator==(const FigureRecord&, const FigureRecord&) = default;
};

struct Diagnostic {
    std::string code;
    std::string subject;
    std::string message;
    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

struct AugmentationBundle {
    std::string format_version{kBundleFormatVersion};
    std::string doc_id;
    std::string source_hash;
    std::vector<FigureRecord> figures;
    std::vector<Entity> entities;
    std::vector<TextMention> mentions;
    std::vector<Link> links;
    std::vector<EntityDescription> descriptions;
    std::map<int, std::vector<std::string>> scan_sequences;
    std::vector<Diagnostic> diagnostics;
    Json extra = Json::object();

    const Entity* entity(std::string_view id) const;
    const TextMention* mention(std::string_view id) const;
    const EntityDescription* description(std::string_view entity_id) const;
    const FigureRecord* figure(int figure_number) const;

    friend bool operator==(const AugmentationBundle&, const AugmentationBundle&) = default;
};

// ---- validation -----------------------------------------------------------

struct Finding {
    std::string code;
    std::string subject_id;
    std::string message;
    friend bool operator==(const Finding&, const Finding&) = default;
};

struct ValidationStats {
    std::size_t entities = 0;
    std::size_t points = 0;
    std::size_t mentions = 0;
    std::size_t direct_links = 0;
    std::size_t related_links = 0;
    std::size_t other_links = 0;
};

struct ValidationReport {
    std::vector<Finding> errors;
    std::vector<Finding> warnings;
    ValidationStats stats;

    bool ok() const { return errors.empty(); }
    bool has_error(std::string_view code) const;
};

// A DOC_MISMATCH finding is reported alone; nothing else is checked.
ValidationReport validate_bundle(const AugmentationBundle& bundle, const Document& doc,
                                 const ReferencePattern& pattern = default_reference_pattern());

Json report_to_json(const ValidationReport& report);

// ---- pruning --------------------------------------------------------------

// Drops entities with neither a direct reference nor a related passage, and
// provisional entities with no points and fewer than two mentions. Their
// mentions, links, descriptions and scan entries go with them.
AugmentationBundle prune_unlinked_entities(const AugmentationBundle& bundle);

// Scan order: first caption mention, then topmost-leftmost point, then
// bundle order.
std::map<int, std::vector<std::string>> compute_scan_sequences(const AugmentationBundle& bundle);

// ---- queries --------------------------------------------------------------

struct EntityContext {
    Entity entity;
    FigureRecord figure;
    std::optional<EntityDescription> description;
    std::vector<TextMention> direct_references;
    std::vector<int> related_passages;
};

EntityContext entity_context(const AugmentationBundle& bundle, std::string_view entity_id);
Json context_to_json(const EntityContext& context);

struct ScanStep {
    std::string entity_id;
    std::string label;
    std::vector<NormPoint> points;
    std::string description_text;
};

std::vector<ScanStep> figure_scan_sequence(const AugmentationBundle& bundle, int figure_number);

struct PointLocation {
    int figure_number = 0;
    NormPoint point;
};
struct PassageLocation {
    int passage_index = 0;
};
using GraphLocation = std::variant<std::string /* mention id */, PointLocation, PassageLocation>;

std::vector<std::string> reverse_lookup(const AugmentationBundle& bundle, const GraphLocation& location);

// Every target an entity links to, in link order.
std::vector<GraphLocation> forward_targets(const AugmentationBundle& bundle, std::string_view entity_id);

}  // namespace crossdoc::linkgraph
