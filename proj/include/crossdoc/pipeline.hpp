#pragma once

// Annotation stages: identify entities in a figure, point at them, link
// caption/passage phrases to them, describe them, and assemble a bundle.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "crossdoc/config.hpp"
#include "crossdoc/ingest.hpp"
#include "crossdoc/linkgraph.hpp"
#include "crossdoc/providers.hpp"

namespace crossdoc::pipeline {

using ingest::Document;
using ingest::Figure;
using ingest::ReferencePattern;
using ingest::Span;
using linkgraph::AugmentationBundle;
using linkgraph::Diagnostic;
using linkgraph::Json;
using linkgraph::NormPoint;
using linkgraph::ValidationReport;

// Lowercased, whitespace-collapsed, leading article removed. Labels with the
// same key are the same entity.
std::string label_key(std::string_view label);

struct PromptOptions {
    IdentificationPrompt identification = IdentificationPrompt::Paper;
    bool fix_link_prompt_typo = false;
};

// Figure image on disk plus the paper attachment.
struct FigureInput {
    const Figure* figure = nullptr;
    std::filesystem::path image_path;
};

std::vector<std::string> identify_visual_entities(const FigureInput& figure, const Document& doc,
                                                  providers::ChatProvider& chat, const PromptOptions& options = {});

// Parses an identification answer for one figure.
std::vector<std::string> parse_identification(std::string_view raw, int figure_number, IdentificationPrompt variant);

struct LabelFailure {
    std::string label;
    ErrorCode code;
    std::string message;
};

struct LocateResult {
    std::vector<std::pair<std::string, std::vector<NormPoint>>> points;  // label order preserved
    std::vector<LabelFailure> failures;

    std::size_t total_points() const;
};

LocateResult locate_entities(const FigureInput& figure, const std::vector<std::string>& labels,
                             providers::PointingProvider& pointing);

// ---- linking --------------------------------------------------------------

struct PhraseMatch {
    std::string phrase;  // the unit text at span
    std::string entity_label;
    Span span;  // in the unit text
};

struct LinkedSentence {
    std::string sentence;  // the unit text at span
    Span span;
    std::vector<PhraseMatch> phrases;
};

struct LinkResult {
    std::vector<LinkedSentence> sentences;
    bool realigned = false;  // keys matched only after ignoring whitespace
    std::vector<Diagnostic> issues;  // PHRASE_NOT_FOUND and friends
};

LinkResult link_text_mentions(std::string_view unit_text, const std::vector<std::string>& entities,
                              providers::ChatProvider& chat, const PromptOptions& options = {},
                              std::string tag = {});

// Parses a linking answer against the true unit text. Throws
// ReconstructionMismatch (message carries an aligned diff) or
// UnparsableResponse.
LinkResult parse_link_response(std::string_view raw, std::string_view unit_text, std::string_view tag = {});

struct DiffOp {
    enum class Kind { Equal, Delete, Insert };
    Kind kind;
    std::string text;
    friend bool operator==(const DiffOp&, const DiffOp&) = default;
};

// Character-level edit script turning `expected` into `actual`.
std::vector<DiffOp> aligned_diff(std::string_view expected, std::string_view actual);
std::string render_diff(const std::vector<DiffOp>& ops, std::size_t context = 20);

// ---- descriptions ---------------------------------------------------------

struct DescriptionDraft {
    std::string text;
    std::vector<int> related_passage_ids;
    std::vector<std::string> unresolved_related;
    bool truncated = false;
};

struct DescriptionResult {
    std::map<std::string, DescriptionDraft> by_label;  // keyed by the caller's label spelling
    std::vector<Diagnostic> issues;
};

DescriptionResult generate_descriptions(const FigureInput& figure, const std::vector<std::string>& labels,
                                        const Document& doc, providers::ChatProvider& chat);

DescriptionResult parse_descriptions(std::string_view raw, const std::vector<std::string>& labels,
                                     const Document& doc, std::string_view subject = {});

// Passage holding `sentence`: normalized containment first, then token
// overlap. nullopt when nothing is close enough.
std::optional<int> resolve_related_sentence(const Document& doc, std::string_view sentence);

// Keeps at most max_sentences sentences; longer text is cut and marked with an
// ellipsis.
std::string limit_sentences(std::string_view text, std::size_t max_sentences, bool* truncated);

// ---- orchestration --------------------------------------------------------

struct PipelineOptions {
    PromptOptions prompts;
    bool pruning = true;
    bool point_provisional = true;
    int workers = 1;
    ReferencePattern references;
    std::filesystem::path asset_root;  // image_ref values resolve against this
};

PipelineOptions options_from_config(const Config& config, std::filesystem::path asset_root);

struct PipelineResult {
    AugmentationBundle bundle;
    Json report;
    ValidationReport validation;
};

// PipelineFailed, with the stage report of the failed run.
class PipelineError : public Error {
public:
    PipelineError(const std::string& message, Json report)
        : Error(ErrorCode::PipelineFailed, message), report_(std::move(report)) {}
    const Json& report() const { return report_; }

private:
    Json report_;
};

// Runs every stage per figure, isolating failures. Throws PipelineFailed if
// figures exist and none was annotated, or if the assembled bundle does not
// validate.
PipelineResult run_pipeline(const Document& doc, const ProviderSet& providers, const PipelineOptions& options);

}  // namespace crossdoc::pipeline
