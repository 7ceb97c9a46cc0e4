#pragma once

// Bundle files and the two rendered variants of a document.

#include <string>
#include <string_view>
#include <vector>

#include "crossdoc/ingest.hpp"
#include "crossdoc/linkgraph.hpp"

namespace crossdoc::bundler {

using ingest::Document;
using linkgraph::AugmentationBundle;
using linkgraph::Json;

Json bundle_to_json(const AugmentationBundle& bundle);

// SchemaViolation messages start with the JSON pointer of the offending
// value. A major version other than 1 is VersionUnsupported.
AugmentationBundle bundle_from_json(const Json& j);

// Two-space indented JSON with a trailing newline.
std::string write_bundle(const AugmentationBundle& bundle);
AugmentationBundle read_bundle(std::string_view bytes);

struct RenderOptions {
    // "tag", ".class", "#id" or "tag.class". Matching elements are removed
    // from both variants.
    std::vector<std::string> strip_selectors{".toolbar"};
};

// Baseline variant: hyperlinks become inert spans, stripped elements are
// gone, nothing else changes.
std::string emit_baseline_html(const Document& doc, const RenderOptions& options = {});

// Baseline plus phrase anchors and point overlays. Removing the injected
// markup (strip_augmentation) gives the baseline bytes back.
std::string augment_html(const Document& doc, const AugmentationBundle& bundle, const RenderOptions& options = {});

std::string strip_augmentation(std::string_view augmented_html);

// Reading-order passage texts of any HTML rendering.
std::vector<std::string> passage_texts(std::string_view html);

// Shared stylesheet injected into both variants.
std::string_view stylesheet();

}  // namespace crossdoc::bundler
