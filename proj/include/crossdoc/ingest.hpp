#pragma once

// Document model for an HTML paper: reading-order passages, captioned
// figures, and the text-side facts derived from them.
//
// All character ranges are byte offsets into the UTF-8 `text` (or `caption`)
// they refer to, half-open.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossdoc/html.hpp"

namespace crossdoc::ingest {

using Span = html::ByteRange;

struct Passage {
    std::size_t index = 0;
    std::string element_id;
    std::string text;
    Span html_span;

    friend bool operator==(const Passage&, const Passage&) = default;
};

struct Figure {
    int figure_number = 0;
    std::string element_id;
    std::string image_ref;
    std::string caption;
    std::vector<std::string> caption_sentences;
    // Number of passages that precede the figure in reading order.
    std::size_t position_index = 0;
    Span html_span;

    friend bool operator==(const Figure&, const Figure&) = default;
};

struct PassageRef {
    std::size_t passage_index = 0;
    Span match_span;
    std::string matched_text;

    friend bool operator==(const PassageRef&, const PassageRef&) = default;
};

struct Document {
    std::string doc_id;
    std::vector<Passage> passages;
    std::vector<Figure> figures;
    std::string source_hash;  // "sha256:<hex>"
    std::string source;       // the original bytes, kept for rendering

    const Figure* figure(int figure_number) const;
    const Passage* passage(std::size_t index) const;

    friend bool operator==(const Document&, const Document&) = default;
};

// Where each Document element lives in the parsed source tree. Renderers use
// this to splice markup without re-deriving reading order.
struct Layout {
    html::Tree tree;
    std::size_t body = 0;
    std::vector<std::size_t> passage_nodes;
    std::vector<bool> passage_has_id;
    struct FigureNodes {
        std::size_t figure = 0;
        std::size_t image = 0;
        std::size_t caption = 0;
        bool has_id = false;
    };
    std::vector<FigureNodes> figure_nodes;
};

Layout layout_document(std::string_view source);

Document parse_document(std::string_view html_bytes);

// Matches figure citations ("Figure 3", "fig. 3", "Fig 3b", ...) for a given
// number. Extra patterns use "{N}" as the placeholder for the number and are
// compiled case-insensitively.
class ReferencePattern {
public:
    ReferencePattern();

    void add_pattern(std::string pattern);
    std::vector<Span> find(std::string_view text, int figure_number) const;

private:
    std::vector<std::string> patterns_;
};

const ReferencePattern& default_reference_pattern();

std::vector<PassageRef> find_figure_references(const Document& doc, int figure_number,
                                               const ReferencePattern& pattern = default_reference_pattern());

// Sentence boundaries of `text`. Spans tile the input exactly: whitespace
// following a sentence belongs to that sentence.
std::vector<Span> sentence_spans(std::string_view text);

std::vector<std::string> split_caption_sentences(std::string_view caption);

std::size_t paragraph_distance(const Document& doc, int figure_number, std::size_t passage_index);

bool is_valid_utf8(std::string_view bytes);

}  // namespace crossdoc::ingest
