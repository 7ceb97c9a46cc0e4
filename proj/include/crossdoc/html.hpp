#pragma once

// Lenient HTML tree with byte-accurate source ranges.
//
// The tree never owns or rewrites the source; every node records where it
// came from so that later stages can splice markup into the original bytes
// without disturbing anything else.

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crossdoc::html {

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

struct ByteRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
    bool contains(std::size_t pos) const { return pos >= begin && pos < end; }
    friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct Attribute {
    std::string name;   // lower-cased
    std::string value;  // entity-decoded
};

enum class NodeKind { Element, Text, Comment };

struct Node {
    NodeKind kind = NodeKind::Element;
    std::string tag;  // lower-cased; empty for text/comment
    std::vector<Attribute> attributes;
    ByteRange start_tag;  // text/comment nodes: the raw text range
    std::optional<ByteRange> end_tag;
    ByteRange outer;  // whole element including (possibly implied) end
    std::size_t parent = npos;
    std::vector<std::size_t> children;

    const std::string* attribute(std::string_view name) const;
    bool has_class(std::string_view cls) const;
};

class Tree {
public:
    // Never throws; unparseable bytes degrade into text nodes.
    static Tree parse(std::string_view source);

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(std::size_t i) const { return nodes_[i]; }
    std::size_t root() const { return 0; }
    std::size_t element_count() const { return element_count_; }

    // Pre-order traversal of the subtree under `start` (inclusive).
    template <typename Fn>
    void walk(std::size_t start, Fn&& fn) const {
        std::vector<std::size_t> stack{start};
        while (!stack.empty()) {
            std::size_t i = stack.back();
            stack.pop_back();
            if (!fn(i)) continue;  // false prunes the subtree
            const auto& ch = nodes_[i].children;
            for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
        }
    }

    bool has_ancestor(std::size_t i, std::string_view tag) const;

private:
    std::vector<Node> nodes_;
    std::size_t element_count_ = 0;
};

// Plain text of a subtree with whitespace runs collapsed to single spaces and
// trimmed. `source_of[k]` is the source range that produced text byte k; the
// bytes of a decoded character reference all share the reference's range.
struct MappedText {
    std::string text;
    std::vector<ByteRange> source_of;
};

MappedText extract_text(const Tree& tree, std::string_view source, std::size_t node);

// Splits text range [begin, end) into maximal pieces whose source bytes are
// contiguous (no markup in between). Each piece is a source range.
std::vector<ByteRange> source_segments(const MappedText& mapped, std::size_t begin, std::size_t end);

std::string decode_entities(std::string_view raw);
std::string escape_text(std::string_view text);
std::string escape_attribute(std::string_view text);

bool is_void_element(std::string_view tag);

// Splices insertions, replacements and removals into a source buffer.
// Edits at the same position are applied in ascending `order`, then in the
// order they were added. Edits falling inside a removed range are dropped.
class Rewriter {
public:
    explicit Rewriter(std::string_view source) : source_(source) {}

    void insert(std::size_t pos, std::string text, int order = 0);
    void replace(ByteRange range, std::string text);
    void remove(ByteRange range);

    std::string apply() const;

private:
    struct Edit {
        std::size_t pos;
        std::size_t erase;
        int order;
        std::size_t seq;
        std::string text;
    };
    std::string_view source_;
    std::vector<Edit> edits_;
};

}  // namespace crossdoc::html
