#include "crossdoc/config.hpp"

#include <gtest/gtest.h>

#include "crossdoc/error.hpp"
#include "test_util.hpp"

namespace crossdoc {
namespace {

namespace td = crossdoc::testing;
using nlohmann::json;

ErrorCode error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::InvalidArgument;
}

TEST(Config, Defaults) {
    Config c = parse_config(json::object());
    EXPECT_EQ(c.mode, ProviderMode::Mock);
    EXPECT_TRUE(c.pruning);
    EXPECT_EQ(c.identification_prompt, IdentificationPrompt::Paper);
    EXPECT_FALSE(c.cors_origin);
}

TEST(Config, RelativePathsResolveAgainstBase) {
    Config c = parse_config(json{{"responses", "r.json"}, {"cache_dir", "cache"}}, "/srv/cfg");
    EXPECT_EQ(c.responses, std::filesystem::path("/srv/cfg/r.json"));
    EXPECT_EQ(c.cache_dir, std::filesystem::path("/srv/cfg/cache"));
}

TEST(Config, FieldsParse) {
    Config c = parse_config(json{{"mode", "replay"},
                                 {"identification_prompt", "image"},
                                 {"pruning", false},
                                 {"workers", 4},
                                 {"strip_selectors", {".toolbar", "#nav"}},
                                 {"cors_origin", "http://localhost:5173"},
                                 {"chat", {{"model_id", "gpt-x"}, {"accepts_documents", false}}}});
    EXPECT_EQ(c.mode, ProviderMode::Replay);
    EXPECT_EQ(c.identification_prompt, IdentificationPrompt::Image);
    EXPECT_FALSE(c.pruning);
    EXPECT_EQ(c.workers, 4);
    EXPECT_EQ(c.strip_selectors.size(), 2u);
    EXPECT_EQ(*c.cors_origin, "http://localhost:5173");
    EXPECT_EQ(c.chat.model_id, "gpt-x");
    EXPECT_FALSE(c.chat.accepts_documents);
}

TEST(Config, Rejections) {
    EXPECT_EQ(error_of([] { parse_config(json{{"mdoe", "mock"}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_config(json{{"pruning", "yes"}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_config(json{{"mode", "offline"}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_config(json{{"workers", 0}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { parse_config(json{{"chat", {{"temperature", 1}}}}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(error_of([] { load_config("/nonexistent/crossdoc.json"); }), ErrorCode::Io);
}

TEST(Config, ReferencePatternsExtendDefaults) {
    Config c = parse_config(json{{"reference_patterns", {"Abb\\.\\s*{N}"}}});
    auto pattern = reference_pattern(c);
    EXPECT_EQ(pattern.find("siehe Abb. 4", 4).size(), 1u);
    EXPECT_EQ(pattern.find("see Figure 4", 4).size(), 1u);
}

TEST(Config, GoldenMockProviders) {
    Config c = load_config(td::data_path("golden/paper01.config.json"));
    auto set = make_providers(c);
    ASSERT_TRUE(set.chat);
    ASSERT_TRUE(set.pointing);
}

}  // namespace
}  // namespace crossdoc
