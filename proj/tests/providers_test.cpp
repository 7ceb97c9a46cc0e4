#include "crossdoc/providers.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "test_util.hpp"

using namespace crossdoc;
using namespace crossdoc::providers;
namespace td = crossdoc::testing;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("crossdoc-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

class ScriptedTransport : public HttpTransport {
public:
    explicit ScriptedTransport(std::vector<HttpResponse> script) : script_(std::move(script)) {}
    HttpResponse post(const std::string& url, const Headers& headers, const std::string& body) override {
        last_url = url;
        last_headers = headers;
        last_body = body;
        HttpResponse r = script_[std::min(calls, script_.size() - 1)];
        ++calls;
        return r;
    }
    std::size_t calls = 0;
    std::string last_url;
    Headers last_headers;
    std::string last_body;

private:
    std::vector<HttpResponse> script_;
};

RetryPolicy no_sleep(int attempts) {
    RetryPolicy p;
    p.max_attempts = attempts;
    p.sleep = [](std::chrono::milliseconds) {};
    return p;
}

std::string completion(const std::string& text) {
    return nlohmann::json({{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}).dump();
}

}  // namespace

TEST(MockChat, ReturnsCannedTextByDigest) {
    ChatRequest req{"instr", "hello", {}, ""};
    std::string digest = request_digest(ChatConfig{"mock-chat", {}}, req);
    MockChatProvider mock(std::map<std::string, std::string>{{digest, "[]"}});
    EXPECT_EQ(chat(mock, req).text, "[]");
    EXPECT_EQ(mock.calls(), 1);
}

TEST(MockChat, TagLookupAndMiss) {
    MockChatProvider mock(std::map<std::string, std::string>{{"identify/fig1", "{\"fig1\": []}"}});
    EXPECT_EQ(mock.complete({"", "", {}, "identify/fig1"}).text, "{\"fig1\": []}");
    try {
        mock.complete({"", "", {}, "identify/fig2"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ProviderUnavailable);
    }
}

TEST(Chat, CapabilityMismatch) {
    MockChatProvider mock(std::map<std::string, std::string>{{"t", "x"}}, {"m", {}}, Capabilities{false, true});
    ChatRequest req{"", "", {{Attachment::Kind::Image, td::data_path("golden/figs/fig1.png").string(), "", "fig1"}}, "t"};
    try {
        chat(mock, req);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CapabilityMismatch);
    }
    EXPECT_EQ(mock.calls(), 0);
}

TEST(Digest, DependsOnBytesNotPath) {
    auto dir = temp_dir("digest");
    std::filesystem::copy_file(td::data_path("golden/figs/fig1.png").string(), dir / "copy.png");
    ChatConfig cfg{"m", "high"};
    ChatRequest a{"i", "u", {{Attachment::Kind::Image, td::data_path("golden/figs/fig1.png").string(), "", "a"}}, "x"};
    ChatRequest b{"i", "u", {{Attachment::Kind::Image, (dir / "copy.png").string(), "", "b"}}, "y"};
    EXPECT_EQ(request_digest(cfg, a), request_digest(cfg, b));
    ChatRequest c = a;
    c.attachments[0].path = td::data_path("golden/figs/fig2.png").string();
    EXPECT_NE(request_digest(cfg, a), request_digest(cfg, c));
    EXPECT_NE(request_digest(cfg, a), request_digest(ChatConfig{"m", "low"}, a));
    EXPECT_NE(request_digest(cfg, a), request_digest(ChatConfig{"m2", "high"}, a));
}

TEST(Points, PixelCenterNormalizes) {
    auto pts = parse_points("[[100, 50]]", CoordinateFormat::Pixels, 200, 100);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_DOUBLE_EQ(pts[0].x, 0.5);
    EXPECT_DOUBLE_EQ(pts[0].y, 0.5);
}

TEST(Points, EmptyListIsEmpty) {
    EXPECT_TRUE(parse_points("[]", CoordinateFormat::Pixels, 200, 100).empty());
    EXPECT_TRUE(parse_points("", CoordinateFormat::Percent, 200, 100).empty());
    EXPECT_TRUE(parse_points("There are none.", CoordinateFormat::Percent, 200, 100).empty());
}

TEST(Points, RightEdgeAccepted) {
    auto pts = parse_points("[[200, 0]]", CoordinateFormat::Pixels, 200, 100);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0].x, 1.0);
    auto pct = parse_points(R"(<point x="100.0" y="100" alt="x">x</point>)", CoordinateFormat::Percent, 0, 0);
    EXPECT_EQ(pct[0], (Point{1.0, 1.0}));
}

TEST(Points, OutsideRejectedWithRaw) {
    try {
        parse_points("[[201, 10]]", CoordinateFormat::Pixels, 200, 100);
        FAIL();
    } catch (const ResponseError& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnparsablePointResponse);
        EXPECT_EQ(e.raw(), "[[201, 10]]");
    }
    EXPECT_THROW(parse_points("[[-1, 10]]", CoordinateFormat::Pixels, 200, 100), ResponseError);
    EXPECT_THROW(parse_points("somewhere left", CoordinateFormat::Percent, 200, 100), ResponseError);
}

TEST(Points, MolmoTags) {
    auto one = parse_points(R"( <point x="61.5" y="40.6" alt="dashboard">dashboard</point>)",
                            CoordinateFormat::Percent, 0, 0);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_DOUBLE_EQ(one[0].x, 0.615);
    EXPECT_DOUBLE_EQ(one[0].y, 0.406);
    auto many = parse_points(R"(<points x1="10" y1="20" x2="30.5" y2="40" alt="a">a</points>)",
                             CoordinateFormat::Percent, 0, 0);
    ASSERT_EQ(many.size(), 2u);
    EXPECT_DOUBLE_EQ(many[1].x, 0.305);
    EXPECT_DOUBLE_EQ(many[1].y, 0.40);
}

TEST(Points, ObjectForm) {
    auto pts = parse_points(R"({"points": [{"x": 0.25, "y": 0.75}]})", CoordinateFormat::Fraction, 0, 0);
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0], (Point{0.25, 0.75}));
}

TEST(ModelJson, ToleratesFencesAndProse) {
    auto j = parse_model_json("Sure! Here it is:\n```json\n{\"fig1\": [\"A {b}\", \"c]\"]}\n```\nDone.");
    EXPECT_EQ(j["fig1"][1], "c]");
    EXPECT_THROW(parse_model_json("no json here"), ResponseError);
    EXPECT_THROW(parse_model_json("{\"a\": 1,}"), ResponseError);
}

TEST(Replay, ByteIdenticalAndNetworkFree) {
    auto dir = temp_dir("replay");
    auto cache = std::make_shared<ResponseCache>(dir);
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{200, completion("answer \xE2\x93\x90")}});
    ChatConfig cfg{"gpt-test", "high"};
    auto live = std::make_shared<OpenAIChatProvider>(cfg, "http://example.invalid/v1", "sk-secret", transport,
                                                     no_sleep(1));
    ChatRequest req{"instr", "user", {}, "identify/fig1"};

    CachedChatProvider recording(live, cfg, {}, cache);
    auto first = recording.complete(req);
    EXPECT_EQ(transport->calls, 1u);

    CachedChatProvider replay(nullptr, cfg, {}, cache);
    auto a = replay.complete(req);
    auto b = replay.complete(req);
    EXPECT_EQ(a.text, first.text);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(a.request_digest, first.request_digest);
    EXPECT_EQ(transport->calls, 1u);

    ChatRequest other = req;
    other.user_content = "different";
    try {
        replay.complete(other);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ProviderUnavailable);
    }
    EXPECT_EQ(transport->calls, 1u);
}

TEST(Retry, ExactlyNAttemptsOnServerError) {
    for (int n : {1, 2, 3, 5}) {
        ScriptedTransport t({{503, "busy"}});
        try {
            post_with_retry(t, "http://x/v1", {}, "{}", no_sleep(n));
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ProviderUnavailable);
        }
        EXPECT_EQ(t.calls, static_cast<std::size_t>(n));
    }
}

TEST(Retry, RateLimitedAndConnectionFailure) {
    ScriptedTransport limited({{429, ""}});
    try {
        post_with_retry(limited, "http://x", {}, "", no_sleep(4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RateLimited);
    }
    EXPECT_EQ(limited.calls, 4u);

    ScriptedTransport down({{0, ""}});
    EXPECT_THROW(post_with_retry(down, "http://x", {}, "", no_sleep(2)), Error);
    EXPECT_EQ(down.calls, 2u);
}

TEST(Retry, RecoversAndBacksOff) {
    ScriptedTransport t({{500, ""}, {429, ""}, {200, "ok"}});
    std::vector<long long> sleeps;
    RetryPolicy p;
    p.max_attempts = 3;
    p.initial_backoff = std::chrono::milliseconds(100);
    p.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
    EXPECT_EQ(post_with_retry(t, "http://x", {}, "", p).body, "ok");
    EXPECT_EQ(sleeps, (std::vector<long long>{100, 200}));
}

TEST(Retry, ClientErrorNotRetried) {
    ScriptedTransport t({{401, "unauthorized"}});
    EXPECT_THROW(post_with_retry(t, "http://x", {}, "", no_sleep(3)), Error);
    EXPECT_EQ(t.calls, 1u);
}

TEST(OpenAI, BodyShapeAndCredentialsStayOutOfErrors) {
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{500, "boom"}});
    OpenAIChatProvider p({"gpt-x", "medium"}, "http://host:8080/v1", "sk-secret", transport, no_sleep(2));
    ChatRequest req{"be brief",
                    "describe",
                    {{Attachment::Kind::Image, td::data_path("golden/figs/fig1.png").string(), "", "fig1.png"},
                     {Attachment::Kind::Document, "", "<p>paper</p>", "paper.html"}},
                    "t"};
    auto body = p.build_body(req);
    EXPECT_EQ(body["model"], "gpt-x");
    EXPECT_EQ(body["reasoning_effort"], "medium");
    EXPECT_EQ(body["messages"][0]["role"], "developer");
    auto parts = body["messages"][1]["content"];
    ASSERT_EQ(parts.size(), 3u);
    EXPECT_EQ(parts[1]["type"], "image_url");
    EXPECT_EQ(parts[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,iVBOR", 0), 0u);
    try {
        p.complete(req);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(std::string(e.what()).find("sk-secret"), std::string::npos);
    }
    EXPECT_EQ(transport->last_url, "http://host:8080/v1/chat/completions");
    EXPECT_EQ(transport->last_headers.at(0).second, "Bearer sk-secret");
}

TEST(OpenAI, UnparsablePayload) {
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{200, "<html>"}});
    OpenAIChatProvider p({"m", {}}, "http://h", "", transport, no_sleep(1));
    EXPECT_THROW(p.complete({"", "x", {}, ""}), ResponseError);
}

TEST(Pointing, MockPercentAndCache) {
    auto img = load_image_ref(td::data_path("golden/figs/fig1.png").string());
    EXPECT_EQ(img.width, 400);
    EXPECT_EQ(img.height, 200);
    auto mock = std::make_shared<MockPointingProvider>(
        std::map<std::string, std::string>{{"Dashboard", R"(<point x="50" y="25" alt="Dashboard">Dashboard</point>)"}},
        CoordinateFormat::Percent);
    auto cache = std::make_shared<ResponseCache>(temp_dir("pointcache"));
    CachedPointingProvider rec(mock, mock->config(), CoordinateFormat::Percent, cache);
    auto pts = point(rec, img, "Dashboard");
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(pts[0], (Point{0.5, 0.25}));
    CachedPointingProvider replay(nullptr, mock->config(), CoordinateFormat::Percent, cache);
    EXPECT_EQ(point(replay, img, "Dashboard"), pts);
    EXPECT_THROW(point(replay, img, "Chatbot"), Error);
}

TEST(Pointing, UnreadableImage) {
    try {
        load_image_ref("/nonexistent/fig.png");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ImageUnreadable);
    }
}
