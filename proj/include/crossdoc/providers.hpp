#pragma once

// Narrow contracts over the external vision-language services.
//
// Two roles exist: a chat model (entity identification, linking,
// descriptions) and a pointing model (coordinates for a named target). Each
// has a deterministic mock, a live HTTP implementation, and a cache-backed
// decorator that makes replays exact and network-free.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossdoc/error.hpp"

namespace crossdoc::providers {

// Error that keeps the offending model output for diagnostics.
class ResponseError : public Error {
public:
    ResponseError(ErrorCode code, const std::string& message, std::string raw)
        : Error(code, message), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

struct Capabilities {
    bool accepts_images = true;
    bool accepts_documents = true;
};

struct ChatConfig {
    std::string model_id;
    std::optional<std::string> reasoning_level;  // passed through verbatim
};

struct Attachment {
    enum class Kind { Image, Document };
    Kind kind = Kind::Image;
    std::string path;         // file on disk, may be empty for inline documents
    std::string inline_text;  // document content supplied directly
    std::string name;         // display name (file name or label)
};

struct ChatRequest {
    std::string instructions;
    std::string user_content;
    std::vector<Attachment> attachments;
    // Logical request name ("identify/fig1"). Not part of the digest; mocks
    // use it to look up canned responses.
    std::string tag;
};

struct RawModelResponse {
    std::string request_digest;
    std::string text;
    std::int64_t received_at = 0;  // unix seconds; 0 for cached/mock responses
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual Capabilities capabilities() const = 0;
    virtual const ChatConfig& config() const = 0;
    virtual RawModelResponse complete(const ChatRequest& request) = 0;
};

// Digest over model id, reasoning level, instructions, user content and the
// bytes (not paths) of every attachment.
std::string request_digest(const ChatConfig& config, const ChatRequest& request);

// Checks capabilities, then delegates to the provider.
RawModelResponse chat(ChatProvider& provider, const ChatRequest& request);

// ---- pointing -------------------------------------------------------------

struct PointingConfig {
    std::string model_id;
};

// Raw coordinate convention of a pointing service.
enum class CoordinateFormat {
    Percent,   // 0..100 of width/height, e.g. <point x="61.5" y="40.6">
    Pixels,    // image pixel coordinates
    Fraction,  // already in 0..1
};

CoordinateFormat parse_coordinate_format(std::string_view name);

struct ImageRef {
    std::string path;
    int width = 0;
    int height = 0;
    std::string digest;  // sha256 of the image bytes, empty if unreadable
};

// Throws ImageUnreadable when the file is missing or not a known image type.
ImageRef load_image_ref(const std::filesystem::path& path);

struct Point {
    double x = 0;  // fraction of width, [0, 1]
    double y = 0;  // fraction of height, [0, 1]
    friend bool operator==(const Point&, const Point&) = default;
};

struct PointRequest {
    ImageRef image;
    std::string target_label;
    std::string tag;

    std::string prompt() const;
};

class PointingProvider {
public:
    virtual ~PointingProvider() = default;
    virtual const PointingConfig& config() const = 0;
    virtual CoordinateFormat coordinate_format() const = 0;
    virtual RawModelResponse raw_point(const PointRequest& request) = 0;
};

std::string request_digest(const PointingConfig& config, const PointRequest& request);

// Accepts Molmo-style <point>/<points> tags, JSON [[x, y], ...] or
// [{"x":..,"y":..}]. Points outside the image are rejected, the edges are
// inside.
std::vector<Point> parse_points(std::string_view raw, CoordinateFormat format, int width, int height);

std::vector<Point> point(PointingProvider& provider, const ImageRef& image, std::string_view target_label,
                         std::string tag = {});

// ---- model JSON -----------------------------------------------------------

// First balanced JSON object or array in `text`, ignoring code fences and
// surrounding prose.
std::optional<std::string_view> first_json_value(std::string_view text);

// Extracts and strictly parses the first JSON value; UnparsableResponse on
// failure.
nlohmann::json parse_model_json(std::string_view raw);

// ---- cache ----------------------------------------------------------------

// Directory of <digest>.txt files holding raw response text. Writes are
// serialized and atomic (write to temp, rename).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& digest) const;
    void put(const std::string& digest, const std::string& text);
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

// Replay when `live` is null: a cache miss is ProviderUnavailable. With a
// live provider, misses are forwarded and the answer recorded.
class CachedChatProvider : public ChatProvider {
public:
    CachedChatProvider(std::shared_ptr<ChatProvider> live, ChatConfig config, Capabilities caps,
                       std::shared_ptr<ResponseCache> cache);

    Capabilities capabilities() const override { return caps_; }
    const ChatConfig& config() const override { return config_; }
    RawModelResponse complete(const ChatRequest& request) override;

private:
    std::shared_ptr<ChatProvider> live_;
    ChatConfig config_;
    Capabilities caps_;
    std::shared_ptr<ResponseCache> cache_;
};

class CachedPointingProvider : public PointingProvider {
public:
    CachedPointingProvider(std::shared_ptr<PointingProvider> live, PointingConfig config, CoordinateFormat format,
                           std::shared_ptr<ResponseCache> cache);

    const PointingConfig& config() const override { return config_; }
    CoordinateFormat coordinate_format() const override { return format_; }
    RawModelResponse raw_point(const PointRequest& request) override;

private:
    std::shared_ptr<PointingProvider> live_;
    PointingConfig config_;
    CoordinateFormat format_;
    std::shared_ptr<ResponseCache> cache_;
};

// ---- mocks ----------------------------------------------------------------

// Canned responses keyed by request tag, falling back to request digest.
class MockChatProvider : public ChatProvider {
public:
    explicit MockChatProvider(std::map<std::string, std::string> canned, ChatConfig config = {"mock-chat", {}},
                              Capabilities caps = {});

    Capabilities capabilities() const override { return caps_; }
    const ChatConfig& config() const override { return config_; }
    RawModelResponse complete(const ChatRequest& request) override;
    int calls() const { return calls_.load(); }

private:
    std::map<std::string, std::string> canned_;
    ChatConfig config_;
    Capabilities caps_;
    std::atomic<int> calls_{0};
};

// Canned raw pointing output keyed by tag, then by target label.
class MockPointingProvider : public PointingProvider {
public:
    MockPointingProvider(std::map<std::string, std::string> canned, CoordinateFormat format,
                         PointingConfig config = {"mock-pointing"});

    const PointingConfig& config() const override { return config_; }
    CoordinateFormat coordinate_format() const override { return format_; }
    RawModelResponse raw_point(const PointRequest& request) override;

private:
    std::map<std::string, std::string> canned_;
    CoordinateFormat format_;
    PointingConfig config_;
};

// ---- HTTP -----------------------------------------------------------------

struct HttpResponse {
    int status = 0;  // 0: connection failure
    std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const std::string& url, const Headers& headers, const std::string& body) = 0;
};

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

// Retries 429, 5xx and connection failures with exponential backoff. After
// `max_attempts` the last failure is reported as RateLimited (429) or
// ProviderUnavailable.
HttpResponse post_with_retry(HttpTransport& transport, const std::string& url, const Headers& headers,
                             const std::string& body, const RetryPolicy& policy);

// OpenAI-compatible chat completions endpoint.
class OpenAIChatProvider : public ChatProvider {
public:
    OpenAIChatProvider(ChatConfig config, std::string endpoint, std::string api_key,
                       std::shared_ptr<HttpTransport> transport, RetryPolicy retry, Capabilities caps = {});

    Capabilities capabilities() const override { return caps_; }
    const ChatConfig& config() const override { return config_; }
    RawModelResponse complete(const ChatRequest& request) override;

    // Request body sent for `request`; exposed for tests.
    nlohmann::json build_body(const ChatRequest& request) const;

private:
    ChatConfig config_;
    std::string endpoint_;
    std::string api_key_;
    std::shared_ptr<HttpTransport> transport_;
    RetryPolicy retry_;
    Capabilities caps_;
};

// Pointing model served behind an OpenAI-compatible endpoint (e.g. Molmo
// under vLLM). Output is raw text with <point> tags in percent units.
class OpenAIPointingProvider : public PointingProvider {
public:
    OpenAIPointingProvider(PointingConfig config, std::string endpoint, std::string api_key,
                           std::shared_ptr<HttpTransport> transport, RetryPolicy retry,
                           CoordinateFormat format = CoordinateFormat::Percent);

    const PointingConfig& config() const override { return config_; }
    CoordinateFormat coordinate_format() const override { return format_; }
    RawModelResponse raw_point(const PointRequest& request) override;

private:
    PointingConfig config_;
    std::string endpoint_;
    std::string api_key_;
    std::shared_ptr<HttpTransport> transport_;
    RetryPolicy retry_;
    CoordinateFormat format_;
};

}  // namespace crossdoc::providers
