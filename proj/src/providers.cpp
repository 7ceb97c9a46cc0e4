#include "crossdoc/providers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "crossdoc/digest.hpp"
#include "crossdoc/image.hpp"

namespace crossdoc::providers {

namespace {

std::optional<std::string> read_bytes(const std::string& path) {
    if (path.empty()) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string attachment_digest(const Attachment& a) {
    if (!a.inline_text.empty()) return sha256_hex(a.inline_text);
    if (auto bytes = read_bytes(a.path)) return sha256_hex(*bytes);
    return sha256_hex("path:" + a.path);
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

std::string request_digest(const ChatConfig& config, const ChatRequest& request) {
    nlohmann::json j;
    j["kind"] = "chat";
    j["model"] = config.model_id;
    j["reasoning"] = config.reasoning_level ? nlohmann::json(*config.reasoning_level) : nlohmann::json(nullptr);
    j["instructions"] = request.instructions;
    j["user"] = request.user_content;
    j["attachments"] = nlohmann::json::array();
    for (const auto& a : request.attachments) {
        j["attachments"].push_back(
            {{"kind", a.kind == Attachment::Kind::Image ? "image" : "document"}, {"sha256", attachment_digest(a)}});
    }
    return sha256_hex(j.dump());
}

RawModelResponse chat(ChatProvider& provider, const ChatRequest& request) {
    Capabilities caps = provider.capabilities();
    for (const auto& a : request.attachments) {
        if (a.kind == Attachment::Kind::Image && !caps.accepts_images) {
            throw Error(ErrorCode::CapabilityMismatch, "provider does not accept images");
        }
        if (a.kind == Attachment::Kind::Document && !caps.accepts_documents) {
            throw Error(ErrorCode::CapabilityMismatch, "provider does not accept documents");
        }
    }
    return provider.complete(request);
}

CoordinateFormat parse_coordinate_format(std::string_view name) {
    if (name == "percent") return CoordinateFormat::Percent;
    if (name == "pixels") return CoordinateFormat::Pixels;
    if (name == "fraction") return CoordinateFormat::Fraction;
    throw Error(ErrorCode::InvalidArgument, "unknown coordinate format '" + std::string(name) + "'");
}

ImageRef load_image_ref(const std::filesystem::path& path) {
    auto bytes = read_bytes(path.string());
    if (!bytes) throw Error(ErrorCode::ImageUnreadable, "cannot read image " + path.string());
    auto info = probe_image(*bytes);
    if (!info || info->width <= 0 || info->height <= 0) {
        throw Error(ErrorCode::ImageUnreadable, "unrecognized image format " + path.string());
    }
    return ImageRef{path.string(), info->width, info->height, sha256_hex(*bytes)};
}

std::string PointRequest::prompt() const { return "Point at " + target_label + "."; }

std::string request_digest(const PointingConfig& config, const PointRequest& request) {
    nlohmann::json j;
    j["kind"] = "point";
    j["model"] = config.model_id;
    j["prompt"] = request.prompt();
    j["image"] = request.image.digest.empty() ? sha256_hex("path:" + request.image.path) : request.image.digest;
    return sha256_hex(j.dump());
}

std::vector<Point> parse_points(std::string_view raw, CoordinateFormat format, int width, int height) {
    std::vector<std::pair<double, double>> rawpts;
    bool recognized = false;

    static const std::regex tag_re(R"(<points?\b([^>]*)>)", std::regex::icase);
    static const std::regex attr_re(R"re(\b([xy])(\d*)\s*=\s*["']?\s*(-?[0-9]*\.?[0-9]+(?:[eE][-+]?\d+)?))re",
                                    std::regex::icase);
    using It = std::string_view::const_iterator;
    for (std::regex_iterator<It> it(raw.begin(), raw.end(), tag_re), end; it != end; ++it) {
        recognized = true;
        std::string attrs = (*it)[1].str();
        std::map<std::string, double> xs, ys;
        std::vector<std::string> order;
        for (std::sregex_iterator a(attrs.begin(), attrs.end(), attr_re), ae; a != ae; ++a) {
            std::string axis = lower((*a)[1].str());
            std::string idx = (*a)[2].str();
            double v = std::stod((*a)[3].str());
            if (axis == "x") {
                if (!xs.count(idx)) order.push_back(idx);
                xs[idx] = v;
            } else {
                ys[idx] = v;
            }
        }
        for (const auto& idx : order) {
            if (!ys.count(idx)) {
                throw ResponseError(ErrorCode::UnparsablePointResponse, "point without y coordinate",
                                    std::string(raw));
            }
            rawpts.emplace_back(xs[idx], ys[idx]);
        }
    }

    if (!recognized) {
        if (auto js = first_json_value(raw)) {
            recognized = true;
            nlohmann::json j = nlohmann::json::parse(*js, nullptr, false);
            if (j.is_discarded()) {
                throw ResponseError(ErrorCode::UnparsablePointResponse, "invalid JSON point list", std::string(raw));
            }
            if (j.is_object() && j.contains("points")) j = j["points"];
            if (!j.is_array()) {
                throw ResponseError(ErrorCode::UnparsablePointResponse, "expected a point list", std::string(raw));
            }
            for (const auto& p : j) {
                if (p.is_array() && p.size() == 2 && p[0].is_number() && p[1].is_number()) {
                    rawpts.emplace_back(p[0].get<double>(), p[1].get<double>());
                } else if (p.is_object() && p.contains("x") && p.contains("y") && p["x"].is_number() &&
                           p["y"].is_number()) {
                    rawpts.emplace_back(p["x"].get<double>(), p["y"].get<double>());
                } else {
                    throw ResponseError(ErrorCode::UnparsablePointResponse, "malformed point entry",
                                        std::string(raw));
                }
            }
        }
    }

    if (!recognized) {
        std::string text = lower(std::string(raw));
        bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
        if (blank || text.find("none") != std::string::npos) return {};
        throw ResponseError(ErrorCode::UnparsablePointResponse, "no points found in response", std::string(raw));
    }

    if (format == CoordinateFormat::Pixels && (width <= 0 || height <= 0)) {
        throw ResponseError(ErrorCode::UnparsablePointResponse, "pixel coordinates need image dimensions",
                            std::string(raw));
    }
    std::vector<Point> out;
    out.reserve(rawpts.size());
    for (auto [rx, ry] : rawpts) {
        Point p;
        switch (format) {
            case CoordinateFormat::Percent: p = {rx / 100.0, ry / 100.0}; break;
            case CoordinateFormat::Pixels: p = {rx / width, ry / height}; break;
            case CoordinateFormat::Fraction: p = {rx, ry}; break;
        }
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            throw ResponseError(ErrorCode::UnparsablePointResponse, "point outside the image bounds",
                                std::string(raw));
        }
        out.push_back(p);
    }
    return out;
}

std::vector<Point> point(PointingProvider& provider, const ImageRef& image, std::string_view target_label,
                         std::string tag) {
    if (target_label.empty()) throw Error(ErrorCode::InvalidArgument, "empty pointing target");
    PointRequest req{image, std::string(target_label), std::move(tag)};
    RawModelResponse resp = provider.raw_point(req);
    return parse_points(resp.text, provider.coordinate_format(), image.width, image.height);
}

std::optional<std::string_view> first_json_value(std::string_view text) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        char open = text[start];
        if (open != '{' && open != '[') continue;
        std::vector<char> stack;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{' || c == '[') {
                stack.push_back(c == '{' ? '}' : ']');
            } else if (c == '}' || c == ']') {
                if (stack.empty() || stack.back() != c) break;
                stack.pop_back();
                if (stack.empty()) return text.substr(start, i - start + 1);
            }
        }
    }
    return std::nullopt;
}

nlohmann::json parse_model_json(std::string_view raw) {
    auto value = first_json_value(raw);
    if (!value) throw ResponseError(ErrorCode::UnparsableResponse, "no JSON value in response", std::string(raw));
    nlohmann::json j = nlohmann::json::parse(*value, nullptr, false);
    if (j.is_discarded()) throw ResponseError(ErrorCode::UnparsableResponse, "malformed JSON", std::string(raw));
    return j;
}

// ---- cache ----------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::optional<std::string> ResponseCache::get(const std::string& digest) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return read_bytes((dir_ / (digest + ".txt")).string());
}

void ResponseCache::put(const std::string& digest, const std::string& text) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    auto target = dir_ / (digest + ".txt");
    auto tmp = dir_ / (digest + ".txt.tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write cache file " + tmp.string());
        out << text;
    }
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot finalize cache file " + target.string() + ": " + ec.message());
}

CachedChatProvider::CachedChatProvider(std::shared_ptr<ChatProvider> live, ChatConfig config, Capabilities caps,
                                       std::shared_ptr<ResponseCache> cache)
    : live_(std::move(live)), config_(std::move(config)), caps_(caps), cache_(std::move(cache)) {}

RawModelResponse CachedChatProvider::complete(const ChatRequest& request) {
    std::string digest = request_digest(config_, request);
    if (auto hit = cache_->get(digest)) return {digest, *hit, 0};
    if (!live_) {
        throw Error(ErrorCode::ProviderUnavailable, "replay cache miss for '" + request.tag + "' (" + digest + ")");
    }
    RawModelResponse resp = live_->complete(request);
    cache_->put(digest, resp.text);
    resp.request_digest = digest;
    return resp;
}

CachedPointingProvider::CachedPointingProvider(std::shared_ptr<PointingProvider> live, PointingConfig config,
                                               CoordinateFormat format, std::shared_ptr<ResponseCache> cache)
    : live_(std::move(live)), config_(std::move(config)), format_(format), cache_(std::move(cache)) {}

RawModelResponse CachedPointingProvider::raw_point(const PointRequest& request) {
    std::string digest = request_digest(config_, request);
    if (auto hit = cache_->get(digest)) return {digest, *hit, 0};
    if (!live_) {
        throw Error(ErrorCode::ProviderUnavailable, "replay cache miss for '" + request.tag + "' (" + digest + ")");
    }
    RawModelResponse resp = live_->raw_point(request);
    cache_->put(digest, resp.text);
    resp.request_digest = digest;
    return resp;
}

// ---- mocks ----------------------------------------------------------------

MockChatProvider::MockChatProvider(std::map<std::string, std::string> canned, ChatConfig config, Capabilities caps)
    : canned_(std::move(canned)), config_(std::move(config)), caps_(caps) {}

RawModelResponse MockChatProvider::complete(const ChatRequest& request) {
    ++calls_;
    std::string digest = request_digest(config_, request);
    auto it = canned_.find(request.tag);
    if (it == canned_.end()) it = canned_.find(digest);
    if (it == canned_.end()) {
        throw Error(ErrorCode::ProviderUnavailable, "no canned response for '" + request.tag + "'");
    }
    return {digest, it->second, 0};
}

MockPointingProvider::MockPointingProvider(std::map<std::string, std::string> canned, CoordinateFormat format,
                                           PointingConfig config)
    : canned_(std::move(canned)), format_(format), config_(std::move(config)) {}

RawModelResponse MockPointingProvider::raw_point(const PointRequest& request) {
    std::string digest = request_digest(config_, request);
    auto it = canned_.find(request.tag);
    if (it == canned_.end()) it = canned_.find(request.target_label);
    if (it == canned_.end()) {
        throw Error(ErrorCode::ProviderUnavailable, "no canned point response for '" + request.target_label + "'");
    }
    return {digest, it->second, 0};
}

// ---- HTTP -----------------------------------------------------------------

HttpResponse post_with_retry(HttpTransport& transport, const std::string& url, const Headers& headers,
                             const std::string& body, const RetryPolicy& policy) {
    const int attempts = std::max(1, policy.max_attempts);
    auto backoff = policy.initial_backoff;
    HttpResponse last;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        last = transport.post(url, headers, body);
        if (last.status >= 200 && last.status < 300) return last;
        bool retryable = last.status == 0 || last.status == 429 || last.status >= 500;
        if (!retryable) {
            throw Error(ErrorCode::ProviderUnavailable, "HTTP " + std::to_string(last.status) + " from " + url);
        }
        if (attempt < attempts) {
            if (policy.sleep) {
                policy.sleep(backoff);
            } else {
                std::this_thread::sleep_for(backoff);
            }
            backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * policy.multiplier));
        }
    }
    std::string detail = " after " + std::to_string(attempts) + " attempts to " + url;
    if (last.status == 429) throw Error(ErrorCode::RateLimited, "rate limited" + detail);
    throw Error(ErrorCode::ProviderUnavailable,
                (last.status == 0 ? std::string("connection failed") : "HTTP " + std::to_string(last.status)) + detail);
}

namespace {

Headers auth_headers(const std::string& api_key) {
    Headers h;
    if (!api_key.empty()) h.emplace_back("Authorization", "Bearer " + api_key);
    return h;
}

nlohmann::json image_part(const std::string& path) {
    auto bytes = read_bytes(path);
    if (!bytes) throw Error(ErrorCode::ImageUnreadable, "cannot read image " + path);
    std::string media = media_type_for_path(path);
    return {{"type", "image_url"}, {"image_url", {{"url", "data:" + media + ";base64," + base64_encode(*bytes)}}}};
}

std::string completion_text(const HttpResponse& resp) {
    nlohmann::json j = nlohmann::json::parse(resp.body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw ResponseError(ErrorCode::UnparsableResponse, "unexpected completion payload", resp.body);
    }
    const auto& msg = j["choices"][0]["message"];
    if (!msg.contains("content") || !msg["content"].is_string()) {
        throw ResponseError(ErrorCode::UnparsableResponse, "completion has no text content", resp.body);
    }
    return msg["content"].get<std::string>();
}

std::int64_t now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

OpenAIChatProvider::OpenAIChatProvider(ChatConfig config, std::string endpoint, std::string api_key,
                                       std::shared_ptr<HttpTransport> transport, RetryPolicy retry, Capabilities caps)
    : config_(std::move(config)),
      endpoint_(std::move(endpoint)),
      api_key_(std::move(api_key)),
      transport_(std::move(transport)),
      retry_(std::move(retry)),
      caps_(caps) {}

nlohmann::json OpenAIChatProvider::build_body(const ChatRequest& request) const {
    nlohmann::json messages = nlohmann::json::array();
    if (!request.instructions.empty()) {
        messages.push_back({{"role", "developer"}, {"content", request.instructions}});
    }
    nlohmann::json parts = nlohmann::json::array();
    if (!request.user_content.empty()) parts.push_back({{"type", "text"}, {"text", request.user_content}});
    for (const auto& a : request.attachments) {
        if (a.kind == Attachment::Kind::Image) {
            parts.push_back(image_part(a.path));
        } else if (!a.inline_text.empty()) {
            parts.push_back({{"type", "text"}, {"text", "<document name=\"" + a.name + "\">\n" + a.inline_text +
                                                            "\n</document>"}});
        } else {
            auto bytes = read_bytes(a.path);
            if (!bytes) throw Error(ErrorCode::Io, "cannot read document " + a.path);
            parts.push_back({{"type", "file"},
                             {"file",
                              {{"filename", a.name.empty() ? std::filesystem::path(a.path).filename().string() : a.name},
                               {"file_data", "data:" + media_type_for_path(a.path) + ";base64," +
                                                 base64_encode(*bytes)}}}});
        }
    }
    if (parts.empty()) parts.push_back({{"type", "text"}, {"text", ""}});
    messages.push_back({{"role", "user"}, {"content", parts}});
    nlohmann::json body = {{"model", config_.model_id}, {"messages", messages}};
    if (config_.reasoning_level) body["reasoning_effort"] = *config_.reasoning_level;
    return body;
}

RawModelResponse OpenAIChatProvider::complete(const ChatRequest& request) {
    Headers headers = auth_headers(api_key_);
    HttpResponse resp =
        post_with_retry(*transport_, endpoint_ + "/chat/completions", headers, build_body(request).dump(), retry_);
    return {request_digest(config_, request), completion_text(resp), now_seconds()};
}

OpenAIPointingProvider::OpenAIPointingProvider(PointingConfig config, std::string endpoint, std::string api_key,
                                               std::shared_ptr<HttpTransport> transport, RetryPolicy retry,
                                               CoordinateFormat format)
    : config_(std::move(config)),
      endpoint_(std::move(endpoint)),
      api_key_(std::move(api_key)),
      transport_(std::move(transport)),
      retry_(std::move(retry)),
      format_(format) {}

RawModelResponse OpenAIPointingProvider::raw_point(const PointRequest& request) {
    nlohmann::json parts = nlohmann::json::array();
    parts.push_back(image_part(request.image.path));
    parts.push_back({{"type", "text"}, {"text", request.prompt()}});
    nlohmann::json body = {{"model", config_.model_id},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", parts}}})}};
    HttpResponse resp =
        post_with_retry(*transport_, endpoint_ + "/chat/completions", auth_headers(api_key_), body.dump(), retry_);
    return {request_digest(config_, request), completion_text(resp), now_seconds()};
}

}  // namespace crossdoc::providers
