#include "crossdoc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace crossdoc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + where + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key) || j[key].is_null()) return;
    try {
        out = j[key].get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::InvalidArgument, "config key '" + where + key + "' has the wrong type");
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

ProviderMode parse_mode(const std::string& s) {
    if (s == "mock") return ProviderMode::Mock;
    if (s == "replay") return ProviderMode::Replay;
    if (s == "live") return ProviderMode::Live;
    throw Error(ErrorCode::InvalidArgument, "mode must be mock, replay or live, not '" + s + "'");
}

std::string env_or_empty(const std::string& name) {
    if (name.empty()) return {};
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
}

std::map<std::string, std::string> canned_map(const json& j, const char* section) {
    std::map<std::string, std::string> out;
    if (!j.contains(section)) return out;
    if (!j[section].is_object()) throw Error(ErrorCode::InvalidArgument, std::string(section) + " must be an object");
    for (const auto& [k, v] : j[section].items()) out[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return out;
}

}  // namespace

Config parse_config(const json& j, const std::filesystem::path& base_dir) {
    check_keys(j,
               {"mode", "chat_provider", "pointing_provider", "chat", "pointing", "cache_dir", "responses",
                "max_attempts", "backoff_ms", "timeout_s", "pruning", "identification_prompt",
                "fix_link_prompt_typo", "point_provisional", "workers", "reference_patterns", "strip_selectors",
                "cors_origin"},
               "");
    Config c;
    std::string mode = "mock";
    read(j, "mode", mode, "");
    c.mode = parse_mode(mode);
    read(j, "chat_provider", c.chat_provider, "");
    read(j, "pointing_provider", c.pointing_provider, "");
    for (const auto* p : {&c.chat_provider, &c.pointing_provider}) {
        if (*p != "openai" && *p != "mock") throw Error(ErrorCode::InvalidArgument, "unknown provider '" + *p + "'");
    }

    if (j.contains("chat")) {
        const json& cj = j["chat"];
        check_keys(cj, {"model_id", "reasoning_level", "endpoint", "api_key_env", "accepts_images", "accepts_documents"},
                   "chat.");
        read(cj, "model_id", c.chat.model_id, "chat.");
        if (cj.contains("reasoning_level") && !cj["reasoning_level"].is_null()) {
            std::string level;
            read(cj, "reasoning_level", level, "chat.");
            c.chat.reasoning_level = level;
        }
        read(cj, "endpoint", c.chat.endpoint, "chat.");
        read(cj, "api_key_env", c.chat.api_key_env, "chat.");
        read(cj, "accepts_images", c.chat.accepts_images, "chat.");
        read(cj, "accepts_documents", c.chat.accepts_documents, "chat.");
    }
    if (j.contains("pointing")) {
        const json& pj = j["pointing"];
        check_keys(pj, {"model_id", "endpoint", "api_key_env", "coordinate_format"}, "pointing.");
        read(pj, "model_id", c.pointing.model_id, "pointing.");
        read(pj, "endpoint", c.pointing.endpoint, "pointing.");
        read(pj, "api_key_env", c.pointing.api_key_env, "pointing.");
        std::string fmt = "percent";
        read(pj, "coordinate_format", fmt, "pointing.");
        c.pointing.coordinate_format = providers::parse_coordinate_format(fmt);
    }

    std::string cache_dir = c.cache_dir.string();
    read(j, "cache_dir", cache_dir, "");
    c.cache_dir = resolve(base_dir, cache_dir);
    std::string responses;
    read(j, "responses", responses, "");
    c.responses = resolve(base_dir, responses);

    read(j, "max_attempts", c.max_attempts, "");
    read(j, "backoff_ms", c.backoff_ms, "");
    read(j, "timeout_s", c.timeout_s, "");
    read(j, "workers", c.workers, "");
    if (c.max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "max_attempts must be at least 1");
    if (c.backoff_ms < 0 || c.timeout_s < 1) throw Error(ErrorCode::InvalidArgument, "invalid backoff or timeout");
    if (c.workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");

    read(j, "pruning", c.pruning, "");
    std::string ident = "paper";
    read(j, "identification_prompt", ident, "");
    if (ident == "paper") {
        c.identification_prompt = IdentificationPrompt::Paper;
    } else if (ident == "image") {
        c.identification_prompt = IdentificationPrompt::Image;
    } else {
        throw Error(ErrorCode::InvalidArgument, "identification_prompt must be paper or image");
    }
    read(j, "fix_link_prompt_typo", c.fix_link_prompt_typo, "");
    read(j, "point_provisional", c.point_provisional, "");
    read(j, "reference_patterns", c.reference_patterns, "");
    read(j, "strip_selectors", c.strip_selectors, "");
    if (j.contains("cors_origin") && !j["cors_origin"].is_null()) {
        std::string origin;
        read(j, "cors_origin", origin, "");
        c.cors_origin = origin;
    }
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "config " + path.string() + " is not valid JSON");
    return parse_config(j, path.parent_path());
}

ProviderSet make_providers(const Config& c, std::shared_ptr<providers::HttpTransport> transport) {
    using namespace providers;
    ChatConfig chat_cfg{c.chat.model_id, c.chat.reasoning_level};
    Capabilities caps{c.chat.accepts_images, c.chat.accepts_documents};
    PointingConfig point_cfg{c.pointing.model_id};

    if (c.mode == ProviderMode::Mock || (c.chat_provider == "mock" && c.pointing_provider == "mock")) {
        json canned = json::object();
        if (!c.responses.empty()) {
            std::ifstream in(c.responses);
            if (!in) throw Error(ErrorCode::Io, "cannot read mock responses " + c.responses.string());
            canned = json::parse(in, nullptr, false);
            if (canned.is_discarded() || !canned.is_object()) {
                throw Error(ErrorCode::InvalidArgument, "mock responses file is not a JSON object");
            }
        }
        return {std::make_shared<MockChatProvider>(canned_map(canned, "chat"), chat_cfg, caps),
                std::make_shared<MockPointingProvider>(canned_map(canned, "pointing"), c.pointing.coordinate_format,
                                                       point_cfg)};
    }

    auto cache = std::make_shared<ResponseCache>(c.cache_dir);
    std::shared_ptr<ChatProvider> live_chat;
    std::shared_ptr<PointingProvider> live_point;
    if (c.mode == ProviderMode::Live) {
        if (!transport) transport = make_http_transport(std::chrono::seconds(c.timeout_s));
        RetryPolicy retry;
        retry.max_attempts = c.max_attempts;
        retry.initial_backoff = std::chrono::milliseconds(c.backoff_ms);
        live_chat = std::make_shared<OpenAIChatProvider>(chat_cfg, c.chat.endpoint, env_or_empty(c.chat.api_key_env),
                                                         transport, retry, caps);
        live_point = std::make_shared<OpenAIPointingProvider>(point_cfg, c.pointing.endpoint,
                                                              env_or_empty(c.pointing.api_key_env), transport, retry,
                                                              c.pointing.coordinate_format);
    }
    return {std::make_shared<CachedChatProvider>(live_chat, chat_cfg, caps, cache),
            std::make_shared<CachedPointingProvider>(live_point, point_cfg, c.pointing.coordinate_format, cache)};
}

ingest::ReferencePattern reference_pattern(const Config& config) {
    ingest::ReferencePattern p;
    for (const auto& extra : config.reference_patterns) p.add_pattern(extra);
    return p;
}

}  // namespace crossdoc
