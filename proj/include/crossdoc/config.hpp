#pragma once

// Toolchain configuration file (JSON).
//
//   {
//     "mode": "mock" | "replay" | "live",
//     "chat_provider": "openai" | "mock",
//     "pointing_provider": "openai" | "mock",
//     "chat":     {"model_id", "reasoning_level", "endpoint", "api_key_env",
//                  "accepts_images", "accepts_documents"},
//     "pointing": {"model_id", "endpoint", "api_key_env", "coordinate_format"},
//     "cache_dir", "responses", "max_attempts", "backoff_ms", "timeout_s",
//     "pruning", "identification_prompt": "paper" | "image",
//     "fix_link_prompt_typo", "point_provisional", "workers",
//     "reference_patterns", "strip_selectors", "cors_origin"
//   }
//
// Relative paths resolve against the config file's directory. Credentials
// are read from the environment variable named by api_key_env.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crossdoc/ingest.hpp"
#include "crossdoc/providers.hpp"

namespace crossdoc {

enum class ProviderMode { Mock, Replay, Live };
enum class IdentificationPrompt { Paper, Image };

struct ChatSettings {
    std::string model_id = "gpt-5";
    std::optional<std::string> reasoning_level;
    std::string endpoint = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    bool accepts_images = true;
    bool accepts_documents = true;
};

struct PointingSettings {
    std::string model_id = "molmo-7b";
    std::string endpoint = "http://localhost:8000/v1";
    std::string api_key_env = "POINTING_API_KEY";
    providers::CoordinateFormat coordinate_format = providers::CoordinateFormat::Percent;
};

struct Config {
    ProviderMode mode = ProviderMode::Mock;
    std::string chat_provider = "openai";
    std::string pointing_provider = "openai";
    ChatSettings chat;
    PointingSettings pointing;
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path responses;  // canned responses for mock mode
    int max_attempts = 3;
    int backoff_ms = 500;
    int timeout_s = 120;
    bool pruning = true;
    IdentificationPrompt identification_prompt = IdentificationPrompt::Paper;
    bool fix_link_prompt_typo = false;
    bool point_provisional = true;
    int workers = 1;
    std::vector<std::string> reference_patterns;
    std::vector<std::string> strip_selectors;
    std::optional<std::string> cors_origin;
};

// Unknown keys and wrong types are InvalidArgument.
Config parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);

struct ProviderSet {
    std::shared_ptr<providers::ChatProvider> chat;
    std::shared_ptr<providers::PointingProvider> pointing;
};

// Mock mode reads `responses`: {"chat": {tag: text}, "pointing": {tag: text}}
// where non-string values are serialized to JSON text. `transport` replaces
// the HTTP client in live mode.
ProviderSet make_providers(const Config& config, std::shared_ptr<providers::HttpTransport> transport = nullptr);

ingest::ReferencePattern reference_pattern(const Config& config);

}  // namespace crossdoc
