#pragma once

// Read-only HTTP service over a directory of rendered artifacts.
//
// A root holds, per document, <doc_id>.bundle.json, <doc_id>.aug.html,
// <doc_id>.base.html and an optional <doc_id>.assets/ directory.
//
//   GET /healthz                       200 application/json
//   GET /docs                          200 application/json
//   GET /doc/{id}?variant=aug|base     200 text/html (default aug; 400 otherwise)
//   GET /doc/{id}/bundle               200 application/json
//   GET /doc/{id}/assets/{name}        200 media type of the file
//
// Unknown documents, assets and paths are 404, other methods 405; every
// error body is {"error": {"status", "code", "message"}}.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace crossdoc::server {

inline constexpr int kDefaultPort = 8080;
inline constexpr const char* kPortEnv = "CROSSDOC_PORT";

struct DocumentArtifacts {
    std::string doc_id;
    std::filesystem::path bundle;
    std::filesystem::path aug_html;
    std::filesystem::path base_html;
    std::filesystem::path assets;  // may not exist
};

// Finds every bundle under root and checks its siblings exist. Throws
// MissingArtifacts naming every absent file, or when root has no bundle.
std::vector<DocumentArtifacts> scan_root(const std::filesystem::path& root);

struct ServerOptions {
    std::filesystem::path root;
    std::string host = "127.0.0.1";
    int port = kDefaultPort;  // 0 picks a free port
    std::optional<std::string> cors_origin;
    std::size_t workers = 64;  // request threads; idle keep-alive connections each hold one
};

// Explicit flag, then CROSSDOC_PORT, then the default.
int resolve_port(std::optional<int> flag);

class Server {
public:
    // Scans the root and binds the port (PortInUse if taken).
    explicit Server(ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    int port() const;
    const std::vector<DocumentArtifacts>& documents() const;

    // Blocks until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace crossdoc::server
