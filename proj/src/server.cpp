#include "crossdoc/server.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/socket.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "crossdoc/error.hpp"
#include "crossdoc/image.hpp"

namespace crossdoc::server {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kBundleSuffix = ".bundle.json";

std::optional<std::string> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    ordered_json body = {{"error", {{"status", status}, {"code", code}, {"message", message}}}};
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

bool inside(const fs::path& base, const fs::path& p) {
    auto b = base.begin(), e = base.end();
    auto it = p.begin();
    for (; b != e; ++b, ++it) {
        if (it == p.end() || *it != *b) return false;
    }
    return true;
}

}  // namespace

std::vector<DocumentArtifacts> scan_root(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(ErrorCode::MissingArtifacts, "artifact root " + root.string() + " is not a directory");
    }
    std::vector<DocumentArtifacts> docs;
    std::vector<std::string> missing;
    for (const auto& entry : fs::directory_iterator(root)) {
        std::string name = entry.path().filename().string();
        if (!entry.is_regular_file() || name.size() <= kBundleSuffix.size() ||
            name.compare(name.size() - kBundleSuffix.size(), kBundleSuffix.size(), kBundleSuffix) != 0) {
            continue;
        }
        DocumentArtifacts d;
        d.doc_id = name.substr(0, name.size() - kBundleSuffix.size());
        d.bundle = entry.path();
        d.aug_html = root / (d.doc_id + ".aug.html");
        d.base_html = root / (d.doc_id + ".base.html");
        d.assets = root / (d.doc_id + ".assets");
        for (const auto* p : {&d.aug_html, &d.base_html}) {
            if (!fs::is_regular_file(*p, ec)) missing.push_back(p->string());
        }
        docs.push_back(std::move(d));
    }
    if (docs.empty()) missing.push_back((root / ("<doc_id>" + std::string(kBundleSuffix))).string());
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw Error(ErrorCode::MissingArtifacts, "missing: " + list);
    }
    std::sort(docs.begin(), docs.end(),
              [](const DocumentArtifacts& a, const DocumentArtifacts& b) { return a.doc_id < b.doc_id; });
    return docs;
}

int resolve_port(std::optional<int> flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv(kPortEnv); env && *env) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 0 || v > 65535) {
            throw Error(ErrorCode::InvalidArgument, std::string(kPortEnv) + " is not a port number: " + env);
        }
        return static_cast<int>(v);
    }
    return kDefaultPort;
}

struct Server::Impl {
    ServerOptions options;
    std::vector<DocumentArtifacts> docs;
    std::map<std::string, const DocumentArtifacts*> by_id;
    httplib::Server http;
    int port = 0;

    const DocumentArtifacts* find(const std::string& id) const {
        auto it = by_id.find(id);
        return it == by_id.end() ? nullptr : it->second;
    }

    void serve_file(httplib::Response& res, const fs::path& p, const std::string& media_type) const {
        auto bytes = read_file(p);
        if (!bytes) return send_error(res, 404, "not_found", "artifact is not readable");
        res.status = 200;
        res.set_content(std::move(*bytes), media_type);
    }

    void routes() {
        http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });

        http.Get("/docs", [this](const httplib::Request&, httplib::Response& res) {
            ordered_json list = ordered_json::array();
            for (const auto& d : docs) {
                list.push_back({{"doc_id", d.doc_id},
                                {"aug", "/doc/" + d.doc_id + "?variant=aug"},
                                {"base", "/doc/" + d.doc_id + "?variant=base"},
                                {"bundle", "/doc/" + d.doc_id + "/bundle"}});
            }
            res.set_content(ordered_json{{"documents", list}}.dump(), "application/json");
        });

        http.Get(R"(/doc/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const DocumentArtifacts* d = find(req.matches[1]);
            if (!d) return send_error(res, 404, "unknown_document", "no document '" + std::string(req.matches[1]) + "'");
            std::string variant = req.has_param("variant") ? req.get_param_value("variant") : "aug";
            if (variant != "aug" && variant != "base") {
                return send_error(res, 400, "bad_variant", "variant must be aug or base");
            }
            serve_file(res, variant == "aug" ? d->aug_html : d->base_html, "text/html; charset=utf-8");
        });

        http.Get(R"(/doc/([^/]+)/bundle)", [this](const httplib::Request& req, httplib::Response& res) {
            const DocumentArtifacts* d = find(req.matches[1]);
            if (!d) return send_error(res, 404, "unknown_document", "no document '" + std::string(req.matches[1]) + "'");
            serve_file(res, d->bundle, "application/json");
        });

        http.Get(R"(/doc/([^/]+)/assets/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
            const DocumentArtifacts* d = find(req.matches[1]);
            if (!d) return send_error(res, 404, "unknown_document", "no document '" + std::string(req.matches[1]) + "'");
            fs::path rel = fs::path(std::string(req.matches[2])).lexically_normal();
            fs::path full = (d->assets / rel).lexically_normal();
            std::error_code ec;
            if (rel.is_absolute() || !inside(d->assets.lexically_normal(), full) || !fs::is_regular_file(full, ec)) {
                return send_error(res, 404, "unknown_asset", "no asset '" + std::string(req.matches[2]) + "'");
            }
            serve_file(res, full, media_type_for_path(full));
        });

        auto not_allowed = [](const httplib::Request& req, httplib::Response& res) {
            send_error(res, 405, "method_not_allowed", req.method + " is not supported; the service is read-only");
            res.set_header("Allow", "GET, HEAD");
        };
        http.Post(".*", not_allowed);
        http.Put(".*", not_allowed);
        http.Patch(".*", not_allowed);
        http.Delete(".*", not_allowed);
        http.Options(".*", [this](const httplib::Request&, httplib::Response& res) {
            if (options.cors_origin) {
                res.status = 204;
                res.set_header("Access-Control-Allow-Methods", "GET, HEAD, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type");
            } else {
                send_error(res, 405, "method_not_allowed", "OPTIONS is not supported");
            }
        });

        http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.status == 404 && res.body.empty()) send_error(res, 404, "not_found", "no route for " + req.path);
        });
        http.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
            if (options.cors_origin) res.set_header("Access-Control-Allow-Origin", *options.cors_origin);
            res.set_header("X-Content-Type-Options", "nosniff");
        });
    }
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>()) {
    impl_->options = std::move(options);
    impl_->docs = scan_root(impl_->options.root);
    for (const auto& d : impl_->docs) impl_->by_id[d.doc_id] = &d;
    impl_->routes();
    std::size_t workers = std::max<std::size_t>(1, impl_->options.workers);
    impl_->http.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    impl_->http.set_keep_alive_timeout(1);
    // No SO_REUSEPORT: a second server on a live port must fail.
    impl_->http.set_socket_options([](int sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    const auto& o = impl_->options;
    if (o.port == 0) {
        impl_->port = impl_->http.bind_to_any_port(o.host);
        if (impl_->port < 0) throw Error(ErrorCode::PortInUse, "could not bind any port on " + o.host);
    } else {
        if (!impl_->http.bind_to_port(o.host, o.port)) {
            throw Error(ErrorCode::PortInUse, "port " + std::to_string(o.port) + " on " + o.host + " is in use");
        }
        impl_->port = o.port;
    }
}

Server::~Server() { stop(); }

int Server::port() const { return impl_->port; }
const std::vector<DocumentArtifacts>& Server::documents() const { return impl_->docs; }

void Server::run() { impl_->http.listen_after_bind(); }

void Server::stop() {
    if (impl_) impl_->http.stop();
}

}  // namespace crossdoc::server
