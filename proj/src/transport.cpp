// HTTP client transport for live providers.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "crossdoc/providers.hpp"

namespace crossdoc::providers {

namespace {

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResponse post(const std::string& url, const Headers& headers, const std::string& body) override {
        // Split "scheme://host[:port]" from the path.
        std::size_t scheme_end = url.find("://");
        std::size_t path_begin = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        std::string origin = path_begin == std::string::npos ? url : url.substr(0, path_begin);
        std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);

        httplib::Client client(origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = client.Post(path, h, body, "application/json");
        if (!res) return {0, {}};
        return {res->status, res->body};
    }

private:
    std::chrono::seconds timeout_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
    return std::make_shared<HttplibTransport>(timeout);
}

}  // namespace crossdoc::providers
