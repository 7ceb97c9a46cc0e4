#include "crossdoc/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <regex>

namespace crossdoc {

namespace {

std::uint32_t be32(std::string_view b, std::size_t at) {
    return (std::uint32_t(std::uint8_t(b[at])) << 24) | (std::uint32_t(std::uint8_t(b[at + 1])) << 16) |
           (std::uint32_t(std::uint8_t(b[at + 2])) << 8) | std::uint32_t(std::uint8_t(b[at + 3]));
}

std::uint16_t be16(std::string_view b, std::size_t at) {
    return static_cast<std::uint16_t>((std::uint8_t(b[at]) << 8) | std::uint8_t(b[at + 1]));
}

std::uint16_t le16(std::string_view b, std::size_t at) {
    return static_cast<std::uint16_t>(std::uint8_t(b[at]) | (std::uint8_t(b[at + 1]) << 8));
}

std::optional<ImageInfo> probe_jpeg(std::string_view b) {
    std::size_t i = 2;
    while (i + 9 < b.size()) {
        if (std::uint8_t(b[i]) != 0xFF) return std::nullopt;
        std::uint8_t marker = std::uint8_t(b[i + 1]);
        if (marker == 0xFF) {
            ++i;
            continue;
        }
        std::uint16_t len = be16(b, i + 2);
        bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
        if (sof) return ImageInfo{be16(b, i + 7), be16(b, i + 5), "image/jpeg"};
        i += 2 + len;
    }
    return std::nullopt;
}

std::optional<ImageInfo> probe_svg(std::string_view b) {
    static const std::regex tag(R"(<svg\b[^>]*>)", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(b.begin(), b.end(), m, tag)) return std::nullopt;
    std::string head = m[0].str();
    auto attr = [&](const char* name) -> double {
        std::regex re(std::string("\\b") + name + R"(\s*=\s*["']\s*([0-9.]+))");
        std::smatch am;
        return std::regex_search(head, am, re) ? std::atof(am[1].str().c_str()) : 0.0;
    };
    double w = attr("width");
    double h = attr("height");
    if (w <= 0 || h <= 0) {
        std::regex vb(R"(viewBox\s*=\s*["']\s*[-0-9.]+[\s,]+[-0-9.]+[\s,]+([0-9.]+)[\s,]+([0-9.]+))");
        std::smatch vm;
        if (std::regex_search(head, vm, vb)) {
            w = std::atof(vm[1].str().c_str());
            h = std::atof(vm[2].str().c_str());
        }
    }
    if (w <= 0 || h <= 0) return std::nullopt;
    return ImageInfo{static_cast<int>(w), static_cast<int>(h), "image/svg+xml"};
}

}  // namespace

std::optional<ImageInfo> probe_image(std::string_view b) {
    if (b.size() >= 24 && b.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8)) {
        return ImageInfo{static_cast<int>(be32(b, 16)), static_cast<int>(be32(b, 20)), "image/png"};
    }
    if (b.size() >= 4 && std::uint8_t(b[0]) == 0xFF && std::uint8_t(b[1]) == 0xD8) return probe_jpeg(b);
    if (b.size() >= 10 && (b.substr(0, 6) == "GIF87a" || b.substr(0, 6) == "GIF89a")) {
        return ImageInfo{le16(b, 6), le16(b, 8), "image/gif"};
    }
    return probe_svg(b.substr(0, std::min<std::size_t>(b.size(), 4096)));
}

std::string media_type_for_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".webp") return "image/webp";
    if (ext == ".pdf") return "application/pdf";
    if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
    if (ext == ".json") return "application/json";
    if (ext == ".css") return "text/css; charset=utf-8";
    if (ext == ".js") return "text/javascript; charset=utf-8";
    if (ext == ".txt") return "text/plain; charset=utf-8";
    return "application/octet-stream";
}

}  // namespace crossdoc
