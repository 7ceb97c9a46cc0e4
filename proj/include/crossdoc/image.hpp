#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace crossdoc {

struct ImageInfo {
    int width = 0;
    int height = 0;
    std::string media_type;
};

// Reads pixel dimensions from PNG, JPEG, GIF or SVG headers.
std::optional<ImageInfo> probe_image(std::string_view bytes);

std::string media_type_for_path(const std::filesystem::path& path);

}  // namespace crossdoc
