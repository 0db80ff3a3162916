#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dm/image.hpp"

namespace dm {

/// Decodes any PNG libpng understands into 8-bit RGB, scaled by 1/255.
/// Throws std::runtime_error on malformed input.
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& img);

Image load_png(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace dm
