#include "dm/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dm {

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (bytes.empty() || !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw std::runtime_error(std::string("png decode failed: ") + (bytes.empty() ? "empty input" : image.message));
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
    // Transparent pixels composite onto a white background.
    png_color background{255, 255, 255};
    if (!png_image_finish_read(&image, &background, rgb.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("png decode failed: " + msg);
    }
    if (image.width == 0 || image.height == 0) {
        throw std::runtime_error("png decode failed: zero-area image");
    }
    return from_bytes8(static_cast<int>(image.width), static_cast<int>(image.height), rgb.data());
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    validate(img);
    const auto rgb = to_bytes8(img);
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

Image load_png(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_png(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void save_png(const Image& img, const std::filesystem::path& path) {
    write_file_bytes(path, encode_png(img));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path.string());
    }
}

} // namespace dm
