#include "dm/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dm {

Image::Image(int w, int h, float fill) : width(w), height(h) {
    if (w < 0 || h < 0) {
        throw std::invalid_argument("negative image dimensions");
    }
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels, fill);
}

void validate(const Image& img) {
    if (img.width < 0 || img.height < 0 || img.data.size() != img.pixel_count() * Image::channels) {
        throw std::invalid_argument("image data length does not match " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height) + "x3");
    }
    for (float v : img.data) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw std::invalid_argument("image value outside [0,1]");
        }
    }
}

float sample_bilinear(const Image& img, double x, double y, int c, float fill) {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    auto px = [&](int xi, int yi) -> double {
        if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) {
            return fill;
        }
        return img.at(xi, yi, c);
    };
    if (ax == 0.0 && ay == 0.0) {
        return static_cast<float>(px(x0, y0));
    }
    const double top = px(x0, y0) * (1.0 - ax) + px(x0 + 1, y0) * ax;
    const double bottom = px(x0, y0 + 1) * (1.0 - ax) + px(x0 + 1, y0 + 1) * ax;
    return static_cast<float>(top * (1.0 - ay) + bottom * ay);
}

Image crop_resize(const Image& img, const Rect& src, int out_w, int out_h) {
    if (src.w <= 0 || src.h <= 0 || src.x < 0 || src.y < 0 || src.x + src.w > img.width || src.y + src.h > img.height) {
        throw std::invalid_argument("crop rectangle outside image");
    }
    Image out(out_w, out_h);
    const double sx = static_cast<double>(src.w) / out_w;
    const double sy = static_cast<double>(src.h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp(src.y + (y + 0.5) * sy - 0.5, static_cast<double>(src.y),
                                     static_cast<double>(src.y + src.h - 1));
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp(src.x + (x + 0.5) * sx - 0.5, static_cast<double>(src.x),
                                         static_cast<double>(src.x + src.w - 1));
            for (int c = 0; c < Image::channels; ++c) {
                out.at(x, y, c) = sample_bilinear(img, fx, fy, c, 1.0f);
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    if (img.width == out_w && img.height == out_h) {
        return img;
    }
    return crop_resize(img, Rect{0, 0, img.width, img.height}, out_w, out_h);
}

Image pad_to_square(const Image& img, float fill) {
    const int side = std::max(img.width, img.height);
    if (img.width == img.height) {
        return img;
    }
    Image out(side, side, fill);
    const int ox = (side - img.width) / 2;
    const int oy = (side - img.height) / 2;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < Image::channels; ++c) {
                out.at(x + ox, y + oy, c) = img.at(x, y, c);
            }
        }
    }
    return out;
}

std::vector<float> luminance(const Image& img) {
    std::vector<float> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* p = &img.data[i * 3];
        out[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    }
    return out;
}

Image quantize8(const Image& img) {
    const auto bytes = to_bytes8(img);
    return from_bytes8(img.width, img.height, bytes.data());
}

std::vector<std::uint8_t> to_bytes8(const Image& img) {
    std::vector<std::uint8_t> out(img.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

Image from_bytes8(int width, int height, const std::uint8_t* rgb) {
    Image out(width, height);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = static_cast<float>(rgb[i]) / 255.0f;
    }
    return out;
}

} // namespace dm
