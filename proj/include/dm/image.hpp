#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dm {

/// Axis-aligned pixel rectangle.
struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    long area() const { return static_cast<long>(w) * h; }
    bool operator==(const Rect&) const = default;
};

/// RGB raster with intensities in [0,1], stored row-major, channel-interleaved.
struct Image {
    static constexpr int channels = 3;

    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 1.0f);

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * channels +
               static_cast<std::size_t>(c);
    }
    float& at(int x, int y, int c) { return data[index(x, y, c)]; }
    float at(int x, int y, int c) const { return data[index(x, y, c)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    bool empty() const { return width == 0 || height == 0; }

    bool operator==(const Image&) const = default;
};

/// Throws std::invalid_argument if dimensions and data disagree or a value is
/// outside [0,1] or non-finite.
void validate(const Image& img);

/// Bilinear sample at continuous pixel coordinates; positions outside the
/// frame read as `fill`.
float sample_bilinear(const Image& img, double x, double y, int c, float fill);

/// Resizes the sub-rectangle `src` of `img` to out_w x out_h (bilinear, edge
/// clamped inside the rectangle). A full-frame rectangle at the same size is
/// an exact copy.
Image crop_resize(const Image& img, const Rect& src, int out_w, int out_h);

Image resize_bilinear(const Image& img, int out_w, int out_h);

/// Pads the shorter side with `fill` so the result is square, content centered.
Image pad_to_square(const Image& img, float fill = 1.0f);

/// Luma 0.299 r + 0.587 g + 0.114 b per pixel.
std::vector<float> luminance(const Image& img);

/// Rounds every value to the nearest multiple of 1/255.
Image quantize8(const Image& img);

std::vector<std::uint8_t> to_bytes8(const Image& img);
Image from_bytes8(int width, int height, const std::uint8_t* rgb);

} // namespace dm
