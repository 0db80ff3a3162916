#include "doctest.h"

#include <filesystem>

#include "dm/image.hpp"
#include "dm/png_io.hpp"
#include "dm/rng.hpp"

using namespace dm;

namespace {

Image noise(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    Rng r(seed);
    for (auto& v : img.data) v = static_cast<float>(r.uniform());
    return img;
}

} // namespace

TEST_CASE("validate rejects bad images") {
    CHECK_NOTHROW(validate(Image(4, 3)));
    Image img(2, 2);
    img.data[5] = 1.5f;
    CHECK_THROWS_AS(validate(img), std::invalid_argument);
    img.data[5] = std::nanf("");
    CHECK_THROWS_AS(validate(img), std::invalid_argument);
    Image short_data(2, 2);
    short_data.data.pop_back();
    CHECK_THROWS_AS(validate(short_data), std::invalid_argument);
}

TEST_CASE("full-frame crop_resize is an exact copy") {
    const Image img = noise(9, 7, 1);
    CHECK(crop_resize(img, {0, 0, 9, 7}, 9, 7) == img);
    CHECK(resize_bilinear(img, 9, 7) == img);
}

TEST_CASE("bilinear midpoint averages neighbours") {
    Image img(2, 1);
    img.at(0, 0, 0) = 0.0f;
    img.at(1, 0, 0) = 1.0f;
    CHECK(sample_bilinear(img, 0.5, 0.0, 0, 1.0f) == doctest::Approx(0.5));
    CHECK(sample_bilinear(img, -3.0, 0.0, 0, 0.25f) == doctest::Approx(0.25));
}

TEST_CASE("pad_to_square centres content on white") {
    Image img(4, 2, 0.0f);
    const Image sq = pad_to_square(img);
    CHECK(sq.width == 4);
    CHECK(sq.height == 4);
    CHECK(sq.at(0, 0, 0) == 1.0f);
    CHECK(sq.at(0, 1, 0) == 0.0f);
    CHECK(sq.at(3, 2, 2) == 0.0f);
    CHECK(sq.at(3, 3, 1) == 1.0f);
}

TEST_CASE("8-bit round trips") {
    const Image q = quantize8(noise(5, 5, 2));
    CHECK(from_bytes8(5, 5, to_bytes8(q).data()) == q);
    CHECK(quantize8(q) == q);
}

TEST_CASE("PNG encode/decode is lossless for 8-bit images") {
    const Image q = quantize8(noise(13, 6, 3));
    const auto bytes = encode_png(q);
    CHECK(decode_png(bytes) == q);

    const auto dir = std::filesystem::temp_directory_path() / "dm_test_png";
    std::filesystem::remove_all(dir);
    save_png(q, dir / "sub" / "a.png");
    CHECK(load_png(dir / "sub" / "a.png") == q);
    std::filesystem::remove_all(dir);
}

TEST_CASE("decode_png rejects garbage") {
    const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(decode_png(junk), std::runtime_error);
    CHECK_THROWS(load_png("/nonexistent/x.png"));
}

TEST_CASE("luminance weights") {
    Image img(1, 1, 0.0f);
    img.at(0, 0, 0) = 1.0f;
    CHECK(luminance(img)[0] == doctest::Approx(0.299));
}
