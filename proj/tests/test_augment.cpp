#include "doctest.h"

#include <algorithm>

#include "dm/augment.hpp"

using namespace dm;

namespace {

Image noise(int w, int h, std::uint64_t seed) {
    Image img(w, h);
    Rng r(seed);
    for (auto& v : img.data) v = static_cast<float>(r.uniform());
    return img;
}

bool in_unit_range(const Image& img) {
    return std::all_of(img.data.begin(), img.data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

} // namespace

TEST_CASE("crop with ratio 1 is the identity") {
    const Image img = noise(20, 20, 1);
    Rng r(2);
    CHECK(random_crop(img, 1.0, r) == img);
}

TEST_CASE("100x100 at ratio 0.7: every sampled rectangle keeps 7000 px") {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const Rect rc = sample_crop_rect(100, 100, 0.7, r);
        CHECK(rc.area() >= 7000);
        CHECK(rc.x >= 0);
        CHECK(rc.y >= 0);
        CHECK(rc.x + rc.w <= 100);
        CHECK(rc.y + rc.h <= 100);
    }
}

TEST_CASE("preset crop ratios") {
    CHECK(default_policy().min_crop_area_ratio == 0.08);
    CHECK(custom_policy().min_crop_area_ratio == 0.70);
    CHECK(custom_policy().max_rotate_deg == 15.0);
}

TEST_CASE("jitter with zero strengths is the identity") {
    const Image img = noise(8, 8, 4);
    Rng r(5);
    CHECK(color_jitter(img, {0.0, 0.0, 0.0}, r) == img);
}

TEST_CASE("brightness +0.1 on constant 0.5 gives 0.6, and clamps at 1") {
    Image img(4, 4, 0.5f);
    const Image out = apply_color_jitter(img, {0.1, 1.0, 1.0});
    for (float v : out.data) CHECK(v == doctest::Approx(0.6f));
    Image bright(1, 1, 0.95f);
    for (float v : apply_color_jitter(bright, {0.1, 1.0, 1.0}).data) CHECK(v == 1.0f);
}

TEST_CASE("grayscale") {
    Image red(1, 1, 0.0f);
    red.at(0, 0, 0) = 1.0f;
    const Image g = grayscale(red);
    for (int c = 0; c < 3; ++c) CHECK(g.at(0, 0, c) == doctest::Approx(0.299f));

    Image gray(3, 3, 0.4f);
    CHECK(grayscale(gray) == gray);

    const Image n = noise(6, 6, 6);
    CHECK(grayscale(grayscale(n)) == grayscale(n));
    const Image gn = grayscale(n);
    for (std::size_t i = 0; i < gn.pixel_count(); ++i) {
        CHECK(gn.data[i * 3] == gn.data[i * 3 + 1]);
        CHECK(gn.data[i * 3] == gn.data[i * 3 + 2]);
    }
}

TEST_CASE("rotation") {
    const Image n = noise(7, 5, 7);
    Rng r(8);
    CHECK(random_rotate(n, 0.0, r) == n);

    Image a(2, 2);
    a.at(0, 0, 0) = 0.1f;
    a.at(1, 0, 0) = 0.2f;
    a.at(0, 1, 0) = 0.3f;
    a.at(1, 1, 0) = 0.4f;
    const Image b = rotate(a, 180.0);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) CHECK(b.at(x, y, 0) == doctest::Approx(a.at(1 - x, 1 - y, 0)));
    }
    CHECK_THROWS_AS(random_rotate(n, 181.0, r), std::invalid_argument);
}

TEST_CASE("rotation fills uncovered corners white") {
    const Image black(16, 16, 0.0f);
    const Image out = rotate(black, 45.0);
    CHECK(out.at(0, 0, 0) == doctest::Approx(1.0f));
    CHECK(out.at(8, 8, 0) == doctest::Approx(0.0f));
}

TEST_CASE("channel permutations") {
    Image px(1, 1);
    px.at(0, 0, 0) = 0.1f;
    px.at(0, 0, 1) = 0.2f;
    px.at(0, 0, 2) = 0.3f;
    CHECK(permute_channels(px, {0, 1, 2}) == px);
    const Image rev = permute_channels(px, {2, 1, 0});
    CHECK(rev.at(0, 0, 0) == 0.3f);
    CHECK(rev.at(0, 0, 1) == 0.2f);
    CHECK(rev.at(0, 0, 2) == 0.1f);

    const Image gray(4, 4, 0.7f);
    Rng r(9);
    for (int i = 0; i < 10; ++i) CHECK(channel_shuffle(gray, r) == gray);

    const Image n = noise(5, 5, 10);
    const Image s = channel_shuffle(n, r);
    for (std::size_t i = 0; i < n.pixel_count(); ++i) {
        std::array<float, 3> x{n.data[i * 3], n.data[i * 3 + 1], n.data[i * 3 + 2]};
        std::array<float, 3> y{s.data[i * 3], s.data[i * 3 + 1], s.data[i * 3 + 2]};
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        CHECK(x == y);
    }
}

TEST_CASE("colour mask blend") {
    const Image n = noise(6, 6, 11);
    CHECK(blend_rect(n, {1, 1, 3, 3}, {0.5f, 0.5f, 0.5f}, 0.0) == n);
    const Image full = blend_rect(n, {1, 1, 3, 3}, {0.9f, 0.8f, 0.7f}, 1.0);
    CHECK(full.at(2, 2, 0) == 0.9f);
    CHECK(full.at(3, 3, 2) == 0.7f);
    CHECK(full.at(0, 0, 0) == n.at(0, 0, 0));
    const Image in(2, 2, 0.2f);
    const Image half = blend_rect(in, {0, 0, 2, 2}, {0.8f, 0.8f, 0.8f}, 0.5);
    for (float v : half.data) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("zero-probability policy gives two resized copies") {
    AugmentationPolicy p = custom_policy(16);
    for (auto& op : p.ops) op.probability = 0.0;
    const Image n = noise(16, 16, 12);
    Rng r(13);
    const auto pair = make_view_pair("x", n, p, r);
    CHECK(pair.view_a == n);
    CHECK(pair.view_b == n);
}

TEST_CASE("view pairs are reproducible and stay in range") {
    const Image n = noise(40, 30, 14);
    for (const auto& policy : {custom_policy(32), default_policy(32)}) {
        Rng r1(15), r2(15);
        const auto a = make_view_pair("x", n, policy, r1);
        const auto b = make_view_pair("x", n, policy, r2);
        CHECK(a.view_a == b.view_a);
        CHECK(a.view_b == b.view_b);
        CHECK(a.view_a.width == 32);
        CHECK(a.view_b.height == 32);
        CHECK(in_unit_range(a.view_a));
        CHECK(in_unit_range(a.view_b));
    }
}

TEST_CASE("every op keeps images in range and dimensions fixed") {
    const Image n = noise(24, 24, 16);
    Rng r(17);
    for (AugKind k : {AugKind::crop, AugKind::color_jitter, AugKind::grayscale, AugKind::rotate,
                      AugKind::channel_shuffle, AugKind::color_mask, AugKind::hflip}) {
        const auto p = single_op_policy(k, 24);
        for (int i = 0; i < 20; ++i) {
            const Image out = augment(n, p, r);
            CHECK(out.width == 24);
            CHECK(out.height == 24);
            CHECK(in_unit_range(out));
        }
    }
}

TEST_CASE("custom policy has no flips; default does") {
    CHECK_FALSE(custom_policy().has(AugKind::hflip));
    CHECK(default_policy().has(AugKind::hflip));
    CHECK(policy_by_name("custom").ops.size() == 6);
    CHECK_THROWS_AS(policy_by_name("bogus"), std::invalid_argument);
}

TEST_CASE("policy validation") {
    auto p = custom_policy();
    p.min_crop_area_ratio = 0.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = custom_policy();
    p.ops[0].probability = 1.5;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = custom_policy();
    p.max_rotate_deg = 200;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("reduced policy halves ranges") {
    const auto r = custom_policy().reduced();
    CHECK(r.max_rotate_deg == 7.5);
    CHECK(r.min_crop_area_ratio == doctest::Approx(0.85));
    CHECK(r.jitter.brightness == doctest::Approx(0.1));
    CHECK(r.mask_alpha_hi == doctest::Approx(0.25));
    CHECK(r.ops.size() == custom_policy().ops.size());
}
