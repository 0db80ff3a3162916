#include "doctest.h"

#include <cmath>
#include <map>

#include "dm/mi.hpp"
#include "dm/synth.hpp"

using namespace dm;

namespace {

// Gray image whose pixels sit at bin centres, so binning is unambiguous.
Image levels(int w, int h, const std::vector<int>& bins_of_pixels, int bins) {
    Image img(w, h);
    for (int i = 0; i < w * h; ++i) {
        const float v = (static_cast<float>(bins_of_pixels[i]) + 0.5f) / static_cast<float>(bins);
        for (int c = 0; c < 3; ++c) img.data[static_cast<std::size_t>(i) * 3 + c] = v;
    }
    return img;
}

double entropy_of(const std::map<std::vector<int>, int>& counts, int n) {
    double h = 0.0;
    for (const auto& [k, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

// I = H(A) + H(B) - H(A,B) from explicit histograms.
double oracle_mi(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<std::vector<int>, int> ha, hb, hab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ha[{a[i]}];
        ++hb[{b[i]}];
        ++hab[{a[i], b[i]}];
    }
    const int n = static_cast<int>(a.size());
    return entropy_of(ha, n) + entropy_of(hb, n) - entropy_of(hab, n);
}

} // namespace

TEST_CASE("joint histogram oracle on small fixtures") {
    struct Fixture {
        int w, h, bins;
        std::vector<int> a, b;
    };
    const std::vector<Fixture> fixtures{
        {2, 2, 2, {0, 0, 1, 1}, {0, 1, 0, 1}},
        {2, 2, 2, {0, 0, 1, 1}, {0, 0, 1, 1}},
        {2, 2, 2, {0, 0, 1, 1}, {1, 1, 0, 0}},
        {3, 2, 3, {0, 1, 2, 0, 1, 2}, {0, 0, 1, 1, 2, 2}},
        {4, 2, 4, {0, 1, 2, 3, 3, 2, 1, 0}, {0, 0, 1, 1, 2, 2, 3, 3}},
        {3, 3, 2, {0, 0, 0, 1, 1, 1, 0, 1, 0}, {0, 1, 0, 1, 1, 1, 0, 0, 0}},
    };
    for (const auto& f : fixtures) {
        const double got = mutual_information(levels(f.w, f.h, f.a, f.bins), levels(f.w, f.h, f.b, f.bins), f.bins);
        CHECK(got == doctest::Approx(oracle_mi(f.a, f.b)).epsilon(1e-12));
    }
    // The first three have closed forms.
    CHECK(mutual_information(levels(2, 2, fixtures[0].a, 2), levels(2, 2, fixtures[0].b, 2), 2) ==
          doctest::Approx(0.0));
    CHECK(mutual_information(levels(2, 2, fixtures[1].a, 2), levels(2, 2, fixtures[1].b, 2), 2) ==
          doctest::Approx(1.0));
}

TEST_CASE("random 8x8 fixtures match the oracle") {
    Rng r(77);
    for (int t = 0; t < 20; ++t) {
        const int bins = 2 + r.range(0, 6);
        std::vector<int> a(64), b(64);
        for (int i = 0; i < 64; ++i) {
            a[i] = r.range(0, bins - 1);
            b[i] = (t % 2 == 0) ? r.range(0, bins - 1) : (a[i] + 1) % bins;
        }
        const double got = mutual_information(levels(8, 8, a, bins), levels(8, 8, b, bins), bins);
        CHECK(got == doctest::Approx(oracle_mi(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("self-information equals entropy") {
    const std::vector<int> px{0, 1, 0, 1, 1, 0, 0, 1};
    const Image img = levels(4, 2, px, 2);
    CHECK(mutual_information(img, img, 2) == doctest::Approx(1.0));
    CHECK(image_entropy(img, 2) == doctest::Approx(1.0));
}

TEST_CASE("constant image carries no information") {
    Rng r(1);
    Image noise(8, 8);
    for (auto& v : noise.data) v = static_cast<float>(r.uniform());
    CHECK(mutual_information(Image(8, 8, 0.3f), noise, 32) == 0.0);
}

TEST_CASE("bounds, symmetry and relabelling") {
    Rng r(2);
    for (int t = 0; t < 10; ++t) {
        Image a(12, 10), b(12, 10);
        for (auto& v : a.data) v = static_cast<float>(r.uniform());
        for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.5f * a.data[i] + 0.5f * static_cast<float>(r.uniform());
        const double ab = mutual_information(a, b, 16);
        CHECK(ab == mutual_information(b, a, 16));
        CHECK(ab >= 0.0);
        CHECK(ab <= std::min(image_entropy(a, 16), image_entropy(b, 16)) + 1e-9);
        CHECK(ab <= 4.0 + 1e-12);
    }
    // Reversing intensities permutes bin indices.
    std::vector<int> a(64), b(64), b_rev(64);
    for (int i = 0; i < 64; ++i) {
        a[i] = r.range(0, 3);
        b[i] = (a[i] + r.range(0, 1)) % 4;
        b_rev[i] = 3 - b[i];
    }
    CHECK(mutual_information(levels(8, 8, a, 4), levels(8, 8, b, 4), 4) ==
          doctest::Approx(mutual_information(levels(8, 8, a, 4), levels(8, 8, b_rev, 4), 4)));
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(mutual_information(Image(), Image(2, 2), 4), std::invalid_argument);
    CHECK_THROWS_AS(mutual_information(Image(2, 2), Image(2, 2), 1), std::invalid_argument);
}

TEST_CASE("unequal sizes are compared at the smaller size") {
    Image big(20, 20, 0.0f), small(10, 10, 0.0f);
    CHECK_NOTHROW(mutual_information(big, small, 8));
}

TEST_CASE("gain report") {
    SynthOptions o;
    o.n_clusters = 8;
    o.variants_per_cluster = 2;
    o.side = 48;
    o.seed = 3;
    const auto s = synth_generate(o);
    const std::vector<AugKind> kinds{AugKind::crop, AugKind::rotate, AugKind::color_mask};
    const MiReport rep = mi_gain_report(s.corpus, s.images, kinds, 12, 3);
    CHECK(rep.rows.size() == 9);
    CHECK(rep.bins == 32);
    for (const auto& row : rep.rows) {
        CHECK(row.mi_bits >= 0.0);
        CHECK(row.mi_bits <= 5.0);
    }
    for (AugKind k : kinds) CHECK(rep.value(k, PairKind::positive) > rep.value(k, PairKind::negative));
    CHECK(rep.to_tsv().find("color_mask") != std::string::npos);
    CHECK(rep.to_json().find("positive") != std::string::npos);

    const MiReport again = mi_gain_report(s.corpus, s.images, kinds, 12, 3);
    CHECK(again.to_tsv() == rep.to_tsv());
}

TEST_CASE("one cluster cannot produce negative pairs") {
    SynthOptions o;
    o.n_clusters = 1;
    o.variants_per_cluster = 3;
    o.side = 32;
    const auto s = synth_generate(o);
    CHECK_THROWS(mi_gain_report(s.corpus, s.images, {AugKind::crop}, 4, 1));
}
