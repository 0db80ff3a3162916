#include "dm/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "dm/png_io.hpp"

namespace dm {
namespace {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

using Color = std::array<float, 3>;

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    return norm(p - (a + t * ab));
}

/// Anti-aliased ink on a float raster. Coverage falls off linearly over one
/// pixel around the shape's distance field.
class Canvas {
public:
    explicit Canvas(Image& img) : img_(img) {}

    template <typename DistFn>
    void paint(double x0, double y0, double x1, double y1, double half_width, const Color& color, DistFn dist) {
        const int xa = std::max(0, static_cast<int>(std::floor(x0 - half_width - 1)));
        const int ya = std::max(0, static_cast<int>(std::floor(y0 - half_width - 1)));
        const int xb = std::min(img_.width - 1, static_cast<int>(std::ceil(x1 + half_width + 1)));
        const int yb = std::min(img_.height - 1, static_cast<int>(std::ceil(y1 + half_width + 1)));
        for (int y = ya; y <= yb; ++y) {
            for (int x = xa; x <= xb; ++x) {
                const double d = dist(Vec2{x + 0.5, y + 0.5});
                const double cov = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
                if (cov <= 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    float& v = img_.at(x, y, c);
                    v = static_cast<float>(v * (1.0 - cov) + color[c] * cov);
                }
            }
        }
    }

    void stroke(Vec2 a, Vec2 b, double width, const Color& color) {
        paint(std::min(a.x, b.x), std::min(a.y, b.y), std::max(a.x, b.x), std::max(a.y, b.y), width / 2, color,
              [&](Vec2 p) { return segment_distance(p, a, b); });
    }

    void polyline(const std::vector<Vec2>& pts, bool closed, double width, const Color& color) {
        if (pts.size() < 2) return;
        double x0 = pts[0].x, y0 = pts[0].y, x1 = x0, y1 = y0;
        for (const auto& p : pts) {
            x0 = std::min(x0, p.x);
            y0 = std::min(y0, p.y);
            x1 = std::max(x1, p.x);
            y1 = std::max(y1, p.y);
        }
        paint(x0, y0, x1, y1, width / 2, color, [&](Vec2 p) {
            double best = 1e300;
            const std::size_t n = closed ? pts.size() : pts.size() - 1;
            for (std::size_t i = 0; i < n; ++i) {
                best = std::min(best, segment_distance(p, pts[i], pts[(i + 1) % pts.size()]));
            }
            return best;
        });
    }

    void ring(Vec2 c, double r, double width, const Color& color) {
        paint(c.x - r, c.y - r, c.x + r, c.y + r, width / 2, color, [&](Vec2 p) { return std::abs(norm(p - c) - r); });
    }

    void disc(Vec2 c, double r, const Color& color) {
        paint(c.x - r, c.y - r, c.x + r, c.y + r, 0.0, color, [&](Vec2 p) { return std::max(0.0, norm(p - c) - r); });
    }

private:
    Image& img_;
};

std::vector<Vec2> regular_polygon(Vec2 c, double r, int sides, double phase) {
    std::vector<Vec2> pts;
    for (int i = 0; i < sides; ++i) {
        const double a = phase + 2.0 * std::numbers::pi * i / sides;
        pts.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
    }
    return pts;
}

Color ink(Rng& rng) {
    const double u = rng.uniform();
    const auto jitter = [&](double base) { return static_cast<float>(std::clamp(base + rng.uniform(-0.06, 0.06), 0.0, 1.0)); };
    if (u < 0.6) return {jitter(0.08), jitter(0.08), jitter(0.1)};
    if (u < 0.85) return {jitter(0.1), jitter(0.2), jitter(0.65)};
    if (u < 0.93) return {jitter(0.7), jitter(0.12), jitter(0.1)};
    return {jitter(0.1), jitter(0.5), jitter(0.15)};
}

Vec2 random_point(int side, double margin, Rng& rng) {
    return {rng.uniform(margin, side - margin), rng.uniform(margin, side - margin)};
}

void hatch(Canvas& canvas, Vec2 origin, double w, double h, double angle, double spacing, double width,
           const Color& color) {
    // Parallel lines across the rectangle, clipped analytically.
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    const Vec2 nrm{-dir.y, dir.x};
    const Vec2 center = origin + Vec2{w / 2, h / 2};
    const double reach = std::hypot(w, h) / 2;
    for (double off = -reach; off <= reach; off += spacing) {
        const Vec2 base = center + off * nrm;
        // Clip base + t*dir to the rectangle (Liang-Barsky).
        double t0 = -reach, t1 = reach;
        const std::array<double, 4> p{-dir.x, dir.x, -dir.y, dir.y};
        const std::array<double, 4> q{base.x - origin.x, origin.x + w - base.x, base.y - origin.y, origin.y + h - base.y};
        bool visible = true;
        for (int i = 0; i < 4 && visible; ++i) {
            if (std::abs(p[i]) < 1e-12) {
                visible = q[i] >= 0;
            } else {
                const double t = q[i] / p[i];
                if (p[i] < 0) t0 = std::max(t0, t);
                else t1 = std::min(t1, t);
            }
        }
        if (visible && t0 < t1) {
            canvas.stroke(base + t0 * dir, base + t1 * dir, width, color);
        }
    }
}

/// Motifs recur across clusters the way a benzene ring or a set of axes
/// recurs across unrelated chemistry or physics questions.
void shared_motif(Canvas& canvas, int kind, Vec2 c, double r, double width, const Color& color) {
    switch (kind) {
    case 0: { // ring-in-hexagon
        canvas.polyline(regular_polygon(c, r, 6, std::numbers::pi / 6), true, width, color);
        canvas.ring(c, r * 0.55, width, color);
        break;
    }
    case 1: { // axes
        canvas.stroke({c.x - r, c.y + r * 0.8}, {c.x + r, c.y + r * 0.8}, width, color);
        canvas.stroke({c.x - r * 0.8, c.y - r}, {c.x - r * 0.8, c.y + r}, width, color);
        canvas.stroke({c.x + r, c.y + r * 0.8}, {c.x + r * 0.8, c.y + r * 0.65}, width, color);
        canvas.stroke({c.x - r * 0.8, c.y - r}, {c.x - r * 0.65, c.y - r * 0.8}, width, color);
        break;
    }
    case 2: { // right triangle with altitude
        const Vec2 a{c.x - r, c.y + r * 0.7}, b{c.x + r, c.y + r * 0.7}, t{c.x - r * 0.2, c.y - r * 0.8};
        canvas.polyline({a, b, t}, true, width, color);
        canvas.stroke(t, {t.x, a.y}, width, color);
        break;
    }
    default: { // resistor zigzag between terminals
        std::vector<Vec2> pts{{c.x - r, c.y}};
        for (int i = 0; i < 6; ++i) {
            pts.push_back({c.x - r * 0.6 + r * 1.2 * i / 5.0, c.y + ((i % 2) ? r * 0.35 : -r * 0.35)});
        }
        pts.push_back({c.x + r, c.y});
        canvas.polyline(pts, false, width, color);
        break;
    }
    }
}

void draw_outline_primitive(Canvas& canvas, int side, Rng& rng, double width, const Color& color) {
    const double margin = side * 0.12;
    switch (rng.range(0, 4)) {
    case 0: {
        const Vec2 a = random_point(side, margin, rng);
        const Vec2 b = random_point(side, margin, rng);
        canvas.stroke(a, b, width, color);
        break;
    }
    case 1: {
        const double r = rng.uniform(side * 0.08, side * 0.22);
        canvas.ring(random_point(side, margin + r * 0.5, rng), r, width, color);
        break;
    }
    case 2: {
        const double r = rng.uniform(side * 0.1, side * 0.24);
        canvas.polyline(regular_polygon(random_point(side, margin + r * 0.5, rng), r, rng.range(3, 6),
                                        rng.uniform(0.0, 2 * std::numbers::pi)),
                        true, width, color);
        break;
    }
    case 3: {
        const double w = rng.uniform(side * 0.2, side * 0.4);
        const double h = rng.uniform(side * 0.2, side * 0.4);
        const Vec2 o{rng.uniform(margin, side - margin - w), rng.uniform(margin, side - margin - h)};
        canvas.polyline({o, {o.x + w, o.y}, {o.x + w, o.y + h}, {o.x, o.y + h}}, true, width, color);
        hatch(canvas, o, w, h, rng.uniform(0.0, std::numbers::pi), rng.uniform(3.0, 6.0), width * 0.7, color);
        break;
    }
    default: { // open polyline (a bent arrow or path)
        std::vector<Vec2> pts;
        const int n = rng.range(3, 5);
        for (int i = 0; i < n; ++i) pts.push_back(random_point(side, margin, rng));
        canvas.polyline(pts, false, width, color);
        break;
    }
    }
}

void draw_curve_primitive(Canvas& canvas, int side, Rng& rng, double width, const Color& color) {
    const double margin = side * 0.12;
    switch (rng.range(0, 3)) {
    case 0: { // spiral
        const Vec2 c = random_point(side, side * 0.3, rng);
        const double turns = rng.uniform(1.5, 3.0);
        const double rmax = rng.uniform(side * 0.12, side * 0.22);
        const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
        std::vector<Vec2> pts;
        for (int i = 0; i <= 60; ++i) {
            const double t = i / 60.0;
            const double a = phase + t * turns * 2 * std::numbers::pi;
            pts.push_back({c.x + rmax * t * std::cos(a), c.y + rmax * t * std::sin(a)});
        }
        canvas.polyline(pts, false, width, color);
        break;
    }
    case 1: { // zigzag wave
        const Vec2 a = random_point(side, margin, rng);
        const Vec2 b = random_point(side, margin, rng);
        const Vec2 d = b - a;
        const double len = std::max(1.0, norm(d));
        const Vec2 n{-d.y / len, d.x / len};
        const int teeth = rng.range(4, 9);
        const double amp = rng.uniform(2.0, side * 0.06);
        std::vector<Vec2> pts;
        for (int i = 0; i <= teeth; ++i) {
            pts.push_back(a + (static_cast<double>(i) / teeth) * d + ((i % 2) ? amp : -amp) * n);
        }
        canvas.polyline(pts, false, width, color);
        break;
    }
    case 2: { // star
        const double r = rng.uniform(side * 0.1, side * 0.22);
        const Vec2 c = random_point(side, margin + r * 0.5, rng);
        const int points = rng.range(4, 7);
        const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
        std::vector<Vec2> pts;
        for (int i = 0; i < 2 * points; ++i) {
            const double rr = (i % 2) ? r * 0.45 : r;
            const double a = phase + std::numbers::pi * i / points;
            pts.push_back({c.x + rr * std::cos(a), c.y + rr * std::sin(a)});
        }
        canvas.polyline(pts, true, width, color);
        break;
    }
    default: { // dot grid
        const int nx = rng.range(2, 4), ny = rng.range(2, 4);
        const double step = rng.uniform(side * 0.06, side * 0.1);
        const Vec2 o = random_point(side, margin + step * 2, rng);
        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j < ny; ++j) {
                canvas.disc({o.x + i * step - step, o.y + j * step - step}, rng.uniform(1.0, 2.0), color);
            }
        }
        break;
    }
    }
}

Image gaussian_blur_region(const Image& img, const Rect& r, double sigma) {
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= sum;
    auto clampx = [&](int x) { return std::clamp(x, 0, img.width - 1); };
    auto clampy = [&](int y) { return std::clamp(y, 0, img.height - 1); };
    // Horizontal pass over the rows the vertical pass will read.
    Image tmp = img;
    for (int y = std::max(0, r.y - radius); y < std::min(img.height, r.y + r.h + radius); ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(clampx(x + k), y, c);
                tmp.at(x, y, c) = static_cast<float>(acc);
            }
        }
    }
    Image out = img;
    for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(x, clampy(y + k), c);
                out.at(x, y, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

} // namespace

Image draw_diagram(int side, SynthFamily family, Rng& rng) {
    if (side < 16) {
        throw std::invalid_argument("side " + std::to_string(side) + " too small to place any primitive (minimum 16)");
    }
    Image img(side, side, 1.0f);
    Canvas canvas(img);
    const Color color = ink(rng);
    const double width = rng.uniform(1.0, 1.8) * side / 64.0;
    if (family == SynthFamily::outline && rng.bernoulli(0.6)) {
        const double r = rng.uniform(side * 0.14, side * 0.2);
        shared_motif(canvas, rng.range(0, 3), random_point(side, side * 0.12 + r, rng), r, width, color);
    }
    const int count = rng.range(3, 5);
    for (int i = 0; i < count; ++i) {
        if (family == SynthFamily::outline) {
            draw_outline_primitive(canvas, side, rng, width, color);
        } else {
            draw_curve_primitive(canvas, side, rng, width, color);
        }
    }
    return img;
}

Image perturb(const Image& base, Rng& rng) {
    const int side = std::min(base.width, base.height);
    // Skew and shift of a hand-held snapshot.
    const double angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
    const double tx = rng.uniform(-0.06, 0.06) * base.width;
    const double ty = rng.uniform(-0.06, 0.06) * base.height;
    const double cx = (base.width - 1) / 2.0, cy = (base.height - 1) / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    Image img(base.width, base.height);
    for (int y = 0; y < base.height; ++y) {
        for (int x = 0; x < base.width; ++x) {
            const double dx = x - cx - tx, dy = y - cy - ty;
            const double sx = cx + ca * dx + sa * dy;
            const double sy = cy - sa * dx + ca * dy;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = sample_bilinear(base, sx, sy, c, 1.0f);
        }
    }

    const int blur_patches = rng.range(0, 2);
    for (int i = 0; i < blur_patches; ++i) {
        const int w = static_cast<int>(rng.uniform(0.25, 0.5) * base.width);
        const int h = static_cast<int>(rng.uniform(0.25, 0.5) * base.height);
        const Rect r{rng.range(0, base.width - w), rng.range(0, base.height - h), w, h};
        img = gaussian_blur_region(img, r, rng.uniform(0.5, 1.5));
    }

    const int spots = rng.range(0, 2);
    for (int i = 0; i < spots; ++i) {
        const double radius = rng.uniform(0.04, 0.10) * side;
        const double sx = rng.uniform(0.0, base.width), sy = rng.uniform(0.0, base.height);
        const bool bright = rng.bernoulli(0.5);
        const double strength = bright ? rng.uniform(0.5, 0.9) : rng.uniform(0.25, 0.5);
        const float tone = bright ? 1.0f : static_cast<float>(rng.uniform(0.3, 0.5));
        for (int y = 0; y < base.height; ++y) {
            for (int x = 0; x < base.width; ++x) {
                const double d = std::hypot(x + 0.5 - sx, y + 0.5 - sy) / radius;
                if (d >= 1.0) continue;
                const double a = strength * (1.0 - d * d);
                for (int c = 0; c < 3; ++c) {
                    float& v = img.at(x, y, c);
                    v = static_cast<float>(v * (1.0 - a) + tone * a);
                }
            }
        }
    }

    Canvas canvas(img);
    const int marks = rng.range(0, 2);
    for (int i = 0; i < marks; ++i) {
        std::vector<Vec2> pts{random_point(base.width, 2.0, rng)};
        const int segs = rng.range(1, 3);
        for (int s = 0; s < segs; ++s) {
            pts.push_back(pts.back() + Vec2{rng.uniform(-0.2, 0.2) * base.width, rng.uniform(-0.2, 0.2) * base.height});
        }
        canvas.polyline(pts, false, rng.uniform(0.8, 1.4), ink(rng));
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

SynthCorpus synth_generate(const SynthOptions& options) {
    if (options.n_clusters < 1) throw std::invalid_argument("n_clusters must be >= 1");
    if (options.variants_per_cluster < 1) throw std::invalid_argument("variants_per_cluster must be >= 1");
    if (options.side < 16) {
        throw std::invalid_argument("side " + std::to_string(options.side) + " too small to place any primitive (minimum 16)");
    }
    SynthCorpus out;
    std::vector<DoubtRecord> records;
    char buf[64];
    for (int c = 0; c < options.n_clusters; ++c) {
        std::snprintf(buf, sizeof buf, "%s%04d", options.prefix.c_str(), c);
        const std::string label = std::string("c_") + buf;
        Rng draw_rng(derive_seed(options.seed, label, 1));
        const Image base = draw_diagram(options.side, options.family, draw_rng);
        for (int v = 0; v < options.variants_per_cluster; ++v) {
            std::snprintf(buf, sizeof buf, "%s%04d_%d", options.prefix.c_str(), c, v);
            const std::string id = buf;
            Image img;
            if (v == 0) {
                img = quantize8(base);
            } else {
                Rng noise_rng(derive_seed(options.seed, id, 2));
                img = quantize8(perturb(base, noise_rng));
            }
            out.images.emplace(id, std::move(img));
            records.push_back({id, "images/" + id + ".png", label, Split::unassigned});
        }
    }
    out.corpus = Corpus(std::move(records));
    return out;
}

void write_synth(const SynthCorpus& synth, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    for (const auto& r : synth.corpus.records()) {
        save_png(synth.images.at(r.id), dir / r.image_ref);
    }
    save_manifest(synth.corpus, dir / "manifest.tsv");
}

} // namespace dm
