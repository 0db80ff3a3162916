#include "dm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dm {

std::string_view to_string(AugKind k) {
    switch (k) {
    case AugKind::crop: return "crop";
    case AugKind::color_jitter: return "color_jitter";
    case AugKind::grayscale: return "grayscale";
    case AugKind::rotate: return "rotate";
    case AugKind::channel_shuffle: return "channel_shuffle";
    case AugKind::color_mask: return "color_mask";
    case AugKind::hflip: return "hflip";
    }
    return "?";
}

AugKind parse_aug_kind(std::string_view s) {
    for (AugKind k : {AugKind::crop, AugKind::color_jitter, AugKind::grayscale, AugKind::rotate, AugKind::channel_shuffle,
                      AugKind::color_mask, AugKind::hflip}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown augmentation '" + std::string(s) + "'");
}

void AugmentationPolicy::validate() const {
    for (const auto& op : ops) {
        if (!(op.probability >= 0.0 && op.probability <= 1.0)) {
            throw std::invalid_argument("policy '" + name + "': probability of " + std::string(to_string(op.kind)) +
                                        " outside [0,1]");
        }
    }
    if (!(min_crop_area_ratio > 0.0 && min_crop_area_ratio <= 1.0)) {
        throw std::invalid_argument("policy '" + name + "': min_crop_area_ratio outside (0,1]");
    }
    if (!(max_rotate_deg >= 0.0 && max_rotate_deg <= 180.0)) {
        throw std::invalid_argument("policy '" + name + "': max_rotate_deg outside [0,180]");
    }
    if (jitter.brightness < 0 || jitter.contrast < 0 || jitter.saturation < 0) {
        throw std::invalid_argument("policy '" + name + "': negative jitter strength");
    }
    if (!(mask_alpha_lo >= 0.0 && mask_alpha_lo <= mask_alpha_hi && mask_alpha_hi <= 1.0)) {
        throw std::invalid_argument("policy '" + name + "': mask alpha range not within [0,1]");
    }
    if (output_size < 1) {
        throw std::invalid_argument("policy '" + name + "': output_size must be positive");
    }
}

AugmentationPolicy AugmentationPolicy::reduced() const {
    AugmentationPolicy r = *this;
    r.name = name + "/reduced";
    r.min_crop_area_ratio = 1.0 - (1.0 - min_crop_area_ratio) / 2.0;
    r.max_rotate_deg = max_rotate_deg / 2.0;
    r.jitter = {jitter.brightness / 2.0, jitter.contrast / 2.0, jitter.saturation / 2.0};
    r.mask_alpha_lo = mask_alpha_lo / 2.0;
    r.mask_alpha_hi = mask_alpha_hi / 2.0;
    return r;
}

bool AugmentationPolicy::has(AugKind k) const {
    return std::any_of(ops.begin(), ops.end(), [k](const AugOp& op) { return op.kind == k && op.probability > 0.0; });
}

AugmentationPolicy default_policy(int output_size) {
    AugmentationPolicy p;
    p.name = "default";
    p.ops = {{AugKind::crop, 1.0}, {AugKind::hflip, 0.5}, {AugKind::color_jitter, 0.5}};
    p.min_crop_area_ratio = 0.08;
    p.max_rotate_deg = 0.0;
    p.output_size = output_size;
    return p;
}

AugmentationPolicy custom_policy(int output_size) {
    AugmentationPolicy p;
    p.name = "custom";
    p.ops = {{AugKind::crop, 1.0},      {AugKind::rotate, 0.5},          {AugKind::color_jitter, 0.5},
             {AugKind::grayscale, 0.5}, {AugKind::channel_shuffle, 0.5}, {AugKind::color_mask, 0.5}};
    p.min_crop_area_ratio = 0.70;
    p.max_rotate_deg = 15.0;
    p.output_size = output_size;
    return p;
}

AugmentationPolicy policy_by_name(std::string_view name, int output_size) {
    if (name == "default") return default_policy(output_size);
    if (name == "custom") return custom_policy(output_size);
    throw std::invalid_argument("unknown policy '" + std::string(name) + "' (expected default or custom)");
}

AugmentationPolicy single_op_policy(AugKind kind, int output_size) {
    AugmentationPolicy p = custom_policy(output_size);
    p.name = std::string(to_string(kind));
    p.ops = {{kind, 1.0}};
    if (kind != AugKind::crop) {
        p.min_crop_area_ratio = 1.0;
    }
    return p;
}

Rect sample_crop_rect(int width, int height, double min_area_ratio, Rng& rng) {
    const double area = static_cast<double>(width) * height;
    const double min_area = min_area_ratio * area;
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = rng.uniform(min_area_ratio, 1.0) * area;
        const double log_ar = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
        const double ar = std::exp(log_ar);
        const int w = static_cast<int>(std::lround(std::sqrt(target * ar)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / ar)));
        if (w >= 1 && h >= 1 && w <= width && h <= height && static_cast<double>(w) * h >= min_area) {
            const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
            const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
            return Rect{x, y, w, h};
        }
    }
    return Rect{0, 0, width, height};
}

Image random_crop(const Image& img, double min_area_ratio, Rng& rng) {
    if (!(min_area_ratio > 0.0 && min_area_ratio <= 1.0)) {
        throw std::invalid_argument("min_area_ratio outside (0,1]");
    }
    const Rect r = sample_crop_rect(img.width, img.height, min_area_ratio, rng);
    return crop_resize(img, r, img.width, img.height);
}

JitterDraw sample_jitter(const JitterStrengths& s, Rng& rng) {
    JitterDraw d;
    d.brightness_shift = rng.uniform(-s.brightness, s.brightness);
    d.contrast_factor = rng.uniform(1.0 - s.contrast, 1.0 + s.contrast);
    d.saturation_factor = rng.uniform(1.0 - s.saturation, 1.0 + s.saturation);
    return d;
}

Image apply_color_jitter(const Image& img, const JitterDraw& d) {
    Image out = img;
    auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    if (d.brightness_shift != 0.0) {
        for (auto& v : out.data) v = clamp01(v + d.brightness_shift);
    }
    if (d.contrast_factor != 1.0) {
        const auto luma = luminance(out);
        double mean = 0.0;
        for (float l : luma) mean += l;
        mean /= std::max<std::size_t>(1, luma.size());
        for (auto& v : out.data) v = clamp01(mean + d.contrast_factor * (v - mean));
    }
    if (d.saturation_factor != 1.0) {
        const auto luma = luminance(out);
        for (std::size_t i = 0; i < luma.size(); ++i) {
            for (int c = 0; c < 3; ++c) {
                float& v = out.data[i * 3 + c];
                v = clamp01(luma[i] + d.saturation_factor * (v - luma[i]));
            }
        }
    }
    return out;
}

Image color_jitter(const Image& img, const JitterStrengths& strengths, Rng& rng) {
    if (strengths.brightness < 0 || strengths.contrast < 0 || strengths.saturation < 0) {
        throw std::invalid_argument("jitter strengths must be nonnegative");
    }
    return apply_color_jitter(img, sample_jitter(strengths, rng));
}

Image grayscale(const Image& img) {
    Image out = img;
    const auto luma = luminance(img);
    for (std::size_t i = 0; i < luma.size(); ++i) {
        float* p = &out.data[i * 3];
        // Already-gray pixels are kept as is; the float weights do not sum to exactly 1.
        if (p[0] == p[1] && p[1] == p[2]) continue;
        p[0] = p[1] = p[2] = std::clamp(luma[i], 0.0f, 1.0f);
    }
    return out;
}

namespace {
// Snap trig values so quarter turns resample exactly.
double snap(double v) {
    for (double t : {-1.0, 0.0, 1.0}) {
        if (std::abs(v - t) < 1e-12) return t;
    }
    return v;
}
} // namespace

Image rotate(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double rad = degrees * std::numbers::pi / 180.0;
    const double ca = snap(std::cos(rad)), sa = snap(std::sin(rad));
    const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double dx = x - cx, dy = y - cy;
            // Inverse map: source = R(-angle) * (dest - centre) + centre.
            const double sx = cx + ca * dx + sa * dy;
            const double sy = cy - sa * dx + ca * dy;
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = std::clamp(sample_bilinear(img, sx, sy, c, 1.0f), 0.0f, 1.0f);
            }
        }
    }
    return out;
}

Image random_rotate(const Image& img, double max_deg, Rng& rng) {
    if (!(max_deg >= 0.0 && max_deg <= 180.0)) {
        throw std::invalid_argument("max_deg outside [0,180]");
    }
    const double angle = rng.uniform(-max_deg, max_deg);
    return rotate(img, angle);
}

Image permute_channels(const Image& img, const std::array<int, 3>& perm) {
    Image out = img;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[i * 3 + perm[c]];
    }
    return out;
}

Image channel_shuffle(const Image& img, Rng& rng) {
    static constexpr std::array<std::array<int, 3>, 6> kPerms{
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    return permute_channels(img, kPerms[rng.below(6)]);
}

Image blend_rect(const Image& img, const Rect& region, const std::array<float, 3>& color, double alpha) {
    Image out = img;
    if (alpha == 0.0) return out;
    const int x0 = std::max(0, region.x), y0 = std::max(0, region.y);
    const int x1 = std::min(img.width, region.x + region.w), y1 = std::min(img.height, region.y + region.h);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            for (int c = 0; c < 3; ++c) {
                float& v = out.at(x, y, c);
                v = alpha == 1.0 ? color[c]
                                 : std::clamp(static_cast<float>((1.0 - alpha) * v + alpha * color[c]), 0.0f, 1.0f);
            }
        }
    }
    return out;
}

Image overlay_color_mask(const Image& img, double alpha_lo, double alpha_hi, Rng& rng) {
    if (!(alpha_lo >= 0.0 && alpha_lo <= alpha_hi && alpha_hi <= 1.0)) {
        throw std::invalid_argument("alpha range must lie within [0,1]");
    }
    const int w = std::max(1, static_cast<int>(std::lround(rng.uniform(0.2, 0.5) * img.width)));
    const int h = std::max(1, static_cast<int>(std::lround(rng.uniform(0.2, 0.5) * img.height)));
    const Rect r{static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - w + 1))),
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - h + 1))), w, h};
    const std::array<float, 3> color{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                     static_cast<float>(rng.uniform())};
    return blend_rect(img, r, color, rng.uniform(alpha_lo, alpha_hi));
}

Image hflip(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
        }
    }
    return out;
}

Image augment(const Image& img, const AugmentationPolicy& policy, Rng& rng) {
    Image out = resize_bilinear(img, policy.output_size, policy.output_size);
    for (const auto& op : policy.ops) {
        // Always consume the coin so later draws do not shift with outcomes.
        if (!rng.bernoulli(op.probability)) continue;
        switch (op.kind) {
        case AugKind::crop: out = random_crop(out, policy.min_crop_area_ratio, rng); break;
        case AugKind::color_jitter: out = color_jitter(out, policy.jitter, rng); break;
        case AugKind::grayscale: out = grayscale(out); break;
        case AugKind::rotate: out = random_rotate(out, policy.max_rotate_deg, rng); break;
        case AugKind::channel_shuffle: out = channel_shuffle(out, rng); break;
        case AugKind::color_mask: out = overlay_color_mask(out, policy.mask_alpha_lo, policy.mask_alpha_hi, rng); break;
        case AugKind::hflip: out = hflip(out); break;
        }
    }
    return out;
}

ViewPair make_view_pair(const std::string& source_id, const Image& img, const AugmentationPolicy& policy, Rng& rng) {
    policy.validate();
    ViewPair pair;
    pair.source_id = source_id;
    pair.view_a = augment(img, policy, rng);
    pair.view_b = augment(img, policy, rng);
    return pair;
}

} // namespace dm
