#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "dm/image.hpp"
#include "dm/rng.hpp"

namespace dm {

enum class AugKind { crop, color_jitter, grayscale, rotate, channel_shuffle, color_mask, hflip };

std::string_view to_string(AugKind k);
AugKind parse_aug_kind(std::string_view s);

struct JitterStrengths {
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
};

/// One concrete jitter draw: additive brightness shift, contrast and
/// saturation factors (1 means unchanged).
struct JitterDraw {
    double brightness_shift = 0.0;
    double contrast_factor = 1.0;
    double saturation_factor = 1.0;
};

struct AugOp {
    AugKind kind;
    double probability;
};

/// Ordered augmentation chain plus the parameter ranges the ops draw from.
struct AugmentationPolicy {
    std::string name;
    std::vector<AugOp> ops;
    double min_crop_area_ratio = 1.0;
    double max_rotate_deg = 0.0;
    JitterStrengths jitter{};
    double mask_alpha_lo = 0.2;
    double mask_alpha_hi = 0.5;
    int output_size = 64;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;

    /// Same ops with every parameter range halved (validation views).
    AugmentationPolicy reduced() const;

    bool has(AugKind k) const;
};

/// BYOL-style baseline: aggressive crop (8% minimum area), jitter, flip.
AugmentationPolicy default_policy(int output_size = 64);
/// Doubt-specific chain: 70% minimum crop, jitter, grayscale, rotation up to
/// 15 degrees, channel shuffle, overlay colour mask. No flips.
AugmentationPolicy custom_policy(int output_size = 64);
/// Looks up "default" or "custom".
AugmentationPolicy policy_by_name(std::string_view name, int output_size = 64);
/// A policy that applies only `kind` (always) with the custom ranges.
AugmentationPolicy single_op_policy(AugKind kind, int output_size = 64);

/// Samples a crop rectangle with area >= min_area_ratio * W * H and aspect
/// ratio in [3/4, 4/3]; falls back to the full frame after 10 rejections.
Rect sample_crop_rect(int width, int height, double min_area_ratio, Rng& rng);
Image random_crop(const Image& img, double min_area_ratio, Rng& rng);

Image apply_color_jitter(const Image& img, const JitterDraw& draw);
JitterDraw sample_jitter(const JitterStrengths& strengths, Rng& rng);
Image color_jitter(const Image& img, const JitterStrengths& strengths, Rng& rng);

Image grayscale(const Image& img);

/// Rotation about the image centre with bilinear resampling; uncovered
/// pixels are white.
Image rotate(const Image& img, double degrees);
Image random_rotate(const Image& img, double max_deg, Rng& rng);

/// out channel c = in channel perm[c].
Image permute_channels(const Image& img, const std::array<int, 3>& perm);
Image channel_shuffle(const Image& img, Rng& rng);

/// out = (1 - alpha) * in + alpha * color inside `region`.
Image blend_rect(const Image& img, const Rect& region, const std::array<float, 3>& color, double alpha);
Image overlay_color_mask(const Image& img, double alpha_lo, double alpha_hi, Rng& rng);

Image hflip(const Image& img);

/// One augmentation draw from `policy` (resizes to the policy output size).
Image augment(const Image& img, const AugmentationPolicy& policy, Rng& rng);

struct ViewPair {
    std::string source_id;
    Image view_a;
    Image view_b;
};

/// Two independent draws from the same policy on the same source.
ViewPair make_view_pair(const std::string& source_id, const Image& img, const AugmentationPolicy& policy, Rng& rng);

} // namespace dm
