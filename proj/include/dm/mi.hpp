#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dm/augment.hpp"
#include "dm/dataset.hpp"

namespace dm {

/// Mutual information in bits between two images, estimated from the
/// bins x bins joint histogram of their aligned grayscale pixels. Images of
/// different size are both resized to the smaller width and height first.
double mutual_information(const Image& a, const Image& b, int bins = 32);

/// Shannon entropy in bits of one image's grayscale histogram.
double image_entropy(const Image& img, int bins = 32);

enum class PairKind { original, positive, negative };
std::string_view to_string(PairKind k);

struct MiRow {
    AugKind augmentation;
    PairKind pair_kind;
    double mi_bits;
};

struct MiReport {
    std::vector<MiRow> rows;
    int bins = 32;
    int sample_count = 0;

    double value(AugKind aug, PairKind kind) const;
    /// Augmentation x pair-kind table, tab separated.
    std::string to_tsv() const;
    std::string to_json() const;
};

/// For each single-op policy: `original` pairs compare a source with one
/// augmented view of itself, `positive` pairs two views of one source, and
/// `negative` pairs views of sources from different clusters. Reports the
/// mean MI per (augmentation, pair kind) over `pairs_per_kind` samples.
MiReport mi_gain_report(const Corpus& corpus, const ImageStore& images, const std::vector<AugKind>& augmentations,
                        int pairs_per_kind, std::uint64_t seed, int bins = 32);

} // namespace dm
