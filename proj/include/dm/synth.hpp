#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dm/dataset.hpp"
#include "dm/rng.hpp"

namespace dm {

/// Primitive vocabulary used to draw base diagrams. `outline` draws from
/// strokes, circles, polygons and hatching plus a small set of motifs shared
/// between clusters; `curves` (spirals, zigzags, stars, dot grids) never
/// appears in `outline` corpora and serves as an out-of-distribution source.
enum class SynthFamily { outline, curves };

struct SynthOptions {
    int n_clusters = 200;
    int variants_per_cluster = 5;
    int side = 64;
    std::uint64_t seed = 0;
    SynthFamily family = SynthFamily::outline;
    /// Prefix for record ids and cluster labels, so corpora can be merged.
    std::string prefix = "d";
};

struct SynthCorpus {
    Corpus corpus;
    ImageStore images;
};

/// Draws one base diagram per cluster; variant 0 is the clean drawing and
/// every further variant is perturbed with photo noise (rotation up to 10
/// degrees, small translation, blur patches, bright/dark spots, pen marks).
/// Output images are quantized to 8-bit levels so PNG round trips are exact.
SynthCorpus synth_generate(const SynthOptions& options);

/// Base drawing of one cluster (no perturbation).
Image draw_diagram(int side, SynthFamily family, Rng& rng);

/// Applies the photo-noise model to a clean drawing.
Image perturb(const Image& base, Rng& rng);

/// Writes images/<id>.png and manifest.tsv under `dir`.
void write_synth(const SynthCorpus& synth, const std::filesystem::path& dir);

} // namespace dm
