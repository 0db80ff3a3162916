#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dm/dataset.hpp"
#include "dm/embeddings_io.hpp"
#include "dm/hnsw.hpp"

namespace dm {

struct TopKReport {
    std::vector<int> ks;
    std::vector<std::size_t> hits;
    std::vector<double> accuracy;
    std::size_t query_count = 0;
    /// Queries whose cluster has no other member in the gallery.
    std::size_t unmatched_queries = 0;

    double at(int k) const;
    /// Header plus one row: `name  top-1  top-3  top-5  queries`.
    std::string to_tsv(const std::string& name) const;
    std::string to_json() const;
};

/// A query hits at k when one of its first k results (itself excluded by
/// id) carries its label. `gallery_labels` maps index ids to labels.
TopKReport topk_accuracy(const HnswIndex& index, const std::vector<EmbeddingRecord>& queries,
                         const std::map<std::string, std::string>& gallery_labels, std::vector<int> ks = {1, 3, 5},
                         int ef_search = 100);

struct NeighborRow {
    std::string id;
    std::string label;
    std::vector<std::string> neighbor_ids;
    std::vector<double> distances;
};

/// Exact k nearest (L2) of every item, in input order. Needs k+1 items.
std::vector<NeighborRow> nn_matrix(const std::vector<EmbeddingRecord>& rows, int k);
std::vector<std::vector<double>> distance_grid(const std::vector<EmbeddingRecord>& rows);
double in_label_fraction(const std::vector<NeighborRow>& rows, const std::vector<EmbeddingRecord>& source);
std::string format_nn_matrix(const std::vector<NeighborRow>& rows);
std::string format_distance_grid(const std::vector<EmbeddingRecord>& rows, const std::vector<std::vector<double>>& grid);

struct LabelRatio {
    std::string label;
    std::size_t members = 0;
    double between = 0.0;
    double within = 0.0;
    double ratio = 0.0;
    bool degenerate = false; // fewer than two members or zero within distance
};

struct RatioDistribution {
    std::vector<LabelRatio> labels;

    std::vector<double> ratios() const; // non-degenerate, sorted
    std::size_t degenerate_count() const;
    double quantile(double q) const;    // linear interpolation
    double median() const { return quantile(0.5); }
    std::string to_tsv() const;
    std::string to_json() const;
};

/// Per label: mean pairwise L2 to other-label points over mean pairwise L2
/// within the label. Throws when every label is degenerate.
RatioDistribution discriminant_ratios(const std::vector<EmbeddingRecord>& rows);

struct ClusterReport {
    std::size_t clusters = 0;
    double precision = 0.0; // over clustered points; 0 when none are clustered
    std::size_t total = 0;
    std::size_t noise = 0;
    std::vector<int> assignment; // component per point, -1 for noise

    std::string to_tsv() const;
    std::string to_json() const;
};

/// Connected components of the graph with an edge wherever L2 <= eps;
/// components smaller than min_size are noise. A component's label is its
/// majority label, ties going to the smallest label.
ClusterReport threshold_cluster(const std::vector<EmbeddingRecord>& rows, double eps, std::size_t min_size);

struct CollapseReport {
    std::vector<double> per_dim_std;
    double mean_std = 0.0;
    bool collapsed = false;
    std::string verdict() const { return collapsed ? "COLLAPSED" : "healthy"; }
};

inline constexpr double kCollapseThreshold = 1e-3;
CollapseReport collapse_sentinel(const std::vector<Embedding>& embeddings);

/// P(X >= successes) for X ~ Binomial(trials, p).
double binomial_upper_tail(std::size_t trials, std::size_t successes, double p);

struct OodReport {
    TopKReport topk;
    std::size_t clusters = 0;
    double chance = 0.0;
    double p_value = 1.0; // top-1 hits against chance
    std::string to_json() const;
};

/// Embeds and inserts the held-out items into a copy of `index`, then
/// queries each against it. Throws if a held-out label is a training label
/// or a held-out image is byte-identical (8-bit) to a training image.
OodReport ood_probe(const Encoder& encoder, HnswIndex index, const Corpus& held_out, const ImageStore& held_out_images,
                    const std::set<std::string>& training_labels, const ImageStore& training_images,
                    std::uint64_t seed, std::vector<int> ks = {1, 3, 5}, int ef_search = 100);

} // namespace dm
