#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dm/models.hpp"
#include "dm/rng.hpp"

namespace dm {

enum class Metric { euclidean = 0, cosine = 1 };
std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

/// euclidean: |a-b|; cosine: a.b / (|a||b|), zero vectors rejected.
double score(std::span<const float> a, std::span<const float> b, Metric metric);

struct MatchResult {
    std::string id;
    double score = 0.0; // distance (euclidean) or similarity (cosine)
    int rank = 0;       // 1-based
    bool operator==(const MatchResult&) const = default;
};

struct HnswParams {
    int M = 16;
    int ef_construction = 200;
    /// New-node links on layer 0; at most 2M.
    int layer0_fanout = 16;
    /// Highest layer a node may be assigned; 0 forces a single layer, -1
    /// leaves levels uncapped.
    int max_level = -1;
};

class IndexFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IndexAudit {
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

inline constexpr std::uint32_t kIndexVersion = 1;

/// Layered proximity graph with undirected adjacency. Cosine vectors are
/// stored normalized and searched by Euclidean distance.
class HnswIndex {
public:
    HnswIndex(int dim, Metric metric, HnswParams params = {});

    void insert(const std::string& id, std::span<const float> vec, Rng& rng);
    std::vector<MatchResult> search(std::span<const float> query, int k, int ef_search = 100) const;

    int dim() const { return dim_; }
    Metric metric() const { return metric_; }
    const HnswParams& params() const { return params_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    const std::string& id(std::size_t node) const { return ids_.at(node); }
    std::optional<std::size_t> find(std::string_view id) const;
    int level(std::size_t node) const { return static_cast<int>(links_.at(node).size()) - 1; }
    const std::vector<std::uint32_t>& neighbors(std::size_t node, int layer) const {
        return links_.at(node).at(static_cast<std::size_t>(layer));
    }
    std::span<const float> vector(std::size_t node) const {
        return {vectors_.data() + node * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
    }
    std::optional<std::size_t> entry_point() const { return entry_; }
    int top_level() const { return entry_ ? level(*entry_) : -1; }
    int cap(int layer) const { return layer == 0 ? 2 * params_.M : params_.M; }
    /// Candidates a new node links to on `layer`.
    int fanout(int layer) const { return layer == 0 ? params_.layer0_fanout : params_.M; }

    /// Degree caps, symmetry, entry-point maximality and layer-0 reachability.
    IndexAudit audit() const;

    std::vector<std::uint8_t> encode() const;
    /// Validates the header, length and every structural invariant.
    static HnswIndex decode(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static HnswIndex load(const std::filesystem::path& path);

private:
    struct Candidate {
        float dist;
        std::uint32_t node;
        bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && node < o.node); }
        bool operator>(const Candidate& o) const { return o < *this; }
    };

    float dist(std::span<const float> q, std::uint32_t node) const;
    float dist(std::uint32_t a, std::uint32_t b) const { return dist(vector(a), b); }
    std::vector<float> prepare(std::span<const float> vec) const;
    std::uint32_t greedy(std::span<const float> q, std::uint32_t ep, int layer) const;
    /// Nearest-first candidates found with pool size ef.
    std::vector<Candidate> search_layer(std::span<const float> q, std::uint32_t ep, int ef, int layer) const;
    void link(std::uint32_t a, std::uint32_t b, int layer);
    void unlink(std::uint32_t a, std::uint32_t b, int layer);
    bool linked(std::uint32_t a, std::uint32_t b, int layer) const;
    void connect(std::uint32_t q, const std::vector<Candidate>& chosen, int layer);
    double report(float d2) const;

    int dim_;
    Metric metric_;
    HnswParams params_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> by_id_;
    std::vector<float> vectors_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_; // node -> layer -> neighbors
    std::optional<std::size_t> entry_;
};

/// Inserts in order with one seeded level stream.
HnswIndex build_index(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors, Metric metric,
                      HnswParams params, std::uint64_t seed);

/// Exhaustive ranking with the same scores and tie order as the index.
std::vector<MatchResult> brute_force_search(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors,
                                            std::span<const float> query, int k, Metric metric);

} // namespace dm
