#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dm/image.hpp"

namespace dm {

enum class Split { train, val, test, unassigned };

std::string_view to_string(Split s);
/// Accepts "train", "val", "test" and "-" (unassigned).
Split parse_split(std::string_view s);

struct DoubtRecord {
    std::string id;
    std::string image_ref;
    std::string cluster_label;
    Split split = Split::unassigned;

    bool operator==(const DoubtRecord&) const = default;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Immutable-after-construction collection of doubt records with a
/// cluster_label -> record ids index.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<DoubtRecord> records);

    const std::vector<DoubtRecord>& records() const { return records_; }
    /// Ordered by label so iteration is deterministic.
    const std::map<std::string, std::vector<std::string>>& label_index() const { return label_index_; }

    std::size_t size() const { return records_.size(); }
    std::size_t cluster_count() const { return label_index_.size(); }
    bool empty() const { return records_.empty(); }

    const DoubtRecord* find(std::string_view id) const;
    const DoubtRecord& at(std::string_view id) const;

    /// Records of one split, in corpus order.
    std::vector<DoubtRecord> in_split(Split s) const;
    Corpus subset(Split s) const;
    std::vector<std::string> labels_in(Split s) const;

    bool operator==(const Corpus& other) const { return records_ == other.records_; }

private:
    std::vector<DoubtRecord> records_;
    std::map<std::string, std::vector<std::string>> label_index_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Tab-separated `id path cluster_label split` lines. Empty lines are
/// skipped.
Corpus load_manifest(const std::filesystem::path& path);
Corpus parse_manifest(std::string_view text);
void save_manifest(const Corpus& corpus, const std::filesystem::path& path);
std::string format_manifest(const Corpus& corpus);

/// Label-cluster proportions of the reference split (3385/847/2016 labels).
inline constexpr std::array<double, 3> kDefaultSplitRatios{0.54, 0.14, 0.32};

/// Assigns whole clusters to train/val/test. Cluster counts follow the ratios
/// by largest-remainder rounding; which clusters land where is a seeded
/// shuffle. With `require_all_splits`, fewer clusters than splits is an
/// error; otherwise small corpora leave some splits empty.
Corpus split_by_cluster(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed,
                        bool require_all_splits = false);

/// Images keyed by record id.
using ImageStore = std::unordered_map<std::string, Image>;

/// Loads every record's image_ref (resolved against base_dir when relative).
ImageStore load_images(const Corpus& corpus, const std::filesystem::path& base_dir);

} // namespace dm
