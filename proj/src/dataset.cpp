#include "dm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dm/png_io.hpp"
#include "dm/rng.hpp"

namespace dm {

std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "-";
    }
    return "-";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "-" || s == "unassigned") return Split::unassigned;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Corpus::Corpus(std::vector<DoubtRecord> records) : records_(std::move(records)) {
    by_id_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.id.empty()) {
            throw ManifestError("record " + std::to_string(i) + " has an empty id");
        }
        if (r.cluster_label.empty()) {
            throw ManifestError("record '" + r.id + "' has an empty cluster label");
        }
        if (!by_id_.emplace(r.id, i).second) {
            throw ManifestError("duplicate id '" + r.id + "'");
        }
        label_index_[r.cluster_label].push_back(r.id);
    }
}

const DoubtRecord* Corpus::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

const DoubtRecord& Corpus::at(std::string_view id) const {
    if (const auto* r = find(id)) {
        return *r;
    }
    throw std::out_of_range("unknown record id '" + std::string(id) + "'");
}

std::vector<DoubtRecord> Corpus::in_split(Split s) const {
    std::vector<DoubtRecord> out;
    std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
                 [s](const DoubtRecord& r) { return r.split == s; });
    return out;
}

Corpus Corpus::subset(Split s) const { return Corpus(in_split(s)); }

std::vector<std::string> Corpus::labels_in(Split s) const {
    std::vector<std::string> out;
    for (const auto& [label, ids] : label_index_) {
        if (at(ids.front()).split == s) {
            out.push_back(label);
        }
    }
    return out;
}

Corpus parse_manifest(std::string_view text) {
    std::vector<DoubtRecord> records;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        const std::string where = "manifest line " + std::to_string(line_no) + ": ";
        if (fields.size() != 4) {
            throw ManifestError(where + "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
        }
        if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
            throw ManifestError(where + "empty field");
        }
        DoubtRecord r{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), Split::unassigned};
        try {
            r.split = parse_split(fields[3]);
        } catch (const std::invalid_argument& e) {
            throw ManifestError(where + e.what());
        }
        records.push_back(std::move(r));
    }
    return Corpus(std::move(records));
}

Corpus load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ManifestError("cannot open manifest " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

std::string format_manifest(const Corpus& corpus) {
    std::string out;
    for (const auto& r : corpus.records()) {
        out += r.id;
        out += '\t';
        out += r.image_ref;
        out += '\t';
        out += r.cluster_label;
        out += '\t';
        out += to_string(r.split);
        out += '\n';
    }
    return out;
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ManifestError("cannot write manifest " + path.string());
    }
    out << format_manifest(corpus);
}

Corpus split_by_cluster(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed,
                        bool require_all_splits) {
    for (double r : ratios) {
        if (!(r > 0.0)) {
            throw std::invalid_argument("split ratios must be positive");
        }
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    const std::size_t n = corpus.cluster_count();
    if (require_all_splits && n < ratios.size()) {
        throw std::invalid_argument("fewer clusters (" + std::to_string(n) + ") than splits (3)");
    }

    // Largest remainder: floor counts, then hand out the leftovers by
    // descending fractional part (ties to the earlier split).
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) {
        ++counts[order[k % 3]];
    }
    if (require_all_splits) {
        // Borrow from the largest split so none is empty.
        for (std::size_t i = 0; i < 3; ++i) {
            if (counts[i] == 0) {
                auto big = std::max_element(counts.begin(), counts.end());
                --*big;
                ++counts[i];
            }
        }
    }

    std::vector<std::string> labels;
    labels.reserve(n);
    for (const auto& [label, ids] : corpus.label_index()) {
        labels.push_back(label);
    }
    Rng rng(seed);
    rng.shuffle(labels.begin(), labels.end());

    std::unordered_map<std::string, Split> assignment;
    std::size_t cursor = 0;
    constexpr std::array<Split, 3> kSplits{Split::train, Split::val, Split::test};
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < counts[s]; ++k) {
            assignment[labels[cursor++]] = kSplits[s];
        }
    }

    std::vector<DoubtRecord> records = corpus.records();
    for (auto& r : records) {
        r.split = assignment.at(r.cluster_label);
    }
    return Corpus(std::move(records));
}

ImageStore load_images(const Corpus& corpus, const std::filesystem::path& base_dir) {
    ImageStore out;
    out.reserve(corpus.size());
    for (const auto& r : corpus.records()) {
        std::filesystem::path p(r.image_ref);
        if (p.is_relative()) {
            p = base_dir / p;
        }
        out.emplace(r.id, load_png(p));
    }
    return out;
}

} // namespace dm
