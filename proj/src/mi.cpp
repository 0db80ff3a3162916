#include "dm/mi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace dm {
namespace {

std::vector<int> bin_indices(const Image& img, int bins) {
    const auto luma = luminance(img);
    std::vector<int> out(luma.size());
    for (std::size_t i = 0; i < luma.size(); ++i) {
        const int b = static_cast<int>(std::floor(static_cast<double>(luma[i]) * bins));
        out[i] = std::clamp(b, 0, bins - 1);
    }
    return out;
}

} // namespace

double mutual_information(const Image& a, const Image& b, int bins) {
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
    if (a.empty() || b.empty()) throw std::invalid_argument("mutual_information: zero-area image");
    const int w = std::min(a.width, b.width);
    const int h = std::min(a.height, b.height);
    const auto ia = bin_indices(resize_bilinear(a, w, h), bins);
    const auto ib = bin_indices(resize_bilinear(b, w, h), bins);

    std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
    std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
    for (std::size_t i = 0; i < ia.size(); ++i) {
        joint[static_cast<std::size_t>(ia[i]) * bins + ib[i]] += 1.0;
        pa[ia[i]] += 1.0;
        pb[ib[i]] += 1.0;
    }
    const double n = static_cast<double>(ia.size());
    std::vector<double> terms;
    for (int u = 0; u < bins; ++u) {
        for (int v = 0; v < bins; ++v) {
            const double c = joint[static_cast<std::size_t>(u) * bins + v];
            if (c == 0.0) continue;
            // p(u,v) log2(p(u,v) / (p(u) p(v))) with counts: c/n log2(c n / (a b)).
            terms.push_back((c / n) * std::log2(c * n / (pa[u] * pb[v])));
        }
    }
    // Summing in sorted order makes MI(a,b) and MI(b,a) bit-identical.
    std::sort(terms.begin(), terms.end());
    double mi = 0.0;
    for (double t : terms) mi += t;
    return std::max(0.0, mi);
}

double image_entropy(const Image& img, int bins) {
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
    const auto idx = bin_indices(img, bins);
    std::vector<double> p(bins, 0.0);
    for (int i : idx) p[i] += 1.0;
    double h = 0.0;
    for (double c : p) {
        if (c > 0) {
            const double q = c / idx.size();
            h -= q * std::log2(q);
        }
    }
    return h;
}

std::string_view to_string(PairKind k) {
    switch (k) {
    case PairKind::original: return "original";
    case PairKind::positive: return "positive";
    case PairKind::negative: return "negative";
    }
    return "?";
}

double MiReport::value(AugKind aug, PairKind kind) const {
    for (const auto& r : rows) {
        if (r.augmentation == aug && r.pair_kind == kind) return r.mi_bits;
    }
    throw std::out_of_range("no MI row for " + std::string(to_string(aug)) + "/" + std::string(to_string(kind)));
}

std::string MiReport::to_tsv() const {
    std::vector<AugKind> augs;
    for (const auto& r : rows) {
        if (std::find(augs.begin(), augs.end(), r.augmentation) == augs.end()) augs.push_back(r.augmentation);
    }
    std::string out = "pair";
    for (auto a : augs) {
        out += '\t';
        out += to_string(a);
    }
    out += '\n';
    char buf[32];
    for (PairKind k : {PairKind::original, PairKind::positive, PairKind::negative}) {
        out += to_string(k);
        for (auto a : augs) {
            std::snprintf(buf, sizeof buf, "\t%.4f", value(a, k));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

std::string MiReport::to_json() const {
    nlohmann::json j;
    j["bins"] = bins;
    j["sample_count"] = sample_count;
    for (const auto& r : rows) {
        j["mi_bits"][std::string(to_string(r.pair_kind))][std::string(to_string(r.augmentation))] = r.mi_bits;
    }
    return j.dump(2);
}

MiReport mi_gain_report(const Corpus& corpus, const ImageStore& images, const std::vector<AugKind>& augmentations,
                        int pairs_per_kind, std::uint64_t seed, int bins) {
    if (corpus.cluster_count() < 2) {
        throw std::invalid_argument("mi_gain_report needs at least 2 clusters for negative pairs");
    }
    if (pairs_per_kind < 1) throw std::invalid_argument("pairs_per_kind must be >= 1");
    const auto& records = corpus.records();
    MiReport report;
    report.bins = bins;
    report.sample_count = pairs_per_kind;
    for (AugKind aug : augmentations) {
        const int side = images.at(records.front().id).width;
        const AugmentationPolicy policy = single_op_policy(aug, side);
        Rng rng(derive_seed(seed, to_string(aug)));
        double sums[3] = {0, 0, 0};
        for (int i = 0; i < pairs_per_kind; ++i) {
            const auto& src = records[rng.below(records.size())];
            const Image& x = images.at(src.id);
            sums[0] += mutual_information(x, augment(x, policy, rng), bins);
            sums[1] += mutual_information(augment(x, policy, rng), augment(x, policy, rng), bins);
            const DoubtRecord* other = &records[rng.below(records.size())];
            while (other->cluster_label == src.cluster_label) {
                other = &records[rng.below(records.size())];
            }
            sums[2] += mutual_information(augment(x, policy, rng), augment(images.at(other->id), policy, rng), bins);
        }
        report.rows.push_back({aug, PairKind::original, sums[0] / pairs_per_kind});
        report.rows.push_back({aug, PairKind::positive, sums[1] / pairs_per_kind});
        report.rows.push_back({aug, PairKind::negative, sums[2] / pairs_per_kind});
    }
    return report;
}

} // namespace dm
