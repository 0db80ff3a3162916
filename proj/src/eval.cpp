#include "dm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace dm {

namespace {

double l2(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw std::invalid_argument("embedding dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::string fmt(double v, const char* f = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace

double TopKReport::at(int k) const {
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] == k) return accuracy[i];
    }
    throw std::out_of_range("no accuracy for k=" + std::to_string(k));
}

std::string TopKReport::to_tsv(const std::string& name) const {
    std::string out = "model";
    for (int k : ks) out += "\ttop-" + std::to_string(k);
    out += "\tqueries\n" + name;
    for (double a : accuracy) out += "\t" + fmt(100.0 * a, "%.1f%%");
    out += "\t" + std::to_string(query_count) + "\n";
    return out;
}

std::string TopKReport::to_json() const {
    nlohmann::json j;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        j["top" + std::to_string(ks[i])] = accuracy[i];
        j["hits" + std::to_string(ks[i])] = hits[i];
    }
    j["queries"] = query_count;
    j["unmatched_queries"] = unmatched_queries;
    return j.dump(2) + "\n";
}

TopKReport topk_accuracy(const HnswIndex& index, const std::vector<EmbeddingRecord>& queries,
                         const std::map<std::string, std::string>& gallery_labels, std::vector<int> ks, int ef_search) {
    if (ks.empty()) throw std::invalid_argument("topk_accuracy: no k values");
    std::sort(ks.begin(), ks.end());
    if (ks.front() < 1) throw std::invalid_argument("topk_accuracy: k must be >= 1");
    std::map<std::string, std::size_t> label_count;
    for (const auto& [id, label] : gallery_labels) ++label_count[label];

    TopKReport r;
    r.ks = ks;
    r.hits.assign(ks.size(), 0);
    const int kmax = ks.back();
    for (const auto& q : queries) {
        std::size_t others = label_count.count(q.label) ? label_count.at(q.label) : 0;
        auto self = gallery_labels.find(q.id);
        if (self != gallery_labels.end() && self->second == q.label) --others;
        if (others == 0) {
            ++r.unmatched_queries;
            continue;
        }
        ++r.query_count;
        const int want = std::min<int>(kmax + 1, static_cast<int>(index.size()));
        const auto results = index.search(q.values, want, std::max(ef_search, want));
        int rank = 0;
        int first_hit = -1;
        for (const auto& m : results) {
            if (m.id == q.id) continue;
            ++rank;
            auto it = gallery_labels.find(m.id);
            if (it != gallery_labels.end() && it->second == q.label) {
                first_hit = rank;
                break;
            }
            if (rank >= kmax) break;
        }
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (first_hit > 0 && first_hit <= ks[i]) ++r.hits[i];
        }
    }
    for (std::size_t h : r.hits) {
        r.accuracy.push_back(r.query_count ? static_cast<double>(h) / static_cast<double>(r.query_count) : 0.0);
    }
    return r;
}

std::vector<std::vector<double>> distance_grid(const std::vector<EmbeddingRecord>& rows) {
    const std::size_t n = rows.size();
    std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) g[i][j] = g[j][i] = l2(rows[i].values, rows[j].values);
    }
    return g;
}

std::vector<NeighborRow> nn_matrix(const std::vector<EmbeddingRecord>& rows, int k) {
    if (k < 1 || rows.size() < static_cast<std::size_t>(k) + 1) {
        throw std::invalid_argument("nn_matrix needs k >= 1 and at least k+1 items");
    }
    const auto g = distance_grid(rows);
    std::vector<NeighborRow> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (j != i) order.push_back(j);
        }
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
            return g[i][a] < g[i][b] || (g[i][a] == g[i][b] && a < b);
        });
        NeighborRow row{rows[i].id, rows[i].label, {}, {}};
        for (int r = 0; r < k; ++r) {
            row.neighbor_ids.push_back(rows[order[r]].id);
            row.distances.push_back(g[i][order[r]]);
        }
        out.push_back(std::move(row));
    }
    return out;
}

double in_label_fraction(const std::vector<NeighborRow>& rows, const std::vector<EmbeddingRecord>& source) {
    std::map<std::string, std::string> label;
    for (const auto& r : source) label[r.id] = r.label;
    std::size_t same = 0, total = 0;
    for (const auto& r : rows) {
        for (const auto& n : r.neighbor_ids) {
            same += label.at(n) == r.label;
            ++total;
        }
    }
    return total ? static_cast<double>(same) / static_cast<double>(total) : 0.0;
}

std::string format_nn_matrix(const std::vector<NeighborRow>& rows) {
    std::string out = "id\tlabel";
    const std::size_t k = rows.empty() ? 0 : rows.front().neighbor_ids.size();
    for (std::size_t r = 1; r <= k; ++r) out += "\tnn" + std::to_string(r) + "\td" + std::to_string(r);
    out += '\n';
    for (const auto& row : rows) {
        out += row.id + "\t" + row.label;
        for (std::size_t r = 0; r < row.neighbor_ids.size(); ++r) {
            out += "\t" + row.neighbor_ids[r] + "\t" + fmt(row.distances[r]);
        }
        out += '\n';
    }
    return out;
}

std::string format_distance_grid(const std::vector<EmbeddingRecord>& rows, const std::vector<std::vector<double>>& grid) {
    std::string out = "id";
    for (const auto& r : rows) out += "\t" + r.id;
    out += '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out += rows[i].id;
        for (double d : grid[i]) out += "\t" + fmt(d);
        out += '\n';
    }
    return out;
}

std::vector<double> RatioDistribution::ratios() const {
    std::vector<double> r;
    for (const auto& l : labels) {
        if (!l.degenerate) r.push_back(l.ratio);
    }
    std::sort(r.begin(), r.end());
    return r;
}

std::size_t RatioDistribution::degenerate_count() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](const LabelRatio& l) { return l.degenerate; }));
}

double RatioDistribution::quantile(double q) const {
    const auto r = ratios();
    if (r.empty()) throw std::invalid_argument("no non-degenerate ratios");
    const double pos = q * static_cast<double>(r.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, r.size() - 1);
    return r[lo] + (pos - static_cast<double>(lo)) * (r[hi] - r[lo]);
}

std::string RatioDistribution::to_tsv() const {
    std::string out = "label\tmembers\tbetween\twithin\tratio\tdegenerate\n";
    for (const auto& l : labels) {
        out += l.label + "\t" + std::to_string(l.members) + "\t" + fmt(l.between) + "\t" + fmt(l.within) + "\t" +
               (l.degenerate ? std::string("-") : fmt(l.ratio)) + "\t" + (l.degenerate ? "1" : "0") + "\n";
    }
    return out;
}

std::string RatioDistribution::to_json() const {
    nlohmann::json j;
    j["labels"] = labels.size();
    j["degenerate"] = degenerate_count();
    if (!ratios().empty()) {
        j["min"] = quantile(0.0);
        j["q25"] = quantile(0.25);
        j["median"] = median();
        j["q75"] = quantile(0.75);
        j["max"] = quantile(1.0);
    }
    return j.dump(2) + "\n";
}

RatioDistribution discriminant_ratios(const std::vector<EmbeddingRecord>& rows) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i) groups[rows[i].label].push_back(i);
    const auto g = distance_grid(rows);
    RatioDistribution dist;
    for (const auto& [label, members] : groups) {
        LabelRatio lr{label, members.size()};
        double within = 0.0, between = 0.0;
        std::size_t nw = 0, nb = 0;
        std::vector<std::uint8_t> mine(rows.size(), 0);
        for (std::size_t i : members) mine[i] = 1;
        for (std::size_t a = 0; a < members.size(); ++a) {
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                within += g[members[a]][members[b]];
                ++nw;
            }
            for (std::size_t j = 0; j < rows.size(); ++j) {
                if (!mine[j]) {
                    between += g[members[a]][j];
                    ++nb;
                }
            }
        }
        lr.within = nw ? within / static_cast<double>(nw) : 0.0;
        lr.between = nb ? between / static_cast<double>(nb) : 0.0;
        lr.degenerate = nw == 0 || nb == 0 || lr.within == 0.0;
        lr.ratio = lr.degenerate ? 0.0 : lr.between / lr.within;
        dist.labels.push_back(lr);
    }
    if (dist.degenerate_count() == dist.labels.size()) {
        throw std::invalid_argument("discriminant_ratios: every label is degenerate");
    }
    return dist;
}

std::string ClusterReport::to_tsv() const {
    return "clusters\tprecision\ttotal\tnoise\n" + std::to_string(clusters) + "\t" + fmt(100.0 * precision, "%.1f%%") +
           "\t" + std::to_string(total) + "\t" + std::to_string(noise) + "\n";
}

std::string ClusterReport::to_json() const {
    nlohmann::json j{{"clusters", clusters}, {"precision", precision}, {"total", total}, {"noise", noise}};
    return j.dump(2) + "\n";
}

ClusterReport threshold_cluster(const std::vector<EmbeddingRecord>& rows, double eps, std::size_t min_size) {
    if (eps < 0.0) throw std::invalid_argument("eps must be >= 0");
    const std::size_t n = rows.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (l2(rows[i].values, rows[j].values) <= eps) {
                const auto a = find(i), b = find(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
        }
    }
    std::map<std::size_t, std::vector<std::size_t>> comps;
    for (std::size_t i = 0; i < n; ++i) comps[find(i)].push_back(i);

    ClusterReport r;
    r.total = n;
    r.assignment.assign(n, -1);
    std::size_t clustered = 0, correct = 0;
    for (const auto& [root, members] : comps) {
        if (members.size() < min_size) {
            r.noise += members.size();
            continue;
        }
        std::map<std::string, std::size_t> votes;
        for (std::size_t i : members) ++votes[rows[i].label];
        std::string majority;
        std::size_t best = 0;
        for (const auto& [label, count] : votes) {
            if (count > best) { // map order breaks ties toward the smallest label
                best = count;
                majority = label;
            }
        }
        for (std::size_t i : members) r.assignment[i] = static_cast<int>(r.clusters);
        ++r.clusters;
        clustered += members.size();
        correct += best;
    }
    r.precision = clustered ? static_cast<double>(correct) / static_cast<double>(clustered) : 0.0;
    return r;
}

CollapseReport collapse_sentinel(const std::vector<Embedding>& embeddings) {
    if (embeddings.size() < 2) throw std::invalid_argument("collapse_sentinel needs at least 2 embeddings");
    const std::size_t d = embeddings.front().size();
    CollapseReport r;
    r.per_dim_std.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (const auto& e : embeddings) mean += e.at(k);
        mean /= static_cast<double>(embeddings.size());
        double var = 0.0;
        for (const auto& e : embeddings) var += (e[k] - mean) * (e[k] - mean);
        r.per_dim_std[k] = std::sqrt(var / static_cast<double>(embeddings.size()));
    }
    r.mean_std = d ? std::accumulate(r.per_dim_std.begin(), r.per_dim_std.end(), 0.0) / static_cast<double>(d) : 0.0;
    r.collapsed = r.mean_std < kCollapseThreshold;
    return r;
}

double binomial_upper_tail(std::size_t trials, std::size_t successes, double p) {
    if (successes == 0) return 1.0;
    if (successes > trials) return 0.0;
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    const double n = static_cast<double>(trials);
    double total = 0.0;
    for (std::size_t i = successes; i <= trials; ++i) {
        const double k = static_cast<double>(i);
        const double log_term = std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1) + k * std::log(p) +
                                (n - k) * std::log1p(-p);
        total += std::exp(log_term);
    }
    return std::min(1.0, total);
}

std::string OodReport::to_json() const {
    auto j = nlohmann::json::parse(topk.to_json());
    j["clusters"] = clusters;
    j["chance"] = chance;
    j["p_value"] = p_value;
    return j.dump(2) + "\n";
}

OodReport ood_probe(const Encoder& encoder, HnswIndex index, const Corpus& held_out, const ImageStore& held_out_images,
                    const std::set<std::string>& training_labels, const ImageStore& training_images,
                    std::uint64_t seed, std::vector<int> ks, int ef_search) {
    if (held_out.empty()) throw std::invalid_argument("ood_probe: no held-out items");
    for (const auto& [label, ids] : held_out.label_index()) {
        if (training_labels.count(label)) {
            throw std::invalid_argument("ood_probe: held-out label '" + label + "' overlaps training labels");
        }
    }
    std::unordered_set<std::string> train_bytes;
    for (const auto& [id, img] : training_images) {
        const auto b = to_bytes8(img);
        train_bytes.emplace(b.begin(), b.end());
    }
    std::vector<const Image*> ptrs;
    std::vector<Image> prepared;
    prepared.reserve(held_out.size());
    for (const auto& rec : held_out.records()) {
        auto it = held_out_images.find(rec.id);
        if (it == held_out_images.end()) throw std::invalid_argument("ood_probe: no image for '" + rec.id + "'");
        const auto b = to_bytes8(it->second);
        if (train_bytes.count(std::string(b.begin(), b.end()))) {
            throw std::invalid_argument("ood_probe: held-out image '" + rec.id + "' duplicates a training image");
        }
        prepared.push_back(prepare_input(it->second, encoder.config().input_size));
    }
    for (const auto& img : prepared) ptrs.push_back(&img);
    const auto emb = encoder.embed_batch(ptrs, index.metric() == Metric::cosine);

    Rng rng(derive_seed(seed, "ood-insert"));
    std::map<std::string, std::string> labels;
    std::vector<EmbeddingRecord> queries;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
        const auto& rec = held_out.records()[i];
        index.insert(rec.id, emb[i], rng);
        labels[rec.id] = rec.cluster_label;
        queries.push_back({rec.id, rec.cluster_label, emb[i]});
    }
    OodReport r;
    r.topk = topk_accuracy(index, queries, labels, std::move(ks), ef_search);
    r.clusters = held_out.cluster_count();
    r.chance = 1.0 / static_cast<double>(r.clusters);
    r.p_value = binomial_upper_tail(r.topk.query_count, r.topk.hits.front(), r.chance);
    return r;
}

} // namespace dm
