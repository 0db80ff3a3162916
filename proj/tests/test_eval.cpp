#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dm/byol.hpp"
#include "dm/eval.hpp"
#include "dm/synth.hpp"

using namespace dm;

namespace {

std::vector<EmbeddingRecord> planted(int clusters, int per, int d, double spread, Rng& rng) {
    std::vector<EmbeddingRecord> out;
    for (int c = 0; c < clusters; ++c) {
        std::vector<double> centre(static_cast<std::size_t>(d));
        for (auto& x : centre) x = rng.normal() * 5.0;
        for (int i = 0; i < per; ++i) {
            EmbeddingRecord r{"c" + std::to_string(c) + "_" + std::to_string(i), "L" + std::to_string(c), {}};
            for (double x : centre) r.values.push_back(static_cast<float>(x + rng.normal() * spread));
            out.push_back(r);
        }
    }
    return out;
}

HnswIndex index_of(const std::vector<EmbeddingRecord>& rows, Metric m = Metric::euclidean) {
    std::vector<std::string> ids;
    std::vector<Embedding> vecs;
    for (const auto& r : rows) {
        ids.push_back(r.id);
        vecs.push_back(r.values);
    }
    return build_index(ids, vecs, m, {}, 1);
}

std::map<std::string, std::string> labels_of(const std::vector<EmbeddingRecord>& rows) {
    std::map<std::string, std::string> out;
    for (const auto& r : rows) out[r.id] = r.label;
    return out;
}

double l2(const Embedding& a, const Embedding& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    return std::sqrt(s);
}

// Exhaustive top-k: rank every other gallery item by distance, ties by id.
std::vector<std::size_t> exhaustive_hits(const std::vector<EmbeddingRecord>& rows, const std::vector<int>& ks) {
    std::vector<std::size_t> hits(ks.size(), 0);
    for (const auto& q : rows) {
        std::vector<std::pair<double, std::string>> order;
        for (const auto& g : rows) {
            if (g.id != q.id) order.push_back({l2(q.values, g.values), g.id});
        }
        std::sort(order.begin(), order.end());
        const auto lab = labels_of(rows);
        for (std::size_t j = 0; j < ks.size(); ++j) {
            for (int r = 0; r < ks[j] && r < static_cast<int>(order.size()); ++r) {
                if (lab.at(order[static_cast<std::size_t>(r)].second) == q.label) {
                    ++hits[j];
                    break;
                }
            }
        }
    }
    return hits;
}

} // namespace

TEST_CASE("single-cluster gallery is always right") {
    Rng rng(1);
    auto rows = planted(1, 6, 4, 1.0, rng);
    const auto rep = topk_accuracy(index_of(rows), rows, labels_of(rows));
    for (int k : {1, 3, 5}) CHECK(rep.at(k) == 1.0);
    CHECK(rep.query_count == 6);
}

TEST_CASE("planted three-cluster fixture matches the exhaustive scan") {
    Rng rng(2);
    // Overlapping clusters so that some queries miss.
    const auto rows = planted(3, 10, 3, 4.0, rng);
    const std::vector<int> ks{1, 3, 5};
    const auto rep = topk_accuracy(index_of(rows), rows, labels_of(rows), ks, 1000);
    const auto want = exhaustive_hits(rows, ks);
    for (std::size_t j = 0; j < ks.size(); ++j) {
        CHECK(rep.hits[j] == want[j]);
        CHECK(rep.accuracy[j] == doctest::Approx(static_cast<double>(want[j]) / 30.0));
    }
    CHECK(rep.at(1) <= rep.at(3));
    CHECK(rep.at(3) <= rep.at(5));
    CHECK(rep.at(1) < 1.0);

    auto shuffled = rows;
    rng.shuffle(shuffled.begin(), shuffled.end());
    const auto rep2 = topk_accuracy(index_of(shuffled), rows, labels_of(rows), ks, 1000);
    CHECK(rep2.hits == rep.hits);
    CHECK(rep.to_tsv("x").find("top-1") != std::string::npos);
}

TEST_CASE("queries without a gallery mate are counted separately") {
    Rng rng(3);
    auto rows = planted(2, 3, 2, 0.1, rng);
    rows.push_back({"lonely", "L9", {50.0f, 50.0f}});
    const auto rep = topk_accuracy(index_of(rows), rows, labels_of(rows));
    CHECK(rep.unmatched_queries == 1);
}

TEST_CASE("nn matrix is exact and shows blocks for separated clusters") {
    Rng rng(4);
    const auto rows = planted(2, 6, 5, 0.05, rng);
    const auto m = nn_matrix(rows, 5);
    REQUIRE(m.size() == rows.size());
    CHECK(in_label_fraction(m, rows) == 1.0);
    const auto grid = distance_grid(rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(m[i].id == rows[i].id);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            CHECK(grid[i][j] == doctest::Approx(l2(rows[i].values, rows[j].values)));
        }
        // Recompute the k nearest independently.
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (j != i) d.push_back({l2(rows[i].values, rows[j].values), j});
        }
        std::sort(d.begin(), d.end());
        for (std::size_t r = 0; r < 5; ++r) {
            CHECK(m[i].neighbor_ids[r] == rows[d[r].second].id);
            CHECK(m[i].distances[r] == doctest::Approx(d[r].first));
        }
    }
    CHECK_THROWS(nn_matrix(rows, static_cast<int>(rows.size())));
    CHECK(format_nn_matrix(m).find(rows[0].id) != std::string::npos);
}

TEST_CASE("random embeddings sit at chance") {
    Rng rng(5);
    std::vector<EmbeddingRecord> rows;
    for (int c = 0; c < 8; ++c) {
        for (int i = 0; i < 15; ++i) {
            EmbeddingRecord r{"r" + std::to_string(c * 15 + i), "L" + std::to_string(c), {}};
            for (int j = 0; j < 16; ++j) r.values.push_back(static_cast<float>(rng.normal()));
            rows.push_back(r);
        }
    }
    const double frac = in_label_fraction(nn_matrix(rows, 5), rows);
    const double p = 14.0 / 119.0;
    const double n = 600.0;
    const double sd = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(frac - p) < 4 * sd);
}

TEST_CASE("hand-computed discriminant ratio") {
    const std::vector<EmbeddingRecord> rows{
        {"a1", "A", {0, 0}}, {"a2", "A", {0, 1}}, {"b1", "B", {3, 0}}, {"b2", "B", {3, 1}}};
    const auto dist = discriminant_ratios(rows);
    REQUIRE(dist.labels.size() == 2);
    const double want = (3.0 + std::sqrt(10.0)) / 2.0;
    for (const auto& l : dist.labels) {
        CHECK(l.within == doctest::Approx(1.0));
        CHECK(l.between == doctest::Approx(want));
        CHECK(l.ratio == doctest::Approx(want));
    }
    CHECK(dist.median() == doctest::Approx(want));
}

TEST_CASE("collapsed labels are flagged, not divided") {
    const std::vector<EmbeddingRecord> rows{
        {"a1", "A", {1, 1}}, {"a2", "A", {1, 1}}, {"b1", "B", {2, 2}}, {"b2", "B", {2, 2}}, {"c1", "C", {0, 3}},
        {"c2", "C", {0, 4}}};
    const auto dist = discriminant_ratios(rows);
    CHECK(dist.degenerate_count() == 2);
    CHECK(dist.ratios().size() == 1);
    for (const auto& l : dist.labels) CHECK(std::isfinite(l.ratio));

    const std::vector<EmbeddingRecord> all_bad{{"a1", "A", {1, 1}}, {"a2", "A", {1, 1}}, {"b1", "B", {0, 0}}};
    CHECK_THROWS(discriminant_ratios(all_bad));
}

TEST_CASE("ratios survive rotation and translation") {
    Rng rng(6);
    const auto rows = planted(4, 5, 3, 1.0, rng);
    const auto base = discriminant_ratios(rows);
    const double t = 0.7;
    auto moved = rows;
    for (auto& r : moved) {
        const double x = r.values[0], y = r.values[1];
        r.values[0] = static_cast<float>(std::cos(t) * x - std::sin(t) * y + 3.0);
        r.values[1] = static_cast<float>(std::sin(t) * x + std::cos(t) * y - 2.0);
        r.values[2] += 1.5f;
    }
    const auto after = discriminant_ratios(moved);
    for (std::size_t i = 0; i < base.labels.size(); ++i) {
        CHECK(after.labels[i].ratio == doctest::Approx(base.labels[i].ratio).epsilon(1e-5));
    }
}

TEST_CASE("quantiles interpolate") {
    RatioDistribution d;
    for (double r : {4.0, 1.0, 3.0, 2.0}) d.labels.push_back({"x", 2, r, 1.0, r, false});
    CHECK(d.quantile(0.0) == 1.0);
    CHECK(d.quantile(1.0) == 4.0);
    CHECK(d.median() == doctest::Approx(2.5));
}

TEST_CASE("threshold clustering") {
    Rng rng(7);
    const auto rows = planted(3, 8, 2, 0.05, rng);
    const auto none = threshold_cluster(rows, 0.0, 2);
    CHECK(none.clusters == 0);
    CHECK(none.noise == rows.size());
    CHECK(none.precision == 0.0);

    const auto three = threshold_cluster(rows, 1.0, 2);
    CHECK(three.clusters == 3);
    CHECK(three.precision == 1.0);
    CHECK(three.noise == 0);
    CHECK(three.total == rows.size());

    // Order invariance up to component renaming.
    auto rev = rows;
    std::reverse(rev.begin(), rev.end());
    const auto r2 = threshold_cluster(rev, 1.0, 2);
    CHECK(r2.clusters == three.clusters);
    CHECK(r2.precision == three.precision);
    CHECK(r2.noise == three.noise);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const std::size_t ri = rows.size() - 1 - i, rj = rows.size() - 1 - j;
            CHECK((three.assignment[i] == three.assignment[j]) == (r2.assignment[ri] == r2.assignment[rj]));
        }
    }
}

TEST_CASE("mixed components lower precision and small ones become noise") {
    const std::vector<EmbeddingRecord> rows{{"a", "A", {0}},   {"b", "A", {0.1f}}, {"c", "B", {0.2f}},
                                            {"d", "C", {10}},  {"e", "C", {10.1f}}, {"f", "D", {20}}};
    const auto rep = threshold_cluster(rows, 0.15, 2);
    CHECK(rep.clusters == 2);
    CHECK(rep.noise == 1);
    CHECK(rep.noise + 5 == rep.total);
    CHECK(rep.precision == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("collapse sentinel") {
    const std::vector<Embedding> same(10, Embedding{0.5f, 0.5f, 0.1f});
    CHECK(collapse_sentinel(same).collapsed);
    CHECK(collapse_sentinel(same).verdict() == "COLLAPSED");
    Rng rng(8);
    std::vector<Embedding> gauss;
    for (int i = 0; i < 2000; ++i) {
        Embedding e(8);
        for (auto& x : e) x = static_cast<float>(rng.normal());
        gauss.push_back(e);
    }
    const auto rep = collapse_sentinel(gauss);
    CHECK_FALSE(rep.collapsed);
    CHECK(rep.mean_std == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS(collapse_sentinel({Embedding{1.0f}}));
}

TEST_CASE("binomial tail matches a direct sum") {
    CHECK(binomial_upper_tail(10, 0, 0.5) == doctest::Approx(1.0));
    CHECK(binomial_upper_tail(10, 10, 0.5) == doctest::Approx(1.0 / 1024));
    CHECK(binomial_upper_tail(3, 2, 0.5) == doctest::Approx(0.5));
    for (int n : {5, 25, 60}) {
        for (double p : {0.04, 0.2, 0.5}) {
            for (int k = 0; k <= n; k += 3) {
                double direct = 0;
                for (int j = k; j <= n; ++j) {
                    double c = 1;
                    for (int t = 0; t < j; ++t) c = c * (n - t) / (t + 1);
                    direct += c * std::pow(p, j) * std::pow(1 - p, n - j);
                }
                CHECK(binomial_upper_tail(static_cast<std::size_t>(n), static_cast<std::size_t>(k), p) ==
                      doctest::Approx(direct).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("ood probe inserts held-out clusters and rejects overlap") {
    EncoderConfig cfg;
    cfg.input_size = 32;
    cfg.widths = {8, 16};
    cfg.hidden = 32;
    cfg.projection = 16;
    const ByolNetworks nets(cfg);
    const Encoder enc = Encoder::from_checkpoint(byol_checkpoint(init_byol(nets, 0.99, 1), cfg));

    SynthOptions o;
    o.n_clusters = 6;
    o.variants_per_cluster = 3;
    o.side = 32;
    o.seed = 9;
    const auto train = synth_generate(o);
    o.n_clusters = 5;
    o.variants_per_cluster = 5;
    o.family = SynthFamily::curves;
    o.prefix = "ood";
    const auto held = synth_generate(o);

    std::vector<std::string> ids;
    std::vector<const Image*> imgs;
    std::set<std::string> train_labels;
    for (const auto& r : train.corpus.records()) {
        ids.push_back(r.id);
        imgs.push_back(&train.images.at(r.id));
        train_labels.insert(r.cluster_label);
    }
    const auto vecs = enc.embed_batch(imgs);
    const auto index = build_index(ids, vecs, Metric::cosine, {}, 1);

    const auto rep = ood_probe(enc, index, held.corpus, held.images, train_labels, train.images, 1);
    CHECK(rep.topk.query_count == 25);
    CHECK(rep.clusters == 5);
    CHECK(rep.chance == doctest::Approx(0.2));
    CHECK(rep.p_value > 0.0);
    CHECK(rep.p_value <= 1.0);
    CHECK(rep.to_json().find("p_value") != std::string::npos);

    // A held-out label that was trained on.
    auto bad_labels = train_labels;
    bad_labels.insert(held.corpus.records()[0].cluster_label);
    CHECK_THROWS(ood_probe(enc, index, held.corpus, held.images, bad_labels, train.images, 1));

    // A held-out image copied from training.
    auto copied = held.images;
    copied[held.corpus.records()[0].id] = train.images.at(train.corpus.records()[0].id);
    CHECK_THROWS(ood_probe(enc, index, held.corpus, copied, train_labels, train.images, 1));
}
