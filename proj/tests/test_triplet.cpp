#include "doctest.h"

#include <cmath>
#include <set>

#include "dm/synth.hpp"
#include "dm/triplet.hpp"

using namespace dm;

namespace {

double sq(const Embedding& x, const Embedding& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        s += d * d;
    }
    return s;
}

EncoderConfig tiny_model() {
    EncoderConfig cfg;
    cfg.input_size = 32;
    cfg.widths = {8, 16};
    cfg.hidden = 64;
    cfg.projection = 32;
    return cfg;
}

} // namespace

TEST_CASE("loss examples") {
    using V = std::vector<double>;
    // d(a,p)^2 = d(a,n)^2 = 1
    CHECK(triplet_loss(V{0, 0}, V{1, 0}, V{0, 1}) == doctest::Approx(0.2));
    CHECK(triplet_loss(V{0, 0}, V{1, 0}, V{2, 0}) == 0.0);
    // d(a,p)^2 = 1.0, d(a,n)^2 = 0.5
    CHECK(triplet_loss(V{0, 0}, V{1, 0}, V{0.5, 0.5}) == doctest::Approx(0.7));
    CHECK(triplet_loss(V{0}, V{1}, V{0}, 0.5) == doctest::Approx(1.5));
}

TEST_CASE("loss is nonnegative, zero exactly when the margin holds, and translation invariant") {
    Rng rng(1);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> a(4), p(4), n(4), c(4);
        // Multiples of 1/8 keep every sum and difference exact.
        for (auto* v : {&a, &p, &n, &c}) {
            for (auto& x : *v) x = rng.range(-16, 16) / 8.0;
        }
        const double l = triplet_loss(a, p, n);
        CHECK(l >= 0.0);
        double dp = 0, dn = 0;
        for (int i = 0; i < 4; ++i) {
            dp += (a[i] - p[i]) * (a[i] - p[i]);
            dn += (a[i] - n[i]) * (a[i] - n[i]);
        }
        CHECK((l == 0.0) == (dp + 0.2 <= dn));
        for (int i = 0; i < 4; ++i) {
            a[i] += c[i];
            p[i] += c[i];
            n[i] += c[i];
        }
        CHECK(triplet_loss(a, p, n) == l);
    }
}

TEST_CASE("hard_count 0 gives valid random triplets") {
    EmbeddingMap emb;
    LabelMap labels;
    Rng rng(2);
    for (int i = 0; i < 12; ++i) {
        const std::string id = "i" + std::to_string(i);
        emb[id] = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())};
        labels[id] = "c" + std::to_string(i % 3);
    }
    const auto batch = mine_triplets(emb, labels, 40, 0, rng);
    CHECK(batch.size() == 40);
    for (const auto& m : batch) {
        CHECK(m.kind == TripletKind::random);
        CHECK(m.triplet.anchor_id != m.triplet.positive_id);
        CHECK(labels[m.triplet.anchor_id] == labels[m.triplet.positive_id]);
        CHECK(labels[m.triplet.anchor_id] != labels[m.triplet.negative_id]);
    }
}

TEST_CASE("three-point fixture: nearer negative is hard") {
    EmbeddingMap emb{{"a", {0.0f, 0.0f}}, {"p", {1.0f, 0.0f}}, {"n", {0.5f, 0.0f}}};
    LabelMap labels{{"a", "x"}, {"p", "x"}, {"n", "y"}};
    Rng rng(3);
    const auto batch = mine_triplets(emb, labels, 4, 4, rng);
    for (const auto& m : batch) {
        CHECK(m.kind == TripletKind::hard);
        CHECK(m.triplet.negative_id == "n");
    }
}

TEST_CASE("mined kinds survive an exhaustive re-check") {
    EmbeddingMap emb;
    LabelMap labels;
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const std::string id = "i" + std::to_string(i);
        Embedding e(8);
        for (auto& x : e) x = static_cast<float>(rng.normal() * 0.3 + (i % 5));
        emb[id] = e;
        labels[id] = "c" + std::to_string(i % 5);
    }
    std::set<TripletKind> seen;
    for (double margin : {0.2, 5.0}) {
        const auto batch = mine_triplets(emb, labels, 64, 50, rng, margin);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& m = batch[i];
            seen.insert(m.kind);
            CHECK((i < 50) == (m.kind != TripletKind::random));
            const auto& ea = emb[m.triplet.anchor_id];
            const double dp = sq(ea, emb[m.triplet.positive_id]);
            const double dn = sq(ea, emb[m.triplet.negative_id]);
            CHECK(labels[m.triplet.negative_id] != labels[m.triplet.anchor_id]);
            bool any_hard = false, any_semi = false;
            double nearest = 1e300;
            for (const auto& [id, e] : emb) {
                if (labels[id] == labels[m.triplet.anchor_id]) continue;
                const double d = sq(ea, e);
                any_hard = any_hard || d < dp;
                any_semi = any_semi || (d >= dp && d < dp + margin);
                nearest = std::min(nearest, d);
            }
            switch (m.kind) {
            case TripletKind::hard: CHECK(dn < dp); break;
            case TripletKind::semi_hard:
                CHECK_FALSE(any_hard);
                CHECK(dn >= dp);
                CHECK(dn < dp + margin);
                break;
            case TripletKind::nearest:
                CHECK_FALSE(any_hard);
                CHECK_FALSE(any_semi);
                CHECK(dn == nearest);
                break;
            case TripletKind::random: break;
            }
        }
    }
    CHECK(seen.count(TripletKind::random) == 1);
    CHECK(seen.size() >= 3);
}

TEST_CASE("mining preconditions") {
    EmbeddingMap emb{{"a", {0.0f}}, {"b", {1.0f}}};
    Rng rng(5);
    CHECK_THROWS(mine_triplets(emb, {{"a", "x"}, {"b", "x"}}, 2, 1, rng));
    CHECK_THROWS(mine_triplets(emb, {{"a", "x"}, {"b", "y"}}, 2, 1, rng));
    CHECK_THROWS(mine_triplets(emb, {{"a", "x"}, {"b", "y"}}, 2, 3, rng));
}

TEST_CASE("two clusters of three images are separated") {
    SynthOptions o;
    o.n_clusters = 2;
    o.variants_per_cluster = 3;
    o.side = 32;
    o.seed = 6;
    const auto s = synth_generate(o);
    LabelMap labels;
    for (const auto& r : s.corpus.records()) labels[r.id] = r.cluster_label;
    std::vector<Triplet> all;
    for (const auto& [a, la] : labels) {
        for (const auto& [p, lp] : labels) {
            if (p == a || lp != la) continue;
            for (const auto& [n, ln] : labels) {
                if (ln != la) all.push_back({a, p, n});
            }
        }
    }
    CHECK(all.size() == 36);

    auto model = init_triplet_model(tiny_model(), 1);
    auto adam = nn::AdamState<float>::for_params(model.params);
    const double before = triplet_eval_loss(model, s.images, all);
    for (int step = 0; step < 200; ++step) triplet_train_step(model, s.images, all, adam, 1e-3);
    const double after = triplet_eval_loss(model, s.images, all);
    MESSAGE("val triplet loss " << before << " -> " << after);
    CHECK(after < 0.05);

    std::vector<std::string> ids;
    for (const auto& [id, l] : labels) ids.push_back(id);
    for (const auto& [id, e] : triplet_embed(model, s.images, ids)) {
        double n = 0;
        for (float v : e) n += static_cast<double>(v) * v;
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("one epoch of triplet training records a finite loss") {
    SynthOptions o;
    o.n_clusters = 10;
    o.variants_per_cluster = 3;
    o.side = 32;
    o.seed = 7;
    const auto s = synth_generate(o);
    const Corpus corpus = split_by_cluster(s.corpus, {0.6, 0.2, 0.2}, 7, true);
    TripletConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.hard_count = 4;
    cfg.val_triplets = 16;
    cfg.model = tiny_model();
    const auto r = train_triplet(corpus, s.images, cfg);
    REQUIRE(r.curve.size() == 1);
    CHECK(std::isfinite(r.curve[0].train_loss));
    CHECK(std::isfinite(r.curve[0].val_loss));
    CHECK(r.best_epoch == 1);
    const auto again = train_triplet(corpus, s.images, cfg);
    CHECK(again.checkpoint == r.checkpoint);
    CHECK_NOTHROW(Encoder::from_checkpoint(r.checkpoint));
    CHECK(triplet_metadata_json(cfg, r).find("hard_count") != std::string::npos);
}
