#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>

#include "dm/byol.hpp"
#include "dm/nn/checkpoint.hpp"
#include "dm/synth.hpp"

using namespace dm;

namespace {

std::vector<double> random_vec(int d, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = rng.normal();
    return v;
}

EncoderConfig tiny_model() {
    EncoderConfig cfg;
    cfg.input_size = 32;
    cfg.widths = {8, 16};
    cfg.hidden = 64;
    cfg.projection = 32;
    return cfg;
}

Image noise(int side, std::uint64_t seed) {
    Image img(side, side);
    Rng r(seed);
    for (auto& v : img.data) v = static_cast<float>(r.uniform());
    return img;
}

double norm_diff(const nn::ParamSet<double>& a, const nn::ParamSet<double>& b) {
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a.tensor(t).size(); ++i) {
            const double d = a.tensor(t).values[i] - b.tensor(t).values[i];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

} // namespace

TEST_CASE("loss equals squared distance of unit vectors") {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const int d = 2 + static_cast<int>(rng.below(511));
        const auto p = random_vec(d, rng);
        const auto z = random_vec(d, rng);
        double np = 0, nz = 0;
        for (int i = 0; i < d; ++i) {
            np += p[i] * p[i];
            nz += z[i] * z[i];
        }
        double direct = 0;
        for (int i = 0; i < d; ++i) {
            const double diff = p[i] / std::sqrt(np) - z[i] / std::sqrt(nz);
            direct += diff * diff;
        }
        CHECK(byol_loss(p, z) == doctest::Approx(direct).epsilon(1e-6));
    }
}

TEST_CASE("loss examples and scale invariance") {
    const std::vector<double> a{1.0, 2.0, -3.0};
    const std::vector<double> neg{-1.0, -2.0, 3.0};
    CHECK(byol_loss(a, a) == doctest::Approx(0.0));
    CHECK(byol_loss(a, neg) == doctest::Approx(4.0));
    CHECK(byol_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(2.0));

    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        auto p = random_vec(16, rng);
        const auto z = random_vec(16, rng);
        const double base = byol_loss(p, z);
        const double s = rng.uniform(0.01, 100.0);
        for (auto& x : p) x *= s;
        CHECK(std::abs(byol_loss(p, z) - base) < 1e-6);
    }
    CHECK_THROWS(byol_loss(std::vector<double>{0, 0}, std::vector<double>{1, 0}));
    CHECK_THROWS(byol_loss(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}));
}

TEST_CASE("batch loss gradient matches finite differences") {
    Rng rng(3);
    nn::Tensor<float> p({3, 5}), z({3, 5});
    for (auto& v : p.values) v = static_cast<float>(rng.normal());
    for (auto& v : z.values) v = static_cast<float>(rng.normal());
    nn::Tensor<float> g;
    byol_batch_loss(p, z, &g);
    const float h = 1e-3f;
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto up = p, down = p;
        up.values[i] += h;
        down.values[i] -= h;
        const double numeric = (byol_batch_loss(up, z) - byol_batch_loss(down, z)) / (2 * h);
        CHECK(g.values[i] == doctest::Approx(numeric).epsilon(2e-2));
    }
}

TEST_CASE("ema examples") {
    nn::ParamSet<double> target, online;
    target.add("w", nn::Tensor<double>({1}, 1.0));
    online.add("w", nn::Tensor<double>({1}, 0.0));
    online.add("predictor.0.weight", nn::Tensor<double>({2}, 5.0));

    auto t1 = target;
    ema_update(t1, online, 1.0);
    CHECK(t1 == target);
    auto t0 = target;
    ema_update(t0, online, 0.0);
    CHECK(t0.at("w").values[0] == 0.0);
    CHECK_FALSE(t0.contains("predictor.0.weight"));
    auto t99 = target;
    ema_update(t99, online, 0.99);
    CHECK(t99.at("w").values[0] == doctest::Approx(0.99));

    CHECK_THROWS_AS(ema_update(t99, online, 1.5), std::invalid_argument);
    nn::ParamSet<double> wrong;
    wrong.add("w", nn::Tensor<double>({2}));
    CHECK_THROWS(ema_update(t99, wrong, 0.5));
}

TEST_CASE("ema gap decays geometrically and contracts") {
    Rng rng(4);
    nn::ParamSet<double> target, online;
    nn::Tensor<double> a({20}), b({20});
    for (auto& v : a.values) v = rng.normal();
    for (auto& v : b.values) v = rng.normal();
    target.add("w", a);
    online.add("w", b);
    const double tau = 0.99;
    const double gap0 = norm_diff(target, online);
    for (int n = 1; n <= 200; ++n) {
        const double before = norm_diff(target, online);
        ema_update(target, online, tau);
        const double after = norm_diff(target, online);
        CHECK(after == doctest::Approx(tau * before).epsilon(1e-12));
        if (n % 50 == 0) CHECK(after == doctest::Approx(gap0 * std::pow(tau, n)).epsilon(1e-10));
    }
}

TEST_CASE("target only moves through the moving average") {
    const ByolNetworks nets(tiny_model());
    const Image a = noise(32, 1), b = noise(32, 2);
    const std::vector<ViewPair> batch{{"x", a, b}, {"y", b, a}};

    auto state = init_byol(nets, 1.0, 7);
    CHECK(state.target.size() + nets.predictor.layers().size() > 0);
    for (const auto& name : state.target.names()) CHECK(name.rfind("predictor", 0) != 0);
    const auto online_before = state.online;
    const auto target_before = state.target;
    auto adam = nn::AdamState<float>::for_params(state.online);
    const double loss = train_step(nets, state, batch, adam, 1e-3);
    CHECK(loss > 0.0);
    CHECK(loss < 4.0);
    CHECK(state.target == target_before);
    CHECK_FALSE(state.online == online_before);
    CHECK(state.step == 1);

    auto moving = init_byol(nets, 0.9, 7);
    const auto moving_before = moving.target;
    auto adam2 = nn::AdamState<float>::for_params(moving.online);
    train_step(nets, moving, batch, adam2, 1e-3);
    CHECK_FALSE(moving.target == moving_before);
}

TEST_CASE("fresh networks give loss near 2 on random inputs") {
    const ByolNetworks nets(tiny_model());
    auto state = init_byol(nets, 0.99, 11);
    std::vector<ViewPair> batch;
    for (int i = 0; i < 16; ++i) batch.push_back({"r", noise(32, 100 + i), noise(32, 200 + i)});
    const double loss = eval_loss(nets, state, batch);
    CHECK(loss > 0.0);
    CHECK(loss < 4.0);
}

TEST_CASE("one fixed batch is overfit within 50 steps") {
    const ByolNetworks nets(tiny_model());
    auto state = init_byol(nets, 0.99, 3);
    auto adam = nn::AdamState<float>::for_params(state.online);
    std::vector<ViewPair> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({"x", noise(32, 5 + 2 * i), noise(32, 6 + 2 * i)});
    double loss = 4.0;
    for (int i = 0; i < 50; ++i) loss = train_step(nets, state, batch, adam, 1e-3);
    CHECK(loss < 0.1);

    // A lone pair has no batch statistics.
    const std::vector<ViewPair> one{batch[0]};
    CHECK_THROWS_AS(train_step(nets, state, one, adam, 1e-3), std::invalid_argument);
}

TEST_CASE("linear predictor converges to the least-squares optimum") {
    // z_target = A z_online + noise; the best predictor is the conditional mean A z.
    const int d = 6, n = 400;
    Rng rng(9);
    Eigen::MatrixXd A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
    Eigen::MatrixXd X(n, d), Y(n, d);
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < d; ++j) X(r, j) = rng.normal();
    }
    Y = X * A.transpose();
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) Y(r, j) += 0.3 * rng.normal();

    Eigen::MatrixXd Xb(n, d + 1);
    Xb << X, Eigen::VectorXd::Ones(n);
    const Eigen::MatrixXd W = Xb.colPivHouseholderQr().solve(Y);
    const double optimum = (Xb * W - Y).squaredNorm() / n;

    const nn::Sequential<double> pred("predictor", {nn::LayerSpec::dense(d, d)});
    nn::ParamSet<double> params, buffers;
    pred.init(params, buffers, rng);
    auto adam = nn::AdamState<double>::for_params(params);
    nn::Tensor<double> x({n, d});
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) x.values[static_cast<std::size_t>(r * d + j)] = X(r, j);
    double mse = 0;
    for (int it = 0; it < 3000; ++it) {
        nn::ForwardCache<double> cache;
        const auto out = pred.forward(params, buffers, x, nn::Mode::train, &cache);
        nn::Tensor<double> g(out.shape);
        mse = 0;
        for (int r = 0; r < n; ++r) {
            for (int j = 0; j < d; ++j) {
                const auto k = static_cast<std::size_t>(r * d + j);
                const double e = out.values[k] - Y(r, j);
                mse += e * e / n;
                g.values[k] = 2 * e / n;
            }
        }
        auto grads = params.zeros_like();
        pred.backward(params, cache, g, grads);
        nn::adam_step(params, grads, adam, 0.02);
    }
    CHECK(mse <= optimum * 1.05);
    CHECK(mse >= optimum * (1 - 1e-9));
}

TEST_CASE("embeddings are unit length and deterministic") {
    const ByolNetworks nets(tiny_model());
    const auto state = init_byol(nets, 0.99, 5);
    const auto ckpt = byol_checkpoint(state, nets.cfg);
    const Encoder enc = Encoder::from_checkpoint(ckpt);
    CHECK(enc.config() == nets.cfg);
    for (int i = 0; i < 10; ++i) {
        const Image img = noise(32, 300 + i);
        const auto e = enc.embed(img);
        CHECK(e.size() == 16);
        double s = 0;
        for (float v : e) s += static_cast<double>(v) * v;
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
        CHECK(enc.embed(img) == e);
    }
    CHECK_THROWS_AS(enc.embed(noise(31, 1)), nn::ShapeError);

    const auto restored = byol_state_from_checkpoint(ckpt, 0.99);
    CHECK(restored.online == state.online);
    CHECK(restored.target == state.target);
}

TEST_CASE("training runs are reproducible and select on validation loss") {
    SynthOptions o;
    o.n_clusters = 10;
    o.variants_per_cluster = 3;
    o.side = 32;
    o.seed = 4;
    auto s = synth_generate(o);
    const Corpus corpus = split_by_cluster(s.corpus, {0.6, 0.2, 0.2}, 4, true);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.warmup_epochs = 1;
    cfg.model = tiny_model();
    cfg.seed = 12;
    std::vector<EpochLog> seen;
    const auto a = train_byol(corpus, s.images, cfg, [&](const EpochLog& e) { seen.push_back(e); });
    CHECK(a.best_epoch == 1);
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].val_loss == a.best_val_loss);
    const auto b = train_byol(corpus, s.images, cfg);
    CHECK(nn::encode_checkpoint(a.checkpoint) == nn::encode_checkpoint(b.checkpoint));

    cfg.epochs = 3;
    const auto c = train_byol(corpus, s.images, cfg);
    CHECK(c.curve.size() == 3);
    double best = 1e9;
    int best_epoch = 0;
    for (const auto& e : c.curve) {
        if (e.val_loss < best) {
            best = e.val_loss;
            best_epoch = e.epoch;
        }
    }
    CHECK(c.best_epoch == best_epoch);
    CHECK(format_loss_curve(c.curve).rfind("epoch\ttrain_loss\tval_loss\n", 0) == 0);
    CHECK(byol_metadata_json(cfg, c).find("best_epoch") != std::string::npos);

    cfg.batch_size = 1;
    CHECK_THROWS(cfg.validate());
    cfg.batch_size = 8;
    std::vector<DoubtRecord> recs = corpus.records();
    for (auto& r : recs) r.split = Split::train;
    const Corpus no_val(recs);
    CHECK_THROWS(train_byol(no_val, s.images, cfg));
}
