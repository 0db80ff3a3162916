#include "dm/triplet.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace dm {

namespace {

template <typename T> double sq_dist(std::span<const T> x, std::span<const T> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        s += d * d;
    }
    return s;
}

template <typename T> double loss_impl(std::span<const T> a, std::span<const T> p, std::span<const T> n, double margin) {
    if (a.size() != p.size() || a.size() != n.size()) throw std::invalid_argument("triplet_loss: dimension mismatch");
    if (margin < 0.0) throw std::invalid_argument("triplet_loss: negative margin");
    return std::max(0.0, sq_dist(a, p) - sq_dist(a, n) + margin);
}

double dist(const Embedding& x, const Embedding& y) {
    return sq_dist(std::span<const float>(x), std::span<const float>(y));
}

} // namespace

double triplet_loss(std::span<const float> a, std::span<const float> p, std::span<const float> n, double margin) {
    return loss_impl(a, p, n, margin);
}
double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n, double margin) {
    return loss_impl(a, p, n, margin);
}

std::string_view to_string(TripletKind k) {
    switch (k) {
    case TripletKind::hard: return "hard";
    case TripletKind::semi_hard: return "semi_hard";
    case TripletKind::nearest: return "nearest";
    case TripletKind::random: return "random";
    }
    return "?";
}

std::vector<MinedTriplet> mine_triplets(const EmbeddingMap& embeddings, const LabelMap& labels, std::size_t batch_size,
                                        std::size_t hard_count, Rng& rng, double margin) {
    if (hard_count > batch_size) throw std::invalid_argument("hard_count exceeds batch_size");
    std::map<std::string, std::vector<std::string>> clusters;
    for (const auto& [id, label] : labels) {
        if (!embeddings.count(id)) throw std::invalid_argument("no embedding for '" + id + "'");
        clusters[label].push_back(id);
    }
    if (clusters.size() < 2) throw std::invalid_argument("triplet mining needs at least 2 clusters");
    std::vector<std::string> anchors;
    for (const auto& [label, ids] : clusters) {
        if (ids.size() >= 2) anchors.insert(anchors.end(), ids.begin(), ids.end());
    }
    if (anchors.empty()) throw std::invalid_argument("triplet mining needs a cluster with two members");

    std::vector<std::string> all;
    for (const auto& [id, label] : labels) all.push_back(id);

    std::vector<MinedTriplet> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::string& a = anchors[rng.below(anchors.size())];
        const std::string& label = labels.at(a);
        const auto& mates = clusters.at(label);
        std::string p;
        do {
            p = mates[rng.below(mates.size())];
        } while (p == a);

        if (i >= hard_count) {
            std::string n;
            do {
                n = all[rng.below(all.size())];
            } while (labels.at(n) == label);
            out.push_back({{a, p, n}, TripletKind::random});
            continue;
        }

        const auto& ea = embeddings.at(a);
        const double dp = dist(ea, embeddings.at(p));
        std::vector<const std::string*> hard;
        const std::string* semi = nullptr;
        const std::string* nearest = nullptr;
        double semi_d = std::numeric_limits<double>::infinity();
        double nearest_d = std::numeric_limits<double>::infinity();
        for (const auto& n : all) {
            if (labels.at(n) == label) continue;
            const double dn = dist(ea, embeddings.at(n));
            if (dn < dp) hard.push_back(&n);
            else if (dn < dp + margin && dn < semi_d) {
                semi = &n;
                semi_d = dn;
            }
            if (dn < nearest_d) {
                nearest = &n;
                nearest_d = dn;
            }
        }
        if (!hard.empty()) out.push_back({{a, p, *hard[rng.below(hard.size())]}, TripletKind::hard});
        else if (semi) out.push_back({{a, p, *semi}, TripletKind::semi_hard});
        else out.push_back({{a, p, *nearest}, TripletKind::nearest});
    }
    return out;
}

TripletModel init_triplet_model(const EncoderConfig& cfg, std::uint64_t seed) {
    TripletModel m{cfg, nn::Sequential<float>("encoder", encoder_layers(cfg)), {}, {}};
    Rng rng(derive_seed(seed, "triplet-init"));
    m.encoder.init(m.params, m.buffers, rng);
    return m;
}

namespace {

struct BatchIndex {
    std::vector<std::string> ids;
    std::unordered_map<std::string, int> row;
    std::vector<const Image*> images;
};

BatchIndex index_batch(const ImageStore& images, std::span<const Triplet> batch) {
    BatchIndex b;
    auto add = [&](const std::string& id) {
        if (b.row.count(id)) return;
        auto it = images.find(id);
        if (it == images.end()) throw std::invalid_argument("no image for '" + id + "'");
        b.row.emplace(id, static_cast<int>(b.ids.size()));
        b.ids.push_back(id);
        b.images.push_back(&it->second);
    };
    for (const auto& t : batch) {
        add(t.anchor_id);
        add(t.positive_id);
        add(t.negative_id);
    }
    return b;
}

// Mean hinge over the batch; fills d(mean)/d(embeddings) when grad is given.
double batch_loss(const nn::Tensor<float>& e, const BatchIndex& idx, std::span<const Triplet> batch, double margin,
                  nn::Tensor<float>* grad) {
    const int D = e.dim(1);
    if (grad) *grad = nn::Tensor<float>(e.shape);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& t : batch) {
        const int ra = idx.row.at(t.anchor_id), rp = idx.row.at(t.positive_id), rn = idx.row.at(t.negative_id);
        const float* a = e.data() + static_cast<std::size_t>(ra) * D;
        const float* p = e.data() + static_cast<std::size_t>(rp) * D;
        const float* n = e.data() + static_cast<std::size_t>(rn) * D;
        const double l = loss_impl(std::span<const float>(a, D), std::span<const float>(p, D),
                                   std::span<const float>(n, D), margin);
        total += l;
        if (!grad || l <= 0.0) continue;
        float* ga = grad->data() + static_cast<std::size_t>(ra) * D;
        float* gp = grad->data() + static_cast<std::size_t>(rp) * D;
        float* gn = grad->data() + static_cast<std::size_t>(rn) * D;
        for (int d = 0; d < D; ++d) {
            // d/da = 2(n - p), d/dp = -2(a - p), d/dn = 2(a - n)
            ga[d] += static_cast<float>(2.0 * (n[d] - p[d]) * inv_n);
            gp[d] += static_cast<float>(-2.0 * (a[d] - p[d]) * inv_n);
            gn[d] += static_cast<float>(2.0 * (a[d] - n[d]) * inv_n);
        }
    }
    return total * inv_n;
}

} // namespace

double triplet_train_step(TripletModel& model, const ImageStore& images, std::span<const Triplet> batch,
                          nn::AdamState<float>& adam, double lr, double margin) {
    if (batch.empty()) throw std::invalid_argument("triplet_train_step: empty batch");
    const auto idx = index_batch(images, batch);
    nn::ForwardCache<float> cache;
    const auto y = model.encoder.forward(model.params, model.buffers, to_batch(std::span<const Image* const>(idx.images)),
                                         nn::Mode::train, &cache);
    std::vector<float> norms;
    const auto e = l2_normalize_rows(y, &norms);
    nn::Tensor<float> ge;
    const double loss = batch_loss(e, idx, batch, margin, &ge);
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite triplet loss " + std::to_string(loss));
    auto grads = model.params.zeros_like();
    model.encoder.backward(model.params, cache, l2_normalize_rows_backward(e, norms, ge), grads);
    model.encoder.update_running_stats(cache, model.buffers);
    nn::adam_step(model.params, grads, adam, lr);
    return loss;
}

double triplet_eval_loss(const TripletModel& model, const ImageStore& images, std::span<const Triplet> batch,
                         double margin) {
    if (batch.empty()) throw std::invalid_argument("triplet_eval_loss: empty batch");
    const auto idx = index_batch(images, batch);
    const Encoder enc(model.cfg, model.params, model.buffers);
    const auto emb = enc.embed_batch(std::span<const Image* const>(idx.images));
    const int D = static_cast<int>(emb.front().size());
    nn::Tensor<float> e(nn::Shape{static_cast<int>(emb.size()), D});
    for (std::size_t r = 0; r < emb.size(); ++r) std::copy(emb[r].begin(), emb[r].end(), e.data() + r * D);
    return batch_loss(e, idx, batch, margin, nullptr);
}

EmbeddingMap triplet_embed(const TripletModel& model, const ImageStore& images, const std::vector<std::string>& ids) {
    std::vector<const Image*> ptrs;
    for (const auto& id : ids) {
        auto it = images.find(id);
        if (it == images.end()) throw std::invalid_argument("no image for '" + id + "'");
        ptrs.push_back(&it->second);
    }
    const Encoder enc(model.cfg, model.params, model.buffers);
    auto emb = enc.embed_batch(std::span<const Image* const>(ptrs));
    EmbeddingMap out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(emb[i]));
    return out;
}

void TripletConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (hard_count < 0 || hard_count > batch_size) throw std::invalid_argument("hard_count must be in [0, batch_size]");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
    if (margin < 0.0) throw std::invalid_argument("margin must be >= 0");
}

TrainResult train_triplet(const Corpus& corpus, const ImageStore& images, const TripletConfig& config,
                          const EpochCallback& on_epoch) {
    config.validate();
    ImageStore prepared;
    LabelMap train_labels, val_labels;
    for (Split s : {Split::train, Split::val}) {
        const auto recs = corpus.in_split(s);
        if (recs.empty()) throw std::invalid_argument("empty " + std::string(to_string(s)) + " split");
        for (const auto& r : recs) {
            auto it = images.find(r.id);
            if (it == images.end()) throw std::invalid_argument("no image loaded for '" + r.id + "'");
            prepared.emplace(r.id, prepare_input(it->second, config.model.input_size));
            (s == Split::train ? train_labels : val_labels).emplace(r.id, r.cluster_label);
        }
    }
    std::vector<std::string> train_ids;
    for (const auto& [id, label] : train_labels) train_ids.push_back(id);

    // Fixed random validation triplets; the embeddings are irrelevant when
    // hard_count is zero.
    EmbeddingMap dummy;
    for (const auto& [id, label] : val_labels) dummy.emplace(id, Embedding{0.0f});
    Rng val_rng(derive_seed(config.seed, "triplet-val"));
    std::vector<Triplet> val;
    for (auto& m : mine_triplets(dummy, val_labels, config.val_triplets, 0, val_rng)) val.push_back(m.triplet);

    TripletModel model = init_triplet_model(config.model, config.seed);
    auto adam = nn::AdamState<float>::for_params(model.params);
    const std::size_t batches = std::max<std::size_t>(1, (train_ids.size() + config.batch_size - 1) / config.batch_size);

    TrainResult result;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto snapshot = triplet_embed(model, prepared, train_ids);
        Rng rng(derive_seed(config.seed, "triplet-epoch", static_cast<std::uint64_t>(epoch)));
        const double lr = nn::exponential_decay_lr(epoch - 1, config.base_lr, config.lr_decay);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            std::vector<Triplet> batch;
            for (auto& m : mine_triplets(snapshot, train_labels, static_cast<std::size_t>(config.batch_size),
                                         static_cast<std::size_t>(config.hard_count), rng, config.margin)) {
                batch.push_back(std::move(m.triplet));
            }
            loss_sum += triplet_train_step(model, prepared, batch, adam, lr, config.margin);
        }
        EpochLog log{epoch, loss_sum / static_cast<double>(batches),
                     triplet_eval_loss(model, prepared, val, config.margin)};
        result.curve.push_back(log);
        if (epoch == 1 || log.val_loss < result.best_val_loss) {
            result.best_val_loss = log.val_loss;
            result.best_epoch = epoch;
            result.checkpoint = triplet_checkpoint(model);
        }
        if (on_epoch) on_epoch(log);
    }
    return result;
}

nn::ParamSet<float> triplet_checkpoint(const TripletModel& model) {
    return make_checkpoint(model.cfg, {{"online", &model.params}, {"online", &model.buffers}});
}

std::string triplet_metadata_json(const TripletConfig& config, const TrainResult& result) {
    nlohmann::json j;
    j["mode"] = "triplet";
    j["config"] = {{"epochs", config.epochs},         {"batch_size", config.batch_size},
                   {"hard_count", config.hard_count}, {"base_lr", config.base_lr},
                   {"lr_decay", config.lr_decay},     {"margin", config.margin},
                   {"seed", config.seed},             {"input_size", config.model.input_size},
                   {"widths", config.model.widths}};
    j["best_epoch"] = result.best_epoch;
    j["best_val_loss"] = result.best_val_loss;
    return j.dump(2) + "\n";
}

} // namespace dm
