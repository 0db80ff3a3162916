#include "dm/byol.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dm {

namespace {

template <typename T> double loss_impl(std::span<const T> p, std::span<const T> z) {
    if (p.size() != z.size()) {
        throw std::invalid_argument("byol_loss: dimension mismatch " + std::to_string(p.size()) + " vs " +
                                    std::to_string(z.size()));
    }
    double pp = 0.0, zz = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        pp += static_cast<double>(p[i]) * p[i];
        zz += static_cast<double>(z[i]) * z[i];
        pz += static_cast<double>(p[i]) * z[i];
    }
    if (pp == 0.0 || zz == 0.0) throw std::domain_error("byol_loss: zero-norm vector");
    return 2.0 - 2.0 * pz / (std::sqrt(pp) * std::sqrt(zz));
}

bool is_buffer_name(const std::string& name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

void split_role(const nn::ParamSet<float>& ckpt, const std::string& role, nn::ParamSet<float>& params,
                nn::ParamSet<float>& buffers) {
    const std::string prefix = role + "/";
    for (std::size_t i = 0; i < ckpt.size(); ++i) {
        const auto& name = ckpt.names()[i];
        if (name.rfind(prefix, 0) != 0) continue;
        const std::string local = name.substr(prefix.size());
        (is_buffer_name(local) ? buffers : params).add(local, ckpt.tensor(i));
    }
}

} // namespace

double byol_loss(std::span<const double> p, std::span<const double> z) { return loss_impl(p, z); }
double byol_loss(std::span<const float> p, std::span<const float> z) { return loss_impl(p, z); }

double byol_batch_loss(const nn::Tensor<float>& p, const nn::Tensor<float>& z, nn::Tensor<float>* grad_p) {
    if (p.shape != z.shape || p.rank() != 2) {
        throw nn::ShapeError("byol_batch_loss: shapes " + nn::shape_str(p.shape) + " and " + nn::shape_str(z.shape));
    }
    const int N = p.dim(0), D = p.dim(1);
    if (grad_p) *grad_p = nn::Tensor<float>(p.shape);
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const float* pr = p.data() + static_cast<std::size_t>(n) * D;
        const float* zr = z.data() + static_cast<std::size_t>(n) * D;
        double pp = 0.0, zz = 0.0, pz = 0.0;
        for (int d = 0; d < D; ++d) {
            pp += static_cast<double>(pr[d]) * pr[d];
            zz += static_cast<double>(zr[d]) * zr[d];
            pz += static_cast<double>(pr[d]) * zr[d];
        }
        if (pp == 0.0 || zz == 0.0) throw std::domain_error("byol_loss: zero-norm vector in row " + std::to_string(n));
        const double pn = std::sqrt(pp), zn = std::sqrt(zz);
        const double cos = pz / (pn * zn);
        total += 2.0 - 2.0 * cos;
        if (grad_p) {
            // dL/dp = -2/|p| (z_hat - cos p_hat), scaled by 1/N for the mean.
            float* g = grad_p->data() + static_cast<std::size_t>(n) * D;
            const double scale = -2.0 / (pn * N);
            for (int d = 0; d < D; ++d) g[d] = static_cast<float>(scale * (zr[d] / zn - cos * pr[d] / pn));
        }
    }
    return total / N;
}

template <typename T> void ema_update(nn::ParamSet<T>& target, const nn::ParamSet<T>& online, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ema_update: tau must be in [0,1]");
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto& name = target.names()[i];
        if (!online.contains(name)) throw std::invalid_argument("ema_update: online has no tensor '" + name + "'");
        if (online.at(name).shape != target.tensor(i).shape) {
            throw nn::ShapeError("ema_update: shape mismatch for '" + name + "': " +
                                 nn::shape_str(target.tensor(i).shape) + " vs " + nn::shape_str(online.at(name).shape));
        }
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto& src = online.at(target.names()[i]).values;
        auto& dst = target.tensor_mut(i).values;
        for (std::size_t j = 0; j < dst.size(); ++j) {
            dst[j] = static_cast<T>(tau * dst[j] + (1.0 - tau) * src[j]);
        }
    }
}

template void ema_update<float>(nn::ParamSet<float>&, const nn::ParamSet<float>&, double);
template void ema_update<double>(nn::ParamSet<double>&, const nn::ParamSet<double>&, double);

ByolNetworks::ByolNetworks(EncoderConfig c)
    : cfg(std::move(c)),
      encoder("encoder", encoder_layers(cfg)),
      projector("projector", mlp_head_layers(cfg.representation_dim(), cfg.hidden, cfg.projection)),
      predictor("predictor", mlp_head_layers(cfg.projection, cfg.hidden, cfg.projection)) {}

ByolState init_byol(const ByolNetworks& nets, double tau, std::uint64_t seed) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0,1]");
    ByolState s;
    s.tau = tau;
    Rng rng(derive_seed(seed, "byol-init"));
    nets.encoder.init(s.online, s.online_buffers, rng);
    nets.projector.init(s.online, s.online_buffers, rng);
    nets.predictor.init(s.online, s.online_buffers, rng);
    for (const char* p : {"encoder.", "projector."}) {
        s.target.merge(s.online.filter_prefix(p));
        s.target_buffers.merge(s.online_buffers.filter_prefix(p));
    }
    return s;
}

namespace {

struct OnlinePass {
    nn::ForwardCache<float> enc, proj, pred;
    nn::Tensor<float> p;
};

OnlinePass online_forward(const ByolNetworks& nets, const ByolState& s, const nn::Tensor<float>& x) {
    OnlinePass r;
    auto y = nets.encoder.forward(s.online, s.online_buffers, x, nn::Mode::train, &r.enc);
    auto z = nets.projector.forward(s.online, s.online_buffers, y, nn::Mode::train, &r.proj);
    r.p = nets.predictor.forward(s.online, s.online_buffers, z, nn::Mode::train, &r.pred);
    return r;
}

nn::Tensor<float> target_forward(const ByolNetworks& nets, const ByolState& s, const nn::Tensor<float>& x,
                                 nn::Mode mode) {
    auto y = nets.encoder.forward(s.target, s.target_buffers, x, mode);
    return nets.projector.forward(s.target, s.target_buffers, y, mode);
}

void online_backward(const ByolNetworks& nets, const ByolState& s, const OnlinePass& pass,
                     const nn::Tensor<float>& grad_p, nn::ParamSet<float>& grads) {
    auto gz = nets.predictor.backward(s.online, pass.pred, grad_p, grads);
    auto gy = nets.projector.backward(s.online, pass.proj, gz, grads);
    nets.encoder.backward(s.online, pass.enc, gy, grads);
}

void scale(nn::Tensor<float>& t, float f) {
    for (auto& v : t.values) v *= f;
}

} // namespace

double train_step(const ByolNetworks& nets, ByolState& state, std::span<const ViewPair> pairs,
                  nn::AdamState<float>& adam, double lr, bool symmetrize) {
    if (pairs.size() < 2) throw std::invalid_argument("train_step: batch norm needs at least 2 view pairs");
    std::vector<const Image*> a, b;
    for (const auto& vp : pairs) {
        a.push_back(&vp.view_a);
        b.push_back(&vp.view_b);
    }
    const auto xa = to_batch(std::span<const Image* const>(a));
    const auto xb = to_batch(std::span<const Image* const>(b));

    auto pass_a = online_forward(nets, state, xa);
    const auto zb = target_forward(nets, state, xb, nn::Mode::train);
    nn::Tensor<float> grad_a;
    double loss = byol_batch_loss(pass_a.p, zb, &grad_a);

    OnlinePass pass_b;
    nn::Tensor<float> grad_b;
    if (symmetrize) {
        pass_b = online_forward(nets, state, xb);
        const auto za = target_forward(nets, state, xa, nn::Mode::train);
        loss = 0.5 * (loss + byol_batch_loss(pass_b.p, za, &grad_b));
        scale(grad_a, 0.5f);
        scale(grad_b, 0.5f);
    }
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite BYOL loss " << loss << " at step " << state.step << " (lr " << lr << ", batch "
            << pairs.size() << ", first source '" << pairs.front().source_id << "')";
        throw std::runtime_error(msg.str());
    }

    auto grads = state.online.zeros_like();
    online_backward(nets, state, pass_a, grad_a, grads);
    if (symmetrize) online_backward(nets, state, pass_b, grad_b, grads);

    for (const auto* pass : {&pass_a, &pass_b}) {
        if (pass == &pass_b && !symmetrize) break;
        nets.encoder.update_running_stats(pass->enc, state.online_buffers);
        nets.projector.update_running_stats(pass->proj, state.online_buffers);
        nets.predictor.update_running_stats(pass->pred, state.online_buffers);
    }
    nn::adam_step(state.online, grads, adam, lr);
    ema_update(state.target, state.online, state.tau);
    ema_update(state.target_buffers, state.online_buffers, state.tau);
    ++state.step;
    return loss;
}

double eval_loss(const ByolNetworks& nets, const ByolState& state, std::span<const ViewPair> pairs,
                 std::size_t chunk) {
    if (pairs.empty()) throw std::invalid_argument("eval_loss: no pairs");
    double total = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += chunk) {
        const auto part = pairs.subspan(start, std::min(chunk, pairs.size() - start));
        std::vector<const Image*> a, b;
        for (const auto& vp : part) {
            a.push_back(&vp.view_a);
            b.push_back(&vp.view_b);
        }
        auto y = nets.encoder.forward(state.online, state.online_buffers, to_batch(std::span<const Image* const>(a)),
                                      nn::Mode::eval);
        auto z = nets.projector.forward(state.online, state.online_buffers, y, nn::Mode::eval);
        auto p = nets.predictor.forward(state.online, state.online_buffers, z, nn::Mode::eval);
        auto zt = target_forward(nets, state, to_batch(std::span<const Image* const>(b)), nn::Mode::eval);
        total += byol_batch_loss(p, zt) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(pairs.size());
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
    if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0,1]");
}

namespace {

struct Source {
    std::string id;
    Image image;
};

std::vector<Source> prepared_sources(const Corpus& corpus, const ImageStore& images, Split split, int size) {
    std::vector<Source> out;
    for (const auto& rec : corpus.in_split(split)) {
        auto it = images.find(rec.id);
        if (it == images.end()) throw std::invalid_argument("no image loaded for '" + rec.id + "'");
        out.push_back({rec.id, prepare_input(it->second, size)});
    }
    if (out.empty()) throw std::invalid_argument("empty " + std::string(to_string(split)) + " split");
    return out;
}

constexpr std::uint64_t kValSalt = 0x7661'6c00;

} // namespace

TrainResult train_byol(const Corpus& corpus, const ImageStore& images, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
    config.validate();
    const ByolNetworks nets(config.model);
    const int size = config.model.input_size;
    const auto train = prepared_sources(corpus, images, Split::train, size);
    const auto val = prepared_sources(corpus, images, Split::val, size);
    const auto policy = policy_by_name(config.policy, size);
    const auto val_policy = policy.reduced();

    std::vector<ViewPair> val_pairs;
    for (const auto& src : val) {
        Rng rng(derive_seed(config.seed, src.id, kValSalt));
        val_pairs.push_back(make_view_pair(src.id, src.image, val_policy, rng));
    }

    ByolState state = init_byol(nets, config.tau, config.seed);
    auto adam = nn::AdamState<float>::for_params(state.online);

    const auto bs = static_cast<std::size_t>(config.batch_size);
    // A trailing batch of one cannot be batch-normalized; it is dropped.
    std::size_t steps_per_epoch = train.size() / bs + (train.size() % bs >= 2 ? 1 : 0);
    if (steps_per_epoch == 0) throw std::invalid_argument("train split needs at least 2 images");

    // Short runs shrink the warmup so at least one epoch follows it.
    const int warmup = std::min(config.warmup_epochs, config.epochs - 1);
    TrainResult result;
    std::vector<std::size_t> order(train.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(config.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t start = step * bs;
            const std::size_t end = std::min(order.size(), start + bs);
            std::vector<ViewPair> batch;
            for (std::size_t k = start; k < end; ++k) {
                const auto& src = train[order[k]];
                Rng rng(derive_seed(config.seed, src.id, static_cast<std::uint64_t>(epoch)));
                batch.push_back(make_view_pair(src.id, src.image, policy, rng));
            }
            const double lr = nn::cosine_warmup_lr(state.step, static_cast<std::int64_t>(steps_per_epoch), warmup,
                                                   config.epochs, config.base_lr);
            const double loss = train_step(nets, state, batch, adam, lr, config.symmetrize);
            loss_sum += loss * static_cast<double>(batch.size());
            loss_n += batch.size();
        }

        EpochLog log{epoch, loss_sum / static_cast<double>(loss_n), eval_loss(nets, state, val_pairs)};
        result.curve.push_back(log);
        if (epoch == 1 || log.val_loss < result.best_val_loss) {
            result.best_val_loss = log.val_loss;
            result.best_epoch = epoch;
            result.checkpoint = byol_checkpoint(state, config.model);
        }
        if (on_epoch) on_epoch(log);
    }
    return result;
}

nn::ParamSet<float> byol_checkpoint(const ByolState& state, const EncoderConfig& cfg) {
    return make_checkpoint(cfg, {{"online", &state.online},
                                 {"online", &state.online_buffers},
                                 {"target", &state.target},
                                 {"target", &state.target_buffers}});
}

ByolState byol_state_from_checkpoint(const nn::ParamSet<float>& checkpoint, double tau) {
    ByolState s;
    s.tau = tau;
    split_role(checkpoint, "online", s.online, s.online_buffers);
    split_role(checkpoint, "target", s.target, s.target_buffers);
    return s;
}

std::string format_loss_curve(const std::vector<EpochLog>& curve) {
    std::ostringstream out;
    out << "epoch\ttrain_loss\tval_loss\n";
    out.precision(9);
    for (const auto& e : curve) out << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\n';
    return out.str();
}

std::string byol_metadata_json(const TrainConfig& config, const TrainResult& result) {
    nlohmann::json j;
    j["mode"] = "byol";
    j["config"] = {{"epochs", config.epochs},
                   {"batch_size", config.batch_size},
                   {"base_lr", config.base_lr},
                   {"warmup_epochs", config.warmup_epochs},
                   {"tau", config.tau},
                   {"policy", config.policy},
                   {"seed", config.seed},
                   {"symmetrize", config.symmetrize},
                   {"input_size", config.model.input_size},
                   {"widths", config.model.widths},
                   {"hidden", config.model.hidden},
                   {"projection", config.model.projection}};
    j["best_epoch"] = result.best_epoch;
    j["best_val_loss"] = result.best_val_loss;
    return j.dump(2) + "\n";
}

} // namespace dm
