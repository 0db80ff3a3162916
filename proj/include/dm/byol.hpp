#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dm/augment.hpp"
#include "dm/dataset.hpp"
#include "dm/models.hpp"
#include "dm/nn/adam.hpp"

namespace dm {

/// ||p/|p| - z/|z|||^2, computed as 2 - 2 cos(p, z). Throws on a zero-norm
/// input or a dimension mismatch.
double byol_loss(std::span<const double> p, std::span<const double> z);
double byol_loss(std::span<const float> p, std::span<const float> z);

/// Mean byol_loss over the rows of [N,D] tensors. When grad_p is given it
/// receives d(mean)/dp; z is treated as a constant.
double byol_batch_loss(const nn::Tensor<float>& p, const nn::Tensor<float>& z, nn::Tensor<float>* grad_p = nullptr);

/// target <- tau * target + (1 - tau) * online for every tensor of target.
/// Online tensors without a target counterpart (the predictor) are ignored.
template <typename T> void ema_update(nn::ParamSet<T>& target, const nn::ParamSet<T>& online, double tau);

extern template void ema_update<float>(nn::ParamSet<float>&, const nn::ParamSet<float>&, double);
extern template void ema_update<double>(nn::ParamSet<double>&, const nn::ParamSet<double>&, double);

struct ByolNetworks {
    explicit ByolNetworks(EncoderConfig cfg = {});

    EncoderConfig cfg;
    nn::Sequential<float> encoder;
    nn::Sequential<float> projector;
    nn::Sequential<float> predictor;
};

struct ByolState {
    nn::ParamSet<float> online;  // encoder.*, projector.*, predictor.*
    nn::ParamSet<float> online_buffers;
    nn::ParamSet<float> target;  // encoder.*, projector.*
    nn::ParamSet<float> target_buffers;
    double tau = 0.99;
    std::int64_t step = 0;
};

/// Fresh online weights from `seed`; the target starts as a copy.
ByolState init_byol(const ByolNetworks& nets, double tau, std::uint64_t seed);

/// One optimizer step on a batch of view pairs. Returns the batch loss.
/// Throws std::runtime_error on a non-finite loss before touching the state.
double train_step(const ByolNetworks& nets, ByolState& state, std::span<const ViewPair> pairs,
                  nn::AdamState<float>& adam, double lr, bool symmetrize = false);

/// Eval-mode loss of online(view_a) against target(view_b).
double eval_loss(const ByolNetworks& nets, const ByolState& state, std::span<const ViewPair> pairs,
                 std::size_t chunk = 64);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    double base_lr = 5e-4;
    int warmup_epochs = 10;
    double tau = 0.99;
    std::string policy = "custom";
    std::uint64_t seed = 0;
    bool symmetrize = false;
    EncoderConfig model{};

    void validate() const;
};

struct EpochLog {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    nn::ParamSet<float> checkpoint; // best validation epoch
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<EpochLog> curve;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains on the train split, selects on val-split loss with the reduced
/// policy. Images are keyed by record id and prepared to the model input.
TrainResult train_byol(const Corpus& corpus, const ImageStore& images, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

nn::ParamSet<float> byol_checkpoint(const ByolState& state, const EncoderConfig& cfg);
/// Rebuilds a state (tau from the argument, step 0) from byol_checkpoint output.
ByolState byol_state_from_checkpoint(const nn::ParamSet<float>& checkpoint, double tau);

/// "epoch\ttrain_loss\tval_loss" rows with a header line.
std::string format_loss_curve(const std::vector<EpochLog>& curve);
/// Sidecar metadata: config echo, best epoch and its validation loss.
std::string byol_metadata_json(const TrainConfig& config, const TrainResult& result);

} // namespace dm
