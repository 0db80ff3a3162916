#pragma once

#include <span>
#include <string>
#include <vector>

#include "dm/image.hpp"
#include "dm/nn/sequential.hpp"

namespace dm {

using Embedding = std::vector<float>;

/// Desk-scale backbone: one (3x3 conv, batchnorm, relu, 2x2 maxpool) block
/// per width, then global max pooling. Heads are two-layer MLPs with
/// batchnorm after the first layer only.
struct EncoderConfig {
    int input_size = 64;
    std::vector<int> widths{16, 32, 64, 128};
    int hidden = 512;
    int projection = 128;

    int representation_dim() const { return widths.back(); }
    bool operator==(const EncoderConfig&) const = default;
};

std::vector<nn::LayerSpec> encoder_layers(const EncoderConfig& cfg);
std::vector<nn::LayerSpec> mlp_head_layers(int in, int hidden, int out);

/// Pads to a white square and resizes to `size` (a no-op copy when the
/// image already is size x size).
Image prepare_input(const Image& img, int size);

/// Packs images (all input_size square) into an [N,3,S,S] tensor.
nn::Tensor<float> to_batch(std::span<const Image* const> images);
nn::Tensor<float> to_batch(std::span<const Image> images);

/// Row-wise L2 normalization of an [N,D] tensor; rows of zero norm throw.
template <typename T> nn::Tensor<T> l2_normalize_rows(const nn::Tensor<T>& x, std::vector<T>* norms = nullptr);
/// Backward of l2_normalize_rows given its output and the input norms.
template <typename T>
nn::Tensor<T> l2_normalize_rows_backward(const nn::Tensor<T>& y, const std::vector<T>& norms, const nn::Tensor<T>& grad_y);

/// Inference-only view of a trained encoder.
class Encoder {
public:
    Encoder(EncoderConfig cfg, nn::ParamSet<float> params, nn::ParamSet<float> buffers);

    /// Extracts the "online/encoder.*" tensors of a training checkpoint.
    static Encoder from_checkpoint(const nn::ParamSet<float>& checkpoint);

    const EncoderConfig& config() const { return cfg_; }
    const nn::Sequential<float>& network() const { return net_; }
    const nn::ParamSet<float>& params() const { return params_; }
    const nn::ParamSet<float>& buffers() const { return buffers_; }

    /// Eval-mode representation; L2-normalized when `normalize`.
    Embedding embed(const Image& img, bool normalize = true) const;
    std::vector<Embedding> embed_batch(std::span<const Image* const> images, bool normalize = true,
                                       std::size_t chunk = 64) const;

private:
    EncoderConfig cfg_;
    nn::Sequential<float> net_;
    nn::ParamSet<float> params_;
    nn::ParamSet<float> buffers_;
};

/// Checkpoint tensor names: "<role>/<network>.<layer>.<tensor>" plus a
/// "meta/input_size" scalar.
nn::ParamSet<float> make_checkpoint(const EncoderConfig& cfg,
                                    std::initializer_list<std::pair<std::string, const nn::ParamSet<float>*>> parts);
EncoderConfig config_from_checkpoint(const nn::ParamSet<float>& checkpoint);

} // namespace dm
