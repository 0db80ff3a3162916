#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dm/nn/tensor.hpp"
#include "dm/rng.hpp"

namespace dm::nn {

enum class LayerKind { conv, dense, batchnorm, relu, maxpool, global_maxpool };
enum class Mode { train, eval };

std::string_view to_string(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in = 0;  ///< input channels/features (conv, dense, batchnorm)
    int out = 0; ///< output channels/features (conv, dense)
    int kernel = 3;

    static LayerSpec conv(int in, int out, int kernel = 3) { return {LayerKind::conv, in, out, kernel}; }
    static LayerSpec dense(int in, int out) { return {LayerKind::dense, in, out, 0}; }
    static LayerSpec batchnorm(int channels) { return {LayerKind::batchnorm, channels, channels, 0}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0}; }
    static LayerSpec maxpool() { return {LayerKind::maxpool, 0, 0, 0}; }
    static LayerSpec global_maxpool() { return {LayerKind::global_maxpool, 0, 0, 0}; }

    bool operator==(const LayerSpec&) const = default;
};

inline constexpr double kBatchNormEps = 1e-5;

template <typename T> struct LayerCache {
    Tensor<T> input;
    std::vector<std::size_t> argmax;
    std::vector<T> mean;     // batchnorm: batch mean (train) or running mean (eval)
    std::vector<T> variance; // batchnorm: biased batch variance (train) or running variance (eval)
    std::vector<T> inv_std;
};

/// Intermediates recorded by a forward pass, consumed by backward.
template <typename T> struct ForwardCache {
    const void* owner = nullptr;
    std::uint64_t params_version = 0;
    Mode mode = Mode::train;
    Shape output_shape;
    std::vector<LayerCache<T>> layers;
    /// Number of rows reduced by each batchnorm layer (for unbiased variance).
    std::vector<std::size_t> bn_counts;
};

class StaleCacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A feed-forward stack. Parameters live outside the network in a ParamSet
/// under names "<prefix>.<layer>.<weight|bias|gamma|beta>"; batchnorm running
/// statistics live in a separate buffer set as ".running_mean"/".running_var".
/// Convolutions are stride 1 with same padding; maxpool is 2x2 stride 2.
template <typename T> class Sequential {
public:
    Sequential() = default;
    Sequential(std::string prefix, std::vector<LayerSpec> layers);

    const std::string& prefix() const { return prefix_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::string name(std::size_t layer, std::string_view what) const;

    /// Adds this network's tensors to `params` and `buffers`. Conv/dense use
    /// fan-in scaled uniform weights and zero bias; batchnorm scale 1, shift 0.
    void init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng) const;

    /// Output shape for a given input shape; throws ShapeError naming the
    /// first incompatible layer.
    Shape output_shape(const Shape& input) const;

    /// Train mode normalizes batchnorm with batch statistics, eval mode with
    /// the running statistics in `buffers`.
    Tensor<T> forward(const ParamSet<T>& params, const ParamSet<T>& buffers, const Tensor<T>& x, Mode mode,
                      ForwardCache<T>* cache = nullptr) const;

    /// Accumulates parameter gradients into `grads` (same names as params)
    /// and returns the gradient with respect to the input.
    Tensor<T> backward(const ParamSet<T>& params, const ForwardCache<T>& cache, const Tensor<T>& grad_out,
                       ParamSet<T>& grads) const;

    /// running = (1 - momentum) * running + momentum * batch statistic.
    void update_running_stats(const ForwardCache<T>& cache, ParamSet<T>& buffers, double momentum = 0.1) const;

private:
    std::string prefix_;
    std::vector<LayerSpec> layers_;
};

extern template class Sequential<float>;
extern template class Sequential<double>;

} // namespace dm::nn
