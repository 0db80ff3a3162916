#pragma once

#include <cstdint>

#include "dm/nn/tensor.hpp"

namespace dm::nn {

template <typename T> struct AdamState {
    ParamSet<T> first_moment;
    ParamSet<T> second_moment;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_params(const ParamSet<T>& params) {
        AdamState s;
        s.first_moment = params.zeros_like();
        s.second_moment = params.zeros_like();
        return s;
    }
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam update of every tensor in `grads` (names must exist in
/// `params`). Checks all gradients before touching anything and throws
/// NonFiniteGradient naming the first offending tensor.
template <typename T> void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr);

extern template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&, double);
extern template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&, double);

/// Linear warmup reaching base_lr at the end of the warmup epochs, then
/// half-cosine decay to 0 at the last step of the last epoch.
double cosine_warmup_lr(std::int64_t step, std::int64_t steps_per_epoch, int warmup_epochs, int total_epochs,
                        double base_lr);

/// base_lr * decay^epoch.
double exponential_decay_lr(int epoch, double base_lr, double decay = 0.9);

} // namespace dm::nn
