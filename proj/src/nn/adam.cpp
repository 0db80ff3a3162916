#include "dm/nn/adam.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dm::nn {

template <typename T> void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& name = grads.names()[i];
        const auto& g = grads.tensor(i);
        if (!params.contains(name) || params.at(name).shape != g.shape) {
            throw ShapeError("adam_step: gradient '" + name + "' does not match a parameter");
        }
        if (!state.first_moment.contains(name) || state.first_moment.at(name).shape != g.shape) {
            throw ShapeError("adam_step: optimizer state has no slot for '" + name + "'");
        }
        for (T v : g.values) {
            if (!std::isfinite(v)) throw NonFiniteGradient("non-finite gradient in '" + name + "'");
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& name = grads.names()[i];
        const auto& g = grads.tensor(i).values;
        auto& w = params.at_mut(name).values;
        auto& m = state.first_moment.at_mut(name).values;
        auto& v = state.second_moment.at_mut(name).values;
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double gj = g[j];
            const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            w[j] = static_cast<T>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + state.epsilon));
        }
    }
}

template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&, double);
template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&, double);

double cosine_warmup_lr(std::int64_t step, std::int64_t steps_per_epoch, int warmup_epochs, int total_epochs,
                        double base_lr) {
    if (!(total_epochs > warmup_epochs && warmup_epochs >= 0) || steps_per_epoch < 1) {
        throw std::invalid_argument("cosine_warmup_lr: need total_epochs > warmup_epochs >= 0 and steps_per_epoch >= 1");
    }
    const auto warmup = static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch;
    const auto total = static_cast<std::int64_t>(total_epochs) * steps_per_epoch;
    if (step < warmup) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const auto span = std::max<std::int64_t>(1, total - 1 - warmup);
    double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    progress = std::min(1.0, std::max(0.0, progress));
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double exponential_decay_lr(int epoch, double base_lr, double decay) { return base_lr * std::pow(decay, epoch); }

} // namespace dm::nn
