#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dm {

/// Seeded random stream. Wraps std::mt19937_64 with distribution code of our
/// own so that draws are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Uniform integer in [lo, hi] inclusive.
    int range(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1)); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (no cached second value, keeps the
    /// stream position a pure function of the number of calls).
    double normal();

    template <typename It> void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = static_cast<decltype(i)>(below(static_cast<std::uint64_t>(i) + 1));
            using std::swap;
            swap(first[i], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed for an independent stream derived from (seed, key, salt).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t salt = 0);

} // namespace dm
