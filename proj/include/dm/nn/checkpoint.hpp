#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "dm/nn/tensor.hpp"

namespace dm::nn {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "DMCK", u32 version, u32 tensor count, then per
/// tensor u32 name length, name bytes, u32 rank, u32 dims..., f32 values.
std::vector<std::uint8_t> encode_checkpoint(const ParamSet<float>& tensors);
ParamSet<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParamSet<float>& tensors, const std::filesystem::path& path);
ParamSet<float> load_checkpoint(const std::filesystem::path& path);

} // namespace dm::nn
