#include "dm/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dm/png_io.hpp"

namespace dm::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    void raw(void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet<float>& tensors) {
    std::vector<std::uint8_t> out{'D', 'M', 'C', 'K'};
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& name = tensors.names()[i];
        const auto& t = tensors.tensor(i);
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.values.data());
        out.insert(out.end(), p, p + t.values.size() * sizeof(float));
    }
    return out;
}

ParamSet<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, "DMCK", 4) != 0) throw CheckpointError("bad checkpoint header: magic is not DMCK");
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.u32("tensor count");
    ParamSet<float> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32("name length");
        if (len > (1u << 16)) throw CheckpointError("implausible tensor name length");
        std::string name(len, '\0');
        r.raw(name.data(), len, "name");
        const auto rank = r.u32("rank");
        if (rank > 8) throw CheckpointError("implausible rank for '" + name + "'");
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.u32("dims");
            if (dim > (1u << 28) || (dim != 0 && n > (std::size_t{1} << 32) / dim)) {
                throw CheckpointError("implausible shape for '" + name + "'");
            }
            shape.push_back(static_cast<int>(dim));
            n *= dim;
        }
        Tensor<float> t(shape);
        r.raw(t.values.data(), n * sizeof(float), "tensor values");
        try {
            out.add(name, std::move(t));
        } catch (const std::invalid_argument& e) {
            throw CheckpointError(e.what());
        }
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last tensor");
    return out;
}

void save_checkpoint(const ParamSet<float>& tensors, const std::filesystem::path& path) {
    write_file_bytes(path, encode_checkpoint(tensors));
}

ParamSet<float> load_checkpoint(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    return decode_checkpoint(bytes);
}

} // namespace dm::nn
