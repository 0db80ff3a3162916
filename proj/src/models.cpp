#include "dm/models.hpp"

#include <cmath>
#include <stdexcept>

namespace dm {

using nn::LayerSpec;

std::vector<LayerSpec> encoder_layers(const EncoderConfig& cfg) {
    if (cfg.widths.empty()) throw std::invalid_argument("encoder needs at least one block");
    std::vector<LayerSpec> layers;
    int in = 3;
    for (int w : cfg.widths) {
        layers.push_back(LayerSpec::conv(in, w));
        layers.push_back(LayerSpec::batchnorm(w));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::maxpool());
        in = w;
    }
    layers.push_back(LayerSpec::global_maxpool());
    return layers;
}

std::vector<LayerSpec> mlp_head_layers(int in, int hidden, int out) {
    return {LayerSpec::dense(in, hidden), LayerSpec::batchnorm(hidden), LayerSpec::relu(), LayerSpec::dense(hidden, out)};
}

Image prepare_input(const Image& img, int size) {
    if (img.width == size && img.height == size) return img;
    const Image sq = img.width == img.height ? img : pad_to_square(img);
    return resize_bilinear(sq, size, size);
}

nn::Tensor<float> to_batch(std::span<const Image* const> images) {
    if (images.empty()) throw std::invalid_argument("empty image batch");
    const int w = images.front()->width, h = images.front()->height;
    nn::Tensor<float> out(nn::Shape{static_cast<int>(images.size()), 3, h, w});
    const std::size_t hw = static_cast<std::size_t>(w) * h;
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.width != w || img.height != h) {
            throw nn::ShapeError("image " + std::to_string(n) + " is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", batch expects " + std::to_string(w) + "x" +
                                 std::to_string(h));
        }
        float* dst = out.data() + n * 3 * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            for (int c = 0; c < 3; ++c) dst[c * hw + p] = img.data[p * 3 + c];
        }
    }
    return out;
}

nn::Tensor<float> to_batch(std::span<const Image> images) {
    std::vector<const Image*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    return to_batch(std::span<const Image* const>(ptrs));
}

template <typename T> nn::Tensor<T> l2_normalize_rows(const nn::Tensor<T>& x, std::vector<T>* norms) {
    if (x.rank() != 2) throw nn::ShapeError("l2_normalize_rows expects [N,D]");
    const int N = x.dim(0), D = x.dim(1);
    nn::Tensor<T> y(x.shape);
    if (norms) norms->assign(static_cast<std::size_t>(N), T(0));
    for (int n = 0; n < N; ++n) {
        double sq = 0.0;
        for (int d = 0; d < D; ++d) sq += static_cast<double>(x.values[n * D + d]) * x.values[n * D + d];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) throw std::domain_error("cannot normalize a zero-norm vector");
        for (int d = 0; d < D; ++d) y.values[n * D + d] = static_cast<T>(x.values[n * D + d] / norm);
        if (norms) (*norms)[n] = static_cast<T>(norm);
    }
    return y;
}

template <typename T>
nn::Tensor<T> l2_normalize_rows_backward(const nn::Tensor<T>& y, const std::vector<T>& norms, const nn::Tensor<T>& grad_y) {
    const int N = y.dim(0), D = y.dim(1);
    nn::Tensor<T> gx(y.shape);
    for (int n = 0; n < N; ++n) {
        double proj = 0.0;
        for (int d = 0; d < D; ++d) proj += static_cast<double>(y.values[n * D + d]) * grad_y.values[n * D + d];
        for (int d = 0; d < D; ++d) {
            gx.values[n * D + d] = static_cast<T>((grad_y.values[n * D + d] - y.values[n * D + d] * proj) / norms[n]);
        }
    }
    return gx;
}

template nn::Tensor<float> l2_normalize_rows<float>(const nn::Tensor<float>&, std::vector<float>*);
template nn::Tensor<double> l2_normalize_rows<double>(const nn::Tensor<double>&, std::vector<double>*);
template nn::Tensor<float> l2_normalize_rows_backward<float>(const nn::Tensor<float>&, const std::vector<float>&,
                                                             const nn::Tensor<float>&);
template nn::Tensor<double> l2_normalize_rows_backward<double>(const nn::Tensor<double>&, const std::vector<double>&,
                                                               const nn::Tensor<double>&);

Encoder::Encoder(EncoderConfig cfg, nn::ParamSet<float> params, nn::ParamSet<float> buffers)
    : cfg_(std::move(cfg)), net_("encoder", encoder_layers(cfg_)), params_(std::move(params)), buffers_(std::move(buffers)) {
    // Validate that every tensor the network reads is present.
    nn::ParamSet<float> p, b;
    Rng rng(0);
    net_.init(p, b, rng);
    for (const auto& n : p.names()) {
        if (!params_.contains(n) || params_.at(n).shape != p.at(n).shape) {
            throw std::invalid_argument("encoder parameter '" + n + "' missing or misshapen");
        }
    }
    for (const auto& n : b.names()) {
        if (!buffers_.contains(n) || buffers_.at(n).shape != b.at(n).shape) {
            throw std::invalid_argument("encoder buffer '" + n + "' missing or misshapen");
        }
    }
}

EncoderConfig config_from_checkpoint(const nn::ParamSet<float>& ckpt) {
    EncoderConfig cfg;
    if (ckpt.contains("meta/input_size")) {
        cfg.input_size = static_cast<int>(ckpt.at("meta/input_size").values.at(0));
    }
    cfg.widths.clear();
    for (int layer = 0;; layer += 4) {
        const std::string name = "online/encoder." + std::to_string(layer) + ".weight";
        if (!ckpt.contains(name)) break;
        cfg.widths.push_back(ckpt.at(name).dim(0));
    }
    if (cfg.widths.empty()) throw std::invalid_argument("checkpoint has no online/encoder tensors");
    if (ckpt.contains("online/projector.0.weight")) {
        const auto& w = ckpt.at("online/projector.0.weight");
        cfg.hidden = w.dim(0);
        cfg.projection = ckpt.at("online/projector.3.weight").dim(0);
    }
    return cfg;
}

Encoder Encoder::from_checkpoint(const nn::ParamSet<float>& ckpt) {
    const EncoderConfig cfg = config_from_checkpoint(ckpt);
    nn::ParamSet<float> params, buffers;
    const std::string prefix = "online/";
    for (std::size_t i = 0; i < ckpt.size(); ++i) {
        const auto& name = ckpt.names()[i];
        if (name.rfind("online/encoder.", 0) != 0) continue;
        const std::string local = name.substr(prefix.size());
        const bool is_buffer = local.ends_with(".running_mean") || local.ends_with(".running_var");
        (is_buffer ? buffers : params).add(local, ckpt.tensor(i));
    }
    return Encoder(cfg, std::move(params), std::move(buffers));
}

Embedding Encoder::embed(const Image& img, bool normalize) const {
    const Image* ptr = &img;
    return embed_batch(std::span<const Image* const>(&ptr, 1), normalize).front();
}

std::vector<Embedding> Encoder::embed_batch(std::span<const Image* const> images, bool normalize, std::size_t chunk) const {
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto part = images.subspan(start, std::min(chunk, images.size() - start));
        for (const Image* img : part) {
            if (img->width != cfg_.input_size || img->height != cfg_.input_size) {
                throw nn::ShapeError("embed: image is " + std::to_string(img->width) + "x" + std::to_string(img->height) +
                                     ", model input is " + std::to_string(cfg_.input_size) + "x" +
                                     std::to_string(cfg_.input_size));
            }
        }
        auto y = net_.forward(params_, buffers_, to_batch(part), nn::Mode::eval);
        if (normalize) y = l2_normalize_rows(y);
        const int D = y.dim(1);
        for (int n = 0; n < y.dim(0); ++n) {
            out.emplace_back(y.values.begin() + static_cast<std::ptrdiff_t>(n) * D,
                             y.values.begin() + static_cast<std::ptrdiff_t>(n + 1) * D);
        }
    }
    return out;
}

nn::ParamSet<float> make_checkpoint(const EncoderConfig& cfg,
                                    std::initializer_list<std::pair<std::string, const nn::ParamSet<float>*>> parts) {
    nn::ParamSet<float> out;
    for (const auto& [role, set] : parts) {
        for (std::size_t i = 0; i < set->size(); ++i) out.add(role + "/" + set->names()[i], set->tensor(i));
    }
    out.add("meta/input_size", nn::Tensor<float>(nn::Shape{1}, static_cast<float>(cfg.input_size)));
    return out;
}

} // namespace dm
