#include "dm/nn/sequential.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace dm::nn {
namespace {

template <typename T> using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MapMat = Eigen::Map<RowMat<T>>;
template <typename T> using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T> using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T> using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Unrolls 'same'-padded k x k patches of one CHW sample into a
/// [C*k*k, H*W] row-major matrix.
template <typename T> void im2col(const T* in, int C, int H, int W, int k, T* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        const T* plane = in + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
                const int x_lo = std::max(0, pad - kx);
                const int x_hi = std::min(W, W + pad - kx);
                for (int y = 0; y < H; ++y) {
                    T* dst = row + static_cast<std::size_t>(y) * W;
                    const int iy = y + ky - pad;
                    if (iy < 0 || iy >= H || x_lo >= x_hi) {
                        std::fill(dst, dst + W, T(0));
                        continue;
                    }
                    std::fill(dst, dst + x_lo, T(0));
                    std::memcpy(dst + x_lo, plane + static_cast<std::size_t>(iy) * W + (x_lo + kx - pad),
                                sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
                    std::fill(dst + x_hi, dst + W, T(0));
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters patch gradients back onto the sample.
template <typename T> void col2im(const T* col, int C, int H, int W, int k, T* out) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        T* plane = out + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
                const int x_lo = std::max(0, pad - kx);
                const int x_hi = std::min(W, W + pad - kx);
                for (int y = 0; y < H; ++y) {
                    const int iy = y + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + static_cast<std::size_t>(y) * W;
                    T* dst = plane + static_cast<std::size_t>(iy) * W + (kx - pad);
                    for (int x = x_lo; x < x_hi; ++x) dst[x] += src[x];
                }
            }
        }
    }
}

std::string layer_label(std::size_t i, LayerKind k) {
    return "layer " + std::to_string(i) + " (" + std::string(to_string(k)) + ")";
}

} // namespace

std::string_view to_string(LayerKind k) {
    switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_maxpool: return "global_maxpool";
    }
    return "?";
}

template <typename T>
Sequential<T>::Sequential(std::string prefix, std::vector<LayerSpec> layers)
    : prefix_(std::move(prefix)), layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if ((l.kind == LayerKind::conv || l.kind == LayerKind::dense || l.kind == LayerKind::batchnorm) &&
            (l.in <= 0 || l.out <= 0)) {
            throw ShapeError(layer_label(i, l.kind) + ": dimensions must be positive");
        }
        if (l.kind == LayerKind::conv && (l.kernel <= 0 || l.kernel % 2 == 0)) {
            throw ShapeError(layer_label(i, l.kind) + ": kernel must be odd and positive");
        }
    }
}

template <typename T> std::string Sequential<T>::name(std::size_t layer, std::string_view what) const {
    return prefix_ + "." + std::to_string(layer) + "." + std::string(what);
}

template <typename T> void Sequential<T>::init(ParamSet<T>& params, ParamSet<T>& buffers, Rng& rng) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::dense: {
            const Shape wshape = l.kind == LayerKind::conv ? Shape{l.out, l.in, l.kernel, l.kernel} : Shape{l.out, l.in};
            const int fan_in = l.kind == LayerKind::conv ? l.in * l.kernel * l.kernel : l.in;
            const double bound = std::sqrt(6.0 / fan_in);
            Tensor<T> w(wshape);
            for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
            params.add(name(i, "weight"), std::move(w));
            params.add(name(i, "bias"), Tensor<T>(Shape{l.out}));
            break;
        }
        case LayerKind::batchnorm:
            params.add(name(i, "gamma"), Tensor<T>(Shape{l.in}, T(1)));
            params.add(name(i, "beta"), Tensor<T>(Shape{l.in}));
            buffers.add(name(i, "running_mean"), Tensor<T>(Shape{l.in}));
            buffers.add(name(i, "running_var"), Tensor<T>(Shape{l.in}, T(1)));
            break;
        default: break;
        }
    }
}

template <typename T> Shape Sequential<T>::output_shape(const Shape& input) const {
    Shape s = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string where = layer_label(i, l.kind) + ": ";
        switch (l.kind) {
        case LayerKind::conv:
            if (s.size() != 4 || s[1] != l.in) {
                throw ShapeError(where + "expected [N," + std::to_string(l.in) + ",H,W], got " + shape_str(s));
            }
            s[1] = l.out;
            break;
        case LayerKind::dense:
            if (s.size() != 2 || s[1] != l.in) {
                throw ShapeError(where + "expected [N," + std::to_string(l.in) + "], got " + shape_str(s));
            }
            s[1] = l.out;
            break;
        case LayerKind::batchnorm:
            if ((s.size() != 2 && s.size() != 4) || s[1] != l.in) {
                throw ShapeError(where + "expected " + std::to_string(l.in) + " channels, got " + shape_str(s));
            }
            break;
        case LayerKind::relu: break;
        case LayerKind::maxpool:
            if (s.size() != 4 || s[2] < 2 || s[3] < 2) {
                throw ShapeError(where + "expected [N,C,H>=2,W>=2], got " + shape_str(s));
            }
            s[2] /= 2;
            s[3] /= 2;
            break;
        case LayerKind::global_maxpool:
            if (s.size() != 4 || s[2] < 1 || s[3] < 1) {
                throw ShapeError(where + "expected [N,C,H,W], got " + shape_str(s));
            }
            s = Shape{s[0], s[1]};
            break;
        }
    }
    return s;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const ParamSet<T>& params, const ParamSet<T>& buffers, const Tensor<T>& x, Mode mode,
                                 ForwardCache<T>* cache) const {
    output_shape(x.shape);
    if (cache) {
        *cache = ForwardCache<T>{};
        cache->owner = this;
        cache->params_version = params.version();
        cache->mode = mode;
        cache->layers.resize(layers_.size());
    }
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const int N = cur.dim(0);
        Tensor<T> next;
        LayerCache<T> lc;
        switch (l.kind) {
        case LayerKind::conv: {
            const int H = cur.dim(2), W = cur.dim(3), k = l.kernel;
            const int K = l.in * k * k;
            const std::size_t hw = static_cast<std::size_t>(H) * W;
            next = Tensor<T>(Shape{N, l.out, H, W});
            const auto& w = params.at(name(i, "weight"));
            const auto& b = params.at(name(i, "bias"));
            CMapMat<T> wm(w.data(), l.out, K);
            CMapVec<T> bv(b.data(), l.out);
            AlignedVector<T> col(static_cast<std::size_t>(K) * hw);
            for (int n = 0; n < N; ++n) {
                im2col(cur.data() + static_cast<std::size_t>(n) * l.in * hw, l.in, H, W, k, col.data());
                MapMat<T> out(next.data() + static_cast<std::size_t>(n) * l.out * hw, l.out, static_cast<Eigen::Index>(hw));
                out.noalias() = wm * CMapMat<T>(col.data(), K, static_cast<Eigen::Index>(hw));
                out.colwise() += bv;
            }
            break;
        }
        case LayerKind::dense: {
            next = Tensor<T>(Shape{N, l.out});
            const auto& w = params.at(name(i, "weight"));
            const auto& b = params.at(name(i, "bias"));
            MapMat<T> out(next.data(), N, l.out);
            out.noalias() = CMapMat<T>(cur.data(), N, l.in) * CMapMat<T>(w.data(), l.out, l.in).transpose();
            out.rowwise() += CMapVec<T>(b.data(), l.out).transpose();
            break;
        }
        case LayerKind::batchnorm: {
            const int C = l.in;
            const std::size_t S = cur.rank() == 4 ? static_cast<std::size_t>(cur.dim(2)) * cur.dim(3) : 1;
            const std::size_t m = static_cast<std::size_t>(N) * S;
            next = Tensor<T>(cur.shape);
            const auto& gamma = params.at(name(i, "gamma"));
            const auto& beta = params.at(name(i, "beta"));
            lc.mean.resize(C);
            lc.variance.resize(C);
            lc.inv_std.resize(C);
            for (int c = 0; c < C; ++c) {
                double mean, var;
                if (mode == Mode::train) {
                    double sum = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const T* p = cur.data() + (static_cast<std::size_t>(n) * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) sum += p[s];
                    }
                    mean = sum / static_cast<double>(m);
                    double sq = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const T* p = cur.data() + (static_cast<std::size_t>(n) * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) sq += (p[s] - mean) * (p[s] - mean);
                    }
                    var = sq / static_cast<double>(m);
                } else {
                    mean = buffers.at(name(i, "running_mean")).values[c];
                    var = buffers.at(name(i, "running_var")).values[c];
                }
                const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
                lc.mean[c] = static_cast<T>(mean);
                lc.variance[c] = static_cast<T>(var);
                lc.inv_std[c] = static_cast<T>(inv_std);
                const T g = gamma.values[c], bt = beta.values[c];
                const T mu = static_cast<T>(mean), is = static_cast<T>(inv_std);
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
                    for (std::size_t s = 0; s < S; ++s) next.values[off + s] = g * ((cur.values[off + s] - mu) * is) + bt;
                }
            }
            if (cache) cache->bn_counts.push_back(m);
            break;
        }
        case LayerKind::relu: {
            next = Tensor<T>(cur.shape);
            for (std::size_t j = 0; j < cur.size(); ++j) next.values[j] = cur.values[j] > T(0) ? cur.values[j] : T(0);
            break;
        }
        case LayerKind::maxpool: {
            const int C = cur.dim(1), H = cur.dim(2), W = cur.dim(3);
            const int Ho = H / 2, Wo = W / 2;
            next = Tensor<T>(Shape{N, C, Ho, Wo});
            lc.argmax.resize(next.size());
            std::size_t o = 0;
            for (int nc = 0; nc < N * C; ++nc) {
                const std::size_t base = static_cast<std::size_t>(nc) * H * W;
                for (int y = 0; y < Ho; ++y) {
                    for (int x = 0; x < Wo; ++x, ++o) {
                        std::size_t best = base + static_cast<std::size_t>(2 * y) * W + 2 * x;
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx = base + static_cast<std::size_t>(2 * y + dy) * W + 2 * x + dx;
                                if (cur.values[idx] > cur.values[best]) best = idx;
                            }
                        }
                        next.values[o] = cur.values[best];
                        lc.argmax[o] = best;
                    }
                }
            }
            break;
        }
        case LayerKind::global_maxpool: {
            const int C = cur.dim(1);
            const std::size_t S = static_cast<std::size_t>(cur.dim(2)) * cur.dim(3);
            next = Tensor<T>(Shape{N, C});
            lc.argmax.resize(next.size());
            for (std::size_t nc = 0; nc < next.size(); ++nc) {
                const std::size_t base = nc * S;
                std::size_t best = base;
                for (std::size_t s = 1; s < S; ++s) {
                    if (cur.values[base + s] > cur.values[best]) best = base + s;
                }
                next.values[nc] = cur.values[best];
                lc.argmax[nc] = best;
            }
            break;
        }
        }
        if (cache) {
            lc.input = std::move(cur);
            cache->layers[i] = std::move(lc);
        }
        cur = std::move(next);
    }
    if (cache) cache->output_shape = cur.shape;
    return cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const ParamSet<T>& params, const ForwardCache<T>& cache, const Tensor<T>& grad_out,
                                  ParamSet<T>& grads) const {
    if (cache.owner != this || cache.layers.size() != layers_.size()) {
        throw StaleCacheError("backward: cache was produced by a different network");
    }
    if (cache.params_version != params.version()) {
        throw StaleCacheError("backward: parameters changed since the forward pass");
    }
    if (grad_out.shape != cache.output_shape) {
        throw ShapeError("backward: upstream gradient " + shape_str(grad_out.shape) + " does not match output " +
                         shape_str(cache.output_shape));
    }
    Tensor<T> g = grad_out;
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
        const auto& l = layers_[ii];
        const auto& lc = cache.layers[ii];
        const Tensor<T>& x = lc.input;
        const int N = x.dim(0);
        Tensor<T> gx(x.shape);
        switch (l.kind) {
        case LayerKind::conv: {
            const int H = x.dim(2), W = x.dim(3), k = l.kernel;
            const int K = l.in * k * k;
            const auto hw = static_cast<Eigen::Index>(static_cast<std::size_t>(H) * W);
            const auto& w = params.at(name(ii, "weight"));
            auto& gw = grads.at_mut(name(ii, "weight"));
            auto& gb = grads.at_mut(name(ii, "bias"));
            CMapMat<T> wm(w.data(), l.out, K);
            MapMat<T> gwm(gw.data(), l.out, K);
            MapVec<T> gbv(gb.data(), l.out);
            AlignedVector<T> col(static_cast<std::size_t>(K) * hw);
            AlignedVector<T> dcol(static_cast<std::size_t>(K) * hw);
            for (int n = 0; n < N; ++n) {
                const T* xin = x.data() + static_cast<std::size_t>(n) * l.in * hw;
                CMapMat<T> go(g.data() + static_cast<std::size_t>(n) * l.out * hw, l.out, hw);
                im2col(xin, l.in, H, W, k, col.data());
                gwm.noalias() += go * CMapMat<T>(col.data(), K, hw).transpose();
                gbv += go.rowwise().sum();
                MapMat<T>(dcol.data(), K, hw).noalias() = wm.transpose() * go;
                col2im(dcol.data(), l.in, H, W, k, gx.data() + static_cast<std::size_t>(n) * l.in * hw);
            }
            break;
        }
        case LayerKind::dense: {
            const auto& w = params.at(name(ii, "weight"));
            auto& gw = grads.at_mut(name(ii, "weight"));
            auto& gb = grads.at_mut(name(ii, "bias"));
            CMapMat<T> go(g.data(), N, l.out);
            CMapMat<T> xm(x.data(), N, l.in);
            MapMat<T>(gw.data(), l.out, l.in).noalias() += go.transpose() * xm;
            MapVec<T>(gb.data(), l.out) += go.colwise().sum().transpose();
            MapMat<T>(gx.data(), N, l.in).noalias() = go * CMapMat<T>(w.data(), l.out, l.in);
            break;
        }
        case LayerKind::batchnorm: {
            const int C = l.in;
            const std::size_t S = x.rank() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
            const double m = static_cast<double>(N) * static_cast<double>(S);
            const auto& gamma = params.at(name(ii, "gamma"));
            auto& gg = grads.at_mut(name(ii, "gamma"));
            auto& gbeta = grads.at_mut(name(ii, "beta"));
            for (int c = 0; c < C; ++c) {
                const double mu = lc.mean[c], is = lc.inv_std[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        const double dy = g.values[off + s];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (x.values[off + s] - mu) * is;
                    }
                }
                gg.values[c] += static_cast<T>(sum_dy_xhat);
                gbeta.values[c] += static_cast<T>(sum_dy);
                const double gm = gamma.values[c];
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        const double dy = g.values[off + s];
                        if (cache.mode == Mode::train) {
                            const double xhat = (x.values[off + s] - mu) * is;
                            gx.values[off + s] = static_cast<T>(gm * is / m * (m * dy - sum_dy - xhat * sum_dy_xhat));
                        } else {
                            gx.values[off + s] = static_cast<T>(dy * gm * is);
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::relu:
            for (std::size_t j = 0; j < x.size(); ++j) gx.values[j] = x.values[j] > T(0) ? g.values[j] : T(0);
            break;
        case LayerKind::maxpool:
        case LayerKind::global_maxpool:
            for (std::size_t o = 0; o < lc.argmax.size(); ++o) gx.values[lc.argmax[o]] += g.values[o];
            break;
        }
        g = std::move(gx);
    }
    return g;
}

template <typename T>
void Sequential<T>::update_running_stats(const ForwardCache<T>& cache, ParamSet<T>& buffers, double momentum) const {
    if (cache.owner != this || cache.mode != Mode::train) {
        throw StaleCacheError("update_running_stats needs a train-mode cache from this network");
    }
    std::size_t bn = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind != LayerKind::batchnorm) continue;
        const auto& lc = cache.layers[i];
        const double count = static_cast<double>(cache.bn_counts.at(bn++));
        const double unbias = count > 1 ? count / (count - 1) : 1.0;
        auto& rm = buffers.at_mut(name(i, "running_mean"));
        auto& rv = buffers.at_mut(name(i, "running_var"));
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm.values[c] = static_cast<T>((1 - momentum) * rm.values[c] + momentum * lc.mean[c]);
            rv.values[c] = static_cast<T>((1 - momentum) * rv.values[c] + momentum * lc.variance[c] * unbias);
        }
    }
}

template class Sequential<float>;
template class Sequential<double>;

} // namespace dm::nn
