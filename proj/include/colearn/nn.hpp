#pragma once

// Feedforward / convolutional network primitives with hand-written backward
// passes. Activations travel as row-major batch matrices: one row per sample,
// each row a flattened (channels, height, width) block.

#include "colearn/common.hpp"
#include "colearn/rng.hpp"
#include "colearn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace colearn {

enum class LayerKind { dense, conv2d, maxpool, relu, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct Shape3 {
    Index channels = 1;
    Index height = 1;
    Index width = 1;

    Index size() const { return channels * height * width; }
    Index plane() const { return height * width; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    Index in = 0;   // dense: input features; conv2d: input channels
    Index out = 0;  // dense: output features; conv2d: output channels
    Index kernel = 0;
    Index stride = 1;
    Index padding = 0;

    static LayerSpec dense(Index in, Index out) { return {LayerKind::dense, in, out}; }
    static LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel,
                            Index stride = 1, Index padding = 0) {
        return {LayerKind::conv2d, in_channels, out_channels, kernel, stride, padding};
    }
    static LayerSpec maxpool(Index kernel, Index stride) {
        return {LayerKind::maxpool, 0, 0, kernel, stride, 0};
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec softmax() { return {LayerKind::softmax}; }

    bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
    Shape3 input;
    std::vector<LayerSpec> layers;

    /// shapes()[0] is the input, shapes()[l + 1] the output of layer l.
    /// Throws ShapeError naming the first pair of layers that do not compose.
    std::vector<Shape3> shapes() const;
    Index classes() const;
    /// Weight tensor shape of layer l: (out, in) for dense, (out, in, k, k) for conv2d.
    std::vector<Index> weight_shape(std::size_t layer) const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// LeNet-5: Conv5-ReLU-Pool-Conv5-ReLU-Pool-Conv5-ReLU-FC84-ReLU-FC-softmax.
/// For inputs smaller than 32x32 the first convolution is zero-padded so the
/// feature-map sizes match the 32x32 layout (28x28 -> padding 2).
Architecture lenet5(Shape3 input = {3, 32, 32}, Index classes = 10);

/// Dense ReLU network with the given hidden widths.
Architecture mlp(Index inputs, const std::vector<Index>& hidden, Index classes);

template <typename Scalar>
struct LayerParams {
    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
};

template <typename Scalar>
struct NetworkParams {
    std::vector<LayerParams<Scalar>> layers;
    /// Bumped on every in-place update; forward caches record it.
    std::uint64_t generation = 0;

    static NetworkParams zeros(const Architecture& arch) {
        NetworkParams p;
        p.layers.resize(arch.layers.size());
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            if (!arch.layers[l].has_params()) continue;
            p.layers[l].weight = Tensor<Scalar>(arch.weight_shape(l));
            p.layers[l].bias = Tensor<Scalar>({arch.layers[l].out});
        }
        return p;
    }

    NetworkParams zeros_like() const {
        NetworkParams p;
        p.layers.resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].weight.empty()) continue;
            p.layers[l].weight = Tensor<Scalar>(layers[l].weight.shape);
            p.layers[l].bias = Tensor<Scalar>(layers[l].bias.shape);
        }
        return p;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
        return true;
    }

    Index parameter_count() const {
        Index n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    template <typename Other>
    NetworkParams<Other> cast() const {
        NetworkParams<Other> p;
        p.generation = generation;
        for (const auto& l : layers)
            p.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
        return p;
    }

    friend bool bitwise_equal(const NetworkParams& a, const NetworkParams& b) {
        if (a.layers.size() != b.layers.size()) return false;
        for (std::size_t l = 0; l < a.layers.size(); ++l)
            if (!bitwise_equal(a.layers[l].weight, b.layers[l].weight) ||
                !bitwise_equal(a.layers[l].bias, b.layers[l].bias))
                return false;
        return true;
    }
};

/// FNV-1a over the raw parameter bytes in layer order.
template <typename Scalar>
std::uint64_t parameter_hash(const NetworkParams<Scalar>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const Tensor<Scalar>& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
        for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(t.size()); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& l : params.layers) {
        feed(l.weight);
        feed(l.bias);
    }
    return h;
}

/// Xavier/Glorot uniform weights, bound sqrt(6 / (fan_in + fan_out)); zero biases.
/// Draws happen in double so float and double networks share initial values.
template <typename Scalar>
NetworkParams<Scalar> xavier_init(const Architecture& arch, std::uint64_t seed) {
    arch.shapes();  // validates
    auto params = NetworkParams<Scalar>::zeros(arch);
    Rng rng(seed);
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const LayerSpec& spec = arch.layers[l];
        if (!spec.has_params()) continue;
        const Index area = spec.kind == LayerKind::conv2d ? spec.kernel * spec.kernel : 1;
        const double fan_in = static_cast<double>(spec.in * area);
        const double fan_out = static_cast<double>(spec.out * area);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        auto& w = params.layers[l].weight.data;
        for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    return params;
}

template <typename Scalar>
struct ForwardCache {
    /// activations[0] is the batch, activations[l + 1] the output of layer l.
    std::vector<RowMatrixX<Scalar>> activations;
    /// maxpool layers: flat input offset of the winning element per output.
    std::vector<std::vector<Index>> pool_argmax;
    /// conv2d layers: im2col patches, (batch * out_plane) x (in_channels * k * k).
    std::vector<MatrixX<Scalar>> patches;
    const NetworkParams<Scalar>* params = nullptr;
    std::uint64_t generation = 0;

    const RowMatrixX<Scalar>& logits() const { return activations.back(); }
    Index batch_size() const { return activations.empty() ? 0 : activations.front().rows(); }
};

namespace detail {

// Output columns [lo, hi) whose input column ox * stride + offset lies inside [0, width).
inline std::pair<Index, Index> valid_range(Index offset, Index stride, Index width, Index out_width) {
    Index lo = 0;
    while (lo < out_width && lo * stride + offset < 0) ++lo;
    Index hi = out_width;
    while (hi > lo && (hi - 1) * stride + offset >= width) --hi;
    return {lo, hi};
}

template <typename Scalar>
void im2col(const RowMatrixX<Scalar>& in, const Shape3& is, const Shape3& os, const LayerSpec& spec,
            MatrixX<Scalar>& cols) {
    const Index batch = in.rows();
    const Index k = spec.kernel;
    const Index s = spec.stride;
    const Index plane = os.plane();
    cols.resize(batch * plane, is.channels * k * k);
    for (Index c = 0; c < is.channels; ++c)
        for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
                Scalar* col = cols.col((c * k + ky) * k + kx).data();
                const auto [lo, hi] = valid_range(kx - spec.padding, s, is.width, os.width);
                for (Index b = 0; b < batch; ++b) {
                    const Scalar* src = in.row(b).data() + c * is.plane();
                    Scalar* dst = col + b * plane;
                    for (Index oy = 0; oy < os.height; ++oy) {
                        const Index iy = oy * s + ky - spec.padding;
                        Scalar* d = dst + oy * os.width;
                        if (iy < 0 || iy >= is.height || lo >= hi) {
                            std::fill(d, d + os.width, Scalar(0));
                            continue;
                        }
                        std::fill(d, d + lo, Scalar(0));
                        std::fill(d + hi, d + os.width, Scalar(0));
                        const Scalar* r = src + iy * is.width + (lo * s + kx - spec.padding);
                        if (s == 1)
                            std::copy(r, r + (hi - lo), d + lo);
                        else
                            for (Index ox = lo; ox < hi; ++ox) d[ox] = r[(ox - lo) * s];
                    }
                }
            }
}

template <typename Scalar>
void col2im(const MatrixX<Scalar>& cols, const Shape3& is, const Shape3& os, const LayerSpec& spec,
            RowMatrixX<Scalar>& grad_in) {
    const Index batch = grad_in.rows();
    const Index k = spec.kernel;
    const Index s = spec.stride;
    const Index plane = os.plane();
    grad_in.setZero();
    for (Index c = 0; c < is.channels; ++c)
        for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
                const Scalar* col = cols.col((c * k + ky) * k + kx).data();
                const auto [lo, hi] = valid_range(kx - spec.padding, s, is.width, os.width);
                if (lo >= hi) continue;
                for (Index b = 0; b < batch; ++b) {
                    Scalar* dst = grad_in.row(b).data() + c * is.plane();
                    const Scalar* src = col + b * plane;
                    for (Index oy = 0; oy < os.height; ++oy) {
                        const Index iy = oy * s + ky - spec.padding;
                        if (iy < 0 || iy >= is.height) continue;
                        Scalar* r = dst + iy * is.width + (lo * s + kx - spec.padding);
                        const Scalar* g = src + oy * os.width;
                        if (s == 1)
                            for (Index ox = lo; ox < hi; ++ox) r[ox - lo] += g[ox];
                        else
                            for (Index ox = lo; ox < hi; ++ox) r[(ox - lo) * s] += g[ox];
                    }
                }
            }
}

template <typename Scalar>
Eigen::Map<const RowMatrixX<Scalar>> weight_matrix(const Tensor<Scalar>& w) {
    return {w.data.data(), w.shape[0], w.size() / w.shape[0]};
}

}  // namespace detail

/// Runs the network up to (not including) the softmax. With keep_cache=false
/// only the activations are retained (enough for inference and analytics).
template <typename Scalar>
ForwardCache<Scalar> forward(const Architecture& arch, const NetworkParams<Scalar>& params,
                             const RowMatrixX<Scalar>& batch, bool keep_cache = true) {
    const auto shapes = arch.shapes();
    if (batch.cols() != shapes.front().size())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                         " features, input layer expects " + std::to_string(shapes.front().size()));
    if (params.layers.size() != arch.layers.size())
        throw ShapeError("forward: parameter set does not match architecture");

    const Index n = batch.rows();
    ForwardCache<Scalar> cache;
    cache.params = &params;
    cache.generation = params.generation;
    cache.activations.reserve(arch.layers.size() + 1);
    cache.activations.push_back(batch);
    cache.pool_argmax.resize(arch.layers.size());
    cache.patches.resize(arch.layers.size());

    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const LayerSpec& spec = arch.layers[l];
        const Shape3& is = shapes[l];
        const Shape3& os = shapes[l + 1];
        const RowMatrixX<Scalar>& in = cache.activations.back();
        RowMatrixX<Scalar> out;
        switch (spec.kind) {
            case LayerKind::dense: {
                const auto w = detail::weight_matrix(params.layers[l].weight);
                out.noalias() = in * w.transpose();
                out.rowwise() += params.layers[l].bias.data.transpose();
                break;
            }
            case LayerKind::conv2d: {
                MatrixX<Scalar> cols;
                detail::im2col(in, is, os, spec, cols);
                const auto w = detail::weight_matrix(params.layers[l].weight);
                MatrixX<Scalar> prod;
                prod.noalias() = cols * w.transpose();  // (n * plane) x out_channels
                out.resize(n, os.size());
                const Index plane = os.plane();
                const auto& bias = params.layers[l].bias.data;
                for (Index b = 0; b < n; ++b) {
                    Eigen::Map<RowMatrixX<Scalar>> dst(out.row(b).data(), os.channels, plane);
                    dst.noalias() = prod.middleRows(b * plane, plane).transpose();
                    dst.colwise() += bias;
                }
                if (keep_cache) cache.patches[l] = std::move(cols);
                break;
            }
            case LayerKind::maxpool: {
                out.resize(n, os.size());
                std::vector<Index> argmax(keep_cache ? static_cast<std::size_t>(n * os.size()) : 0);
                const Index k = spec.kernel;
                const Index st = spec.stride;
                for (Index b = 0; b < n; ++b) {
                    const Scalar* src = in.row(b).data();
                    Scalar* dst = out.row(b).data();
                    Index* arg = keep_cache ? argmax.data() + b * os.size() : nullptr;
                    for (Index c = 0; c < os.channels; ++c)
                        for (Index oy = 0; oy < os.height; ++oy) {
                            const Index row0 = c * is.plane() + oy * st * is.width;
                            const Index o0 = (c * os.height + oy) * os.width;
                            for (Index ox = 0; ox < os.width; ++ox) {
                                Index best = row0 + ox * st;
                                Scalar top = src[best];
                                for (Index ky = 0; ky < k; ++ky) {
                                    const Index at0 = row0 + ky * is.width + ox * st;
                                    for (Index kx = 0; kx < k; ++kx) {
                                        const Scalar v = src[at0 + kx];
                                        const bool gt = v > top;  // first maximum wins ties
                                        top = gt ? v : top;
                                        best = gt ? at0 + kx : best;
                                    }
                                }
                                dst[o0 + ox] = top;
                                if (arg != nullptr) arg[o0 + ox] = best;
                            }
                        }
                }
                if (keep_cache) cache.pool_argmax[l] = std::move(argmax);
                break;
            }
            case LayerKind::relu:
                out = in.cwiseMax(Scalar(0));
                break;
            case LayerKind::softmax:
                out = in;  // logits; probabilities come from softmax()
                break;
        }
        cache.activations.push_back(std::move(out));
    }
    if (!keep_cache) cache.params = nullptr;
    return cache;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
RowMatrixX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    RowMatrixX<Scalar> p = logits;
    for (Index r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return p;
}

template <typename Scalar>
Distribution<Scalar> softmax(const VectorX<Scalar>& logits) {
    return softmax(logits.transpose()).transpose();
}

/// Parameter gradients of sum_b <grad_logits(b), logits(b)>, i.e. grad_logits
/// already carries any batch-averaging factor.
template <typename Scalar>
NetworkParams<Scalar> backward(const Architecture& arch, const NetworkParams<Scalar>& params,
                               const ForwardCache<Scalar>& cache, const RowMatrixX<Scalar>& grad_logits) {
    if (cache.params != &params || cache.generation != params.generation)
        throw ContractError("backward: forward cache is stale or belongs to another network");
    if (cache.activations.size() != arch.layers.size() + 1)
        throw ContractError("backward: forward cache does not match architecture");
    if (grad_logits.rows() != cache.logits().rows() || grad_logits.cols() != cache.logits().cols())
        throw ShapeError("backward: grad_logits shape does not match logits");

    const auto shapes = arch.shapes();
    const Index n = cache.batch_size();
    auto grads = params.zeros_like();
    RowMatrixX<Scalar> grad = grad_logits;

    for (std::size_t l = arch.layers.size(); l-- > 0;) {
        const LayerSpec& spec = arch.layers[l];
        const Shape3& is = shapes[l];
        const Shape3& os = shapes[l + 1];
        const RowMatrixX<Scalar>& in = cache.activations[l];
        const bool need_input_grad = l > 0;
        RowMatrixX<Scalar> grad_in;
        switch (spec.kind) {
            case LayerKind::dense: {
                const auto w = detail::weight_matrix(params.layers[l].weight);
                grads.layers[l].weight.matrix().noalias() = grad.transpose() * in;
                grads.layers[l].bias.data = grad.colwise().sum().transpose();
                if (need_input_grad) grad_in.noalias() = grad * w;
                break;
            }
            case LayerKind::conv2d: {
                const MatrixX<Scalar>& cols = cache.patches[l];
                if (cols.rows() != n * os.plane())
                    throw ContractError("backward: missing conv patches (forward ran without cache)");
                const Index plane = os.plane();
                MatrixX<Scalar> grad_out(n * plane, os.channels);
                for (Index b = 0; b < n; ++b)
                    grad_out.middleRows(b * plane, plane).noalias() =
                        Eigen::Map<const RowMatrixX<Scalar>>(grad.row(b).data(), os.channels, plane).transpose();
                grads.layers[l].weight.matrix().noalias() = grad_out.transpose() * cols;
                grads.layers[l].bias.data = grad_out.colwise().sum().transpose();
                if (need_input_grad) {
                    const auto w = detail::weight_matrix(params.layers[l].weight);
                    MatrixX<Scalar> grad_cols;
                    grad_cols.noalias() = grad_out * w;
                    grad_in.resize(n, is.size());
                    detail::col2im(grad_cols, is, os, spec, grad_in);
                }
                break;
            }
            case LayerKind::maxpool: {
                const auto& argmax = cache.pool_argmax[l];
                if (argmax.size() != static_cast<std::size_t>(n * os.size()))
                    throw ContractError("backward: missing pooling indices (forward ran without cache)");
                if (need_input_grad) {
                    grad_in = RowMatrixX<Scalar>::Zero(n, is.size());
                    for (Index b = 0; b < n; ++b)
                        for (Index o = 0; o < os.size(); ++o)
                            grad_in(b, argmax[static_cast<std::size_t>(b * os.size() + o)]) += grad(b, o);
                }
                break;
            }
            case LayerKind::relu:
                if (need_input_grad) grad_in = (in.array() > Scalar(0)).select(grad, Scalar(0));
                break;
            case LayerKind::softmax:
                if (need_input_grad) grad_in = std::move(grad);
                break;
        }
        if (need_input_grad) grad = std::move(grad_in);
    }
    return grads;
}

/// Class probabilities for every row of `inputs`, evaluated in chunks.
template <typename Scalar>
RowMatrixX<Scalar> predict(const Architecture& arch, const NetworkParams<Scalar>& params,
                           const RowMatrixX<Scalar>& inputs, Index chunk = 512) {
    RowMatrixX<Scalar> probs(inputs.rows(), arch.classes());
    for (Index start = 0; start < inputs.rows(); start += chunk) {
        const Index len = std::min(chunk, inputs.rows() - start);
        const auto cache = forward(arch, params, RowMatrixX<Scalar>(inputs.middleRows(start, len)), false);
        probs.middleRows(start, len) = softmax(cache.logits());
    }
    return probs;
}

}  // namespace colearn
