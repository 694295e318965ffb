#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpd/rng.hpp"

namespace cpd::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { tanh = 0, relu = 1 };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + s + "' (expected tanh or relu)");
}

/// Dense feed-forward layout; activation applies to hidden layers only.
struct NetArch {
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::tanh;

    void validate() const {
        if (layer_sizes.size() < 2)
            throw std::invalid_argument("NetArch: need at least input and output sizes, got " +
                                        std::to_string(layer_sizes.size()));
        for (std::size_t i = 0; i < layer_sizes.size(); ++i)
            if (layer_sizes[i] == 0)
                throw std::invalid_argument("NetArch: layer " + std::to_string(i) + " has size 0");
    }

    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
            n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
        return n;
    }

    friend bool operator==(const NetArch&, const NetArch&) = default;
};

/// Flat parameters. Per layer: column-major weights (fan_out x fan_in), then biases.
struct ParamVector {
    NetArch arch;
    std::vector<double> values;
    /// Bumped by every optimizer step; forward caches remember it.
    std::uint64_t revision = 0;

    friend bool operator==(const ParamVector& a, const ParamVector& b) {
        return a.arch == b.arch && a.values == b.values;
    }
};

/// Offset of layer l's weight block inside ParamVector::values.
inline std::size_t layer_offset(const NetArch& arch, std::size_t layer) {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l)
        off += arch.layer_sizes[l] * arch.layer_sizes[l + 1] + arch.layer_sizes[l + 1];
    return off;
}

/// Glorot-uniform weights, zero biases.
inline ParamVector net_init(const NetArch& arch, std::uint64_t seed) {
    arch.validate();
    ParamVector p{arch, std::vector<double>(arch.param_count(), 0.0), 0};
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const auto in = arch.layer_sizes[l];
        const auto out = arch.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t k = 0; k < in * out; ++k) p.values[off + k] = rng.uniform(-limit, limit);
        off += in * out + out;
    }
    return p;
}

/// Activations of one forward pass (column per sample), enough for net_backward.
struct ForwardCache {
    std::vector<Matrix> activations;  // [0] = input, back() = output
    const double* owner = nullptr;
    std::uint64_t revision = 0;
    NetArch arch;
};

namespace detail {

inline void check_params(const ParamVector& p) {
    p.arch.validate();
    if (p.values.size() != p.arch.param_count())
        throw std::invalid_argument("ParamVector: " + std::to_string(p.values.size()) +
                                    " values for an architecture needing " +
                                    std::to_string(p.arch.param_count()));
}

inline void activate(Matrix& z, Activation a) {
    if (a == Activation::tanh)
        z = z.array().tanh().matrix();
    else
        z = z.array().max(0.0).matrix();
}

}  // namespace detail

/// Batched forward: input is (input_dim x batch). Pass a cache to enable backward.
inline Matrix net_forward(const ParamVector& params, const Matrix& input, ForwardCache* cache = nullptr) {
    detail::check_params(params);
    const auto& arch = params.arch;
    if (static_cast<std::size_t>(input.rows()) != arch.input_dim())
        throw std::invalid_argument("net_forward: input has " + std::to_string(input.rows()) +
                                    " rows, network expects " + std::to_string(arch.input_dim()));
    if (cache) {
        cache->activations.clear();
        cache->activations.reserve(arch.layer_sizes.size());
        cache->activations.push_back(input);
        cache->owner = params.values.data();
        cache->revision = params.revision;
        cache->arch = arch;
    }
    Matrix x = input;
    std::size_t off = 0;
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const auto in = static_cast<Eigen::Index>(arch.layer_sizes[l]);
        const auto out = static_cast<Eigen::Index>(arch.layer_sizes[l + 1]);
        Eigen::Map<const Matrix> w(params.values.data() + off, out, in);
        Eigen::Map<const Vector> b(params.values.data() + off + out * in, out);
        Matrix z = w * x;
        z.colwise() += b;
        if (l + 1 < arch.num_layers()) detail::activate(z, arch.activation);
        off += static_cast<std::size_t>(out * in + out);
        if (cache) cache->activations.push_back(z);
        x = std::move(z);
    }
    return x;
}

inline std::vector<double> net_forward(const ParamVector& params, std::span<const double> input) {
    Matrix in = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
    if (static_cast<std::size_t>(in.rows()) != params.arch.input_dim())
        throw std::invalid_argument("net_forward: input length " + std::to_string(input.size()) +
                                    " != " + std::to_string(params.arch.input_dim()));
    Matrix out = net_forward(params, in);
    return {out.data(), out.data() + out.size()};
}

/// Gradient of sum_over_batch(output . output_grad) with respect to every parameter.
/// Optionally also returns the gradient with respect to the input.
inline std::vector<double> net_backward(const ParamVector& params, const ForwardCache& cache,
                                        const Matrix& output_grad, Matrix* input_grad = nullptr) {
    detail::check_params(params);
    const auto& arch = params.arch;
    if (cache.activations.size() != arch.layer_sizes.size() || cache.arch != arch ||
        cache.owner != params.values.data() || cache.revision != params.revision)
        throw std::invalid_argument("net_backward: forward cache does not belong to these parameters");
    const auto batch = cache.activations.front().cols();
    if (static_cast<std::size_t>(output_grad.rows()) != arch.output_dim() || output_grad.cols() != batch)
        throw std::invalid_argument("net_backward: output_grad shape mismatch");

    std::vector<double> grad(params.values.size(), 0.0);
    Matrix delta = output_grad;
    for (std::size_t li = arch.num_layers(); li-- > 0;) {
        const auto in = static_cast<Eigen::Index>(arch.layer_sizes[li]);
        const auto out = static_cast<Eigen::Index>(arch.layer_sizes[li + 1]);
        const auto off = layer_offset(arch, li);
        if (li + 1 < arch.num_layers()) {
            const Matrix& a = cache.activations[li + 1];
            if (arch.activation == Activation::tanh)
                delta.array() *= 1.0 - a.array().square();
            else
                delta.array() *= (a.array() > 0.0).cast<double>();
        }
        const Matrix& x = cache.activations[li];
        Eigen::Map<Matrix> gw(grad.data() + off, out, in);
        Eigen::Map<Vector> gb(grad.data() + off + out * in, out);
        gw.noalias() = delta * x.transpose();
        gb = delta.rowwise().sum();
        if (li > 0 || input_grad) {
            Eigen::Map<const Matrix> w(params.values.data() + off, out, in);
            Matrix prev = w.transpose() * delta;
            delta = std::move(prev);
        }
    }
    if (input_grad) *input_grad = std::move(delta);
    return grad;
}

/// Gathers the listed columns of a sample matrix.
inline Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
    return out;
}

}  // namespace cpd::nn
