#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/gaussian.hpp"

namespace cpd::nn {

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;

    AdamState() = default;
    AdamState(std::size_t n, AdamConfig cfg)
        : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// Bias-corrected Adam on a flat parameter span.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad) {
    if (grad.size() != params.size() || state.first_moment.size() != params.size())
        throw std::invalid_argument("adam_step: length mismatch (params " + std::to_string(params.size()) +
                                    ", grad " + std::to_string(grad.size()) + ", state " +
                                    std::to_string(state.first_moment.size()) + ")");
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw std::domain_error("adam_step: non-finite gradient entry at index " + std::to_string(i));
    const auto& c = state.config;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        m = c.beta1 * m + (1.0 - c.beta1) * grad[i];
        v = c.beta2 * v + (1.0 - c.beta2) * grad[i] * grad[i];
        params[i] -= c.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
    }
}

inline void adam_step(AdamState& state, ParamVector& params, std::span<const double> grad) {
    adam_step(state, std::span<double>(params.values), grad);
    params.revision += 1;
}

inline AdamState make_adam(const PolicyParams& p, AdamConfig cfg = {}) {
    return AdamState(p.net.values.size() + p.log_std.size(), cfg);
}

/// Steps network weights and log_std together (one moment vector, net first),
/// then clamps log_std into [kLogStdMin, kLogStdMax].
inline void adam_step(AdamState& state, PolicyParams& p, std::span<const double> net_grad,
                      std::span<const double> log_std_grad = {}) {
    const auto n = p.net.values.size();
    const auto d = p.log_std.size();
    if (net_grad.size() != n || log_std_grad.size() != d)
        throw std::invalid_argument("adam_step: gradient does not match policy parameters");
    std::vector<double> flat(n + d);
    std::copy(p.net.values.begin(), p.net.values.end(), flat.begin());
    std::copy(p.log_std.begin(), p.log_std.end(), flat.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> g(n + d);
    std::copy(net_grad.begin(), net_grad.end(), g.begin());
    std::copy(log_std_grad.begin(), log_std_grad.end(), g.begin() + static_cast<std::ptrdiff_t>(n));
    adam_step(state, std::span<double>(flat), std::span<const double>(g));
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n), p.net.values.begin());
    for (std::size_t i = 0; i < d; ++i) p.log_std[i] = std::clamp(flat[n + i], kLogStdMin, kLogStdMax);
    p.net.revision += 1;
}

}  // namespace cpd::nn
