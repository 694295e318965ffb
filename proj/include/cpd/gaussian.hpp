#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpd/nn.hpp"
#include "cpd/rng.hpp"

namespace cpd::nn {

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;
inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

/// Diagonal Gaussian with state-independent log standard deviations.
struct GaussianHead {
    std::vector<double> mean;
    std::vector<double> log_std;
};

inline void check_dims(const GaussianHead& head, std::size_t action_dim) {
    if (head.mean.size() != head.log_std.size() || head.mean.size() != action_dim)
        throw std::invalid_argument("GaussianHead: dimension mismatch (mean " +
                                    std::to_string(head.mean.size()) + ", log_std " +
                                    std::to_string(head.log_std.size()) + ", action " +
                                    std::to_string(action_dim) + ")");
}

inline double gaussian_log_prob(const GaussianHead& head, std::span<const double> action) {
    check_dims(head, action.size());
    double lp = 0.0;
    for (std::size_t d = 0; d < action.size(); ++d) {
        const double z = (action[d] - head.mean[d]) / std::exp(head.log_std[d]);
        lp += -0.5 * z * z - head.log_std[d] - kHalfLog2Pi;
    }
    return lp;
}

inline std::vector<double> gaussian_sample(const GaussianHead& head, Rng& rng) {
    check_dims(head, head.mean.size());
    std::vector<double> a(head.mean.size());
    for (std::size_t d = 0; d < a.size(); ++d) a[d] = head.mean[d] + std::exp(head.log_std[d]) * rng.normal();
    return a;
}

inline double gaussian_entropy(std::span<const double> log_std) {
    double h = 0.0;
    for (double ls : log_std) h += 0.5 + kHalfLog2Pi + ls;
    return h;
}

/// Network parameters plus (for policies) the learnable log standard deviations.
/// Value networks carry an empty log_std.
struct PolicyParams {
    ParamVector net;
    std::vector<double> log_std;

    bool has_head() const { return !log_std.empty(); }

    friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
        return a.net == b.net && a.log_std == b.log_std;
    }
};

inline PolicyParams make_policy(const NetArch& arch, std::uint64_t seed, double initial_log_std = 0.0) {
    return {net_init(arch, seed), std::vector<double>(arch.output_dim(), initial_log_std)};
}

inline PolicyParams make_value_net(const NetArch& arch, std::uint64_t seed) {
    return {net_init(arch, seed), {}};
}

inline GaussianHead policy_head(const PolicyParams& policy, std::span<const double> observation) {
    return {net_forward(policy.net, observation), policy.log_std};
}

}  // namespace cpd::nn
