#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/adam.hpp"
#include "cpd/binary_io.hpp"
#include "cpd/env.hpp"
#include "cpd/gaussian.hpp"
#include "cpd/nn.hpp"
#include "cpd/ppo.hpp"
#include "cpd/rng.hpp"

namespace cpd::distill {

using nn::Matrix;
using nn::PolicyParams;

struct DemoStep {
    std::vector<double> observation;
    std::vector<double> action;

    friend bool operator==(const DemoStep&, const DemoStep&) = default;
};

struct DemoEpisode {
    std::vector<DemoStep> steps;
    double episodic_reward = 0.0;
    double z_rotation = 0.0;
    std::uint32_t source_object_id = 0;

    friend bool operator==(const DemoEpisode&, const DemoEpisode&) = default;
};

struct Demonstration {
    std::uint32_t expert_id = 0;
    std::uint32_t object_id = 0;
    std::vector<DemoEpisode> episodes;

    std::size_t count() const { return episodes.size(); }

    friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

enum class LossKind : std::uint8_t { MSE = 0, NLL = 1, KL = 2 };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::MSE: return "MSE";
        case LossKind::NLL: return "NLL";
        case LossKind::KL: return "KL";
    }
    return "?";
}

inline LossKind loss_from_string(const std::string& s) {
    if (s == "MSE") return LossKind::MSE;
    if (s == "NLL") return LossKind::NLL;
    if (s == "KL") return LossKind::KL;
    throw std::invalid_argument("unknown loss '" + s + "' (expected MSE, NLL or KL)");
}

/// Fixed expert standard deviation that turns a sampled action into a near-deterministic target.
inline constexpr double kExpertSigma = 1e-6;

struct DistillConfig {
    LossKind loss = LossKind::KL;
    std::uint32_t epochs = 20;
    std::uint32_t batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    double expert_sigma = kExpertSigma;

    void validate() const {
        if (!(expert_sigma > 0)) throw std::invalid_argument("DistillConfig: expert_sigma must be positive");
        if (batch_size == 0) throw std::invalid_argument("DistillConfig: batch_size must be positive");
        if (!(learning_rate > 0)) throw std::invalid_argument("DistillConfig: learning_rate must be positive");
    }

    friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

// ---------------------------------------------------------------------------
// Losses (per sample, summed over action dimensions)

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

/// ||mu - a*||^2, no averaging over dimensions.
inline double loss_mse(std::span<const double> student_mean, std::span<const double> expert_action) {
    require_same_dim(student_mean.size(), expert_action.size(), "loss_mse");
    double s = 0.0;
    for (std::size_t d = 0; d < student_mean.size(); ++d)
        s += (student_mean[d] - expert_action[d]) * (student_mean[d] - expert_action[d]);
    return s;
}

inline double loss_nll(const nn::GaussianHead& head, std::span<const double> expert_action) {
    return -nn::gaussian_log_prob(head, expert_action);
}

struct GaussianParams {
    std::vector<double> mu;
    std::vector<double> sigma;
};

inline GaussianParams expert_as_deterministic(std::span<const double> expert_action, double expert_sigma) {
    if (!(expert_sigma > 0)) throw std::invalid_argument("expert_as_deterministic: sigma must be positive");
    return {{expert_action.begin(), expert_action.end()}, std::vector<double>(expert_action.size(), expert_sigma)};
}

/// Per dimension: log(sigma*/sigma) + (sigma^2 + (mu - mu*)^2) / (2 sigma*^2) - 1/2,
/// i.e. KL(student || expert), summed over dimensions.
inline double loss_kl(const GaussianParams& student, const GaussianParams& expert) {
    require_same_dim(student.mu.size(), student.sigma.size(), "loss_kl");
    require_same_dim(student.mu.size(), expert.mu.size(), "loss_kl");
    require_same_dim(expert.mu.size(), expert.sigma.size(), "loss_kl");
    double s = 0.0;
    for (std::size_t d = 0; d < student.mu.size(); ++d) {
        const double sg = student.sigma[d];
        const double se = expert.sigma[d];
        if (!(sg > 0) || !(se > 0)) throw std::invalid_argument("loss_kl: standard deviations must be positive");
        const double dm = student.mu[d] - expert.mu[d];
        s += std::log(se / sg) + (sg * sg + dm * dm) / (2.0 * se * se) - 0.5;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Demonstrations

inline std::uint64_t demo_episode_seed(std::uint64_t seed, std::uint64_t episode) {
    return mix_seed({seed, episode, 0x656e76ULL});
}

inline std::uint64_t demo_action_seed(std::uint64_t seed, std::uint64_t episode) {
    return mix_seed({seed, episode, 0x616374ULL});
}

/// Rollouts of the stochastic expert: sampled actions, so the recorded pairs follow
/// the expert's own state-action distribution.
inline Demonstration sample_demonstrations(const ppo::ExpertArtifact& expert, const env::ObjectSpec& spec,
                                           std::uint32_t n_episodes, std::uint64_t seed) {
    if (expert.object_id != spec.object_id)
        throw std::invalid_argument("sample_demonstrations: expert trained on object " +
                                    std::to_string(expert.object_id) + ", spec is object " +
                                    std::to_string(spec.object_id));
    Demonstration demo;
    demo.expert_id = expert.object_id;
    demo.object_id = spec.object_id;
    demo.episodes.reserve(n_episodes);
    for (std::uint32_t j = 0; j < n_episodes; ++j) {
        auto state = env::env_reset(spec, demo_episode_seed(seed, j));
        Rng action_rng(demo_action_seed(seed, j));
        DemoEpisode ep;
        ep.source_object_id = spec.object_id;
        auto obs = env::observe(state);
        while (!state.done) {
            const auto head = nn::policy_head(expert.params, obs);
            auto action = nn::gaussian_sample(head, action_rng);
            const auto step = env::env_step(state, action);
            ep.episodic_reward += step.reward;
            ep.steps.push_back({std::move(obs), std::move(action)});
            obs = step.observation;
        }
        ep.z_rotation = state.pose.phi;
        demo.episodes.push_back(std::move(ep));
    }
    return demo;
}

// Demonstration file ("CPDD").

inline void write_episode(io::ByteWriter& w, const DemoEpisode& ep) {
    w.u32(static_cast<std::uint32_t>(ep.steps.size()));
    w.f64(ep.episodic_reward);
    w.f64(ep.z_rotation);
    for (const auto& s : ep.steps) {
        w.f64s(s.observation);
        w.f64s(s.action);
    }
}

inline DemoEpisode read_episode(io::ByteReader& r, std::size_t obs_dim, std::size_t act_dim,
                                std::uint32_t object_id) {
    DemoEpisode ep;
    ep.source_object_id = object_id;
    const auto n = r.u32();
    if (n == 0) throw io::FormatError("demonstration: empty episode");
    ep.episodic_reward = r.f64();
    ep.z_rotation = r.f64();
    ep.steps.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        DemoStep s;
        s.observation = r.f64s(obs_dim);
        s.action = r.f64s(act_dim);
        ep.steps.push_back(std::move(s));
    }
    return ep;
}

inline std::pair<std::size_t, std::size_t> demo_dims(const Demonstration& d) {
    if (d.episodes.empty() || d.episodes.front().steps.empty()) return {0, 0};
    const auto& s = d.episodes.front().steps.front();
    return {s.observation.size(), s.action.size()};
}

inline io::Bytes encode_demonstration(const Demonstration& d) {
    const auto [obs_dim, act_dim] = demo_dims(d);
    auto w = io::begin_record(io::kDemoMagic);
    w.u32(d.expert_id);
    w.u32(d.object_id);
    w.u32(static_cast<std::uint32_t>(d.episodes.size()));
    w.u32(static_cast<std::uint32_t>(obs_dim));
    w.u32(static_cast<std::uint32_t>(act_dim));
    for (const auto& ep : d.episodes) {
        for (const auto& s : ep.steps)
            if (s.observation.size() != obs_dim || s.action.size() != act_dim)
                throw std::invalid_argument("encode_demonstration: ragged step dimensions");
        write_episode(w, ep);
    }
    return io::finish_record(std::move(w));
}

inline Demonstration decode_demonstration(std::span<const std::uint8_t> data) {
    auto r = io::open_record(data, io::kDemoMagic);
    Demonstration d;
    d.expert_id = r.u32();
    d.object_id = r.u32();
    const auto n = r.u32();
    const auto obs_dim = r.u32();
    const auto act_dim = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) d.episodes.push_back(read_episode(r, obs_dim, act_dim, d.object_id));
    r.expect_end();
    return d;
}

inline void save_demonstration(const std::filesystem::path& p, const Demonstration& d) {
    io::write_file(p, encode_demonstration(d));
}

inline Demonstration load_demonstration(const std::filesystem::path& p) {
    return decode_demonstration(io::read_file(p));
}

// ---------------------------------------------------------------------------
// Training

/// (s*, a*) pairs as columns; episode boundaries are dropped.
struct PairSet {
    Matrix observations;
    Matrix actions;

    std::size_t size() const { return static_cast<std::size_t>(observations.cols()); }
};

inline PairSet flatten(std::span<const DemoEpisode* const> episodes) {
    std::size_t n = 0, obs_dim = 0, act_dim = 0;
    for (const auto* ep : episodes) {
        n += ep->steps.size();
        if (!ep->steps.empty()) {
            obs_dim = ep->steps.front().observation.size();
            act_dim = ep->steps.front().action.size();
        }
    }
    PairSet out{Matrix(static_cast<Eigen::Index>(obs_dim), static_cast<Eigen::Index>(n)),
                Matrix(static_cast<Eigen::Index>(act_dim), static_cast<Eigen::Index>(n))};
    Eigen::Index col = 0;
    for (const auto* ep : episodes)
        for (const auto& s : ep->steps) {
            if (s.observation.size() != obs_dim || s.action.size() != act_dim)
                throw std::invalid_argument("flatten: ragged demonstration dimensions");
            for (std::size_t i = 0; i < obs_dim; ++i) out.observations(static_cast<Eigen::Index>(i), col) = s.observation[i];
            for (std::size_t i = 0; i < act_dim; ++i) out.actions(static_cast<Eigen::Index>(i), col) = s.action[i];
            ++col;
        }
    return out;
}

inline PairSet flatten(std::span<const Demonstration> dataset) {
    std::vector<const DemoEpisode*> eps;
    for (const auto& d : dataset)
        for (const auto& e : d.episodes) eps.push_back(&e);
    return flatten(std::span<const DemoEpisode* const>(eps));
}

struct BatchLoss {
    double value = 0.0;  // mean over samples
    std::vector<double> net_grad;
    std::vector<double> log_std_grad;
};

/// Mean per-sample imitation loss over a batch and its gradient with respect to
/// the student's weights and log_std.
inline BatchLoss distill_loss(const PolicyParams& student, const Matrix& observations, const Matrix& actions,
                              LossKind kind, double expert_sigma, bool want_grad = true) {
    const auto batch = observations.cols();
    const auto dim = static_cast<Eigen::Index>(student.log_std.size());
    if (actions.rows() != dim || actions.cols() != batch)
        throw std::invalid_argument("distill_loss: action batch shape mismatch");
    const double inv_b = 1.0 / static_cast<double>(batch);
    nn::ForwardCache cache;
    const Matrix mu = nn::net_forward(student.net, observations, want_grad ? &cache : nullptr);
    const Matrix diff = mu - actions;

    BatchLoss out;
    Matrix g_mu(dim, batch);
    out.log_std_grad.assign(student.log_std.size(), 0.0);
    switch (kind) {
        case LossKind::MSE: {
            out.value = diff.squaredNorm() * inv_b;
            g_mu = 2.0 * inv_b * diff;
            break;
        }
        case LossKind::NLL: {
            for (Eigen::Index d = 0; d < dim; ++d) {
                const double ls = student.log_std[static_cast<std::size_t>(d)];
                const double inv_var = std::exp(-2.0 * ls);
                const double sq = diff.row(d).squaredNorm();
                out.value += (0.5 * sq * inv_var) * inv_b + ls + nn::kHalfLog2Pi;
                g_mu.row(d) = diff.row(d) * (inv_var * inv_b);
                out.log_std_grad[static_cast<std::size_t>(d)] = 1.0 - sq * inv_var * inv_b;
            }
            break;
        }
        case LossKind::KL: {
            const double se2 = expert_sigma * expert_sigma;
            for (Eigen::Index d = 0; d < dim; ++d) {
                const double ls = student.log_std[static_cast<std::size_t>(d)];
                const double var = std::exp(2.0 * ls);
                const double sq = diff.row(d).squaredNorm();
                out.value += std::log(expert_sigma) - ls + (var + sq * inv_b) / (2.0 * se2) - 0.5;
                g_mu.row(d) = diff.row(d) * (inv_b / se2);
                out.log_std_grad[static_cast<std::size_t>(d)] = -1.0 + var / se2;
            }
            break;
        }
    }
    if (want_grad) out.net_grad = nn::net_backward(student.net, cache, g_mu);
    return out;
}

struct DistillResult {
    std::vector<double> epoch_loss;  // mean per-sample loss per epoch
};

/// Minibatch Adam on shuffled pairs. The student is updated in place.
inline DistillResult distill_train(PolicyParams& student, const PairSet& data, const DistillConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("distill_train: empty dataset");
    if (static_cast<std::size_t>(data.observations.rows()) != student.net.arch.input_dim() ||
        static_cast<std::size_t>(data.actions.rows()) != student.net.arch.output_dim())
        throw std::invalid_argument("distill_train: student dimensions do not match the demonstrations");
    nn::AdamConfig acfg;
    acfg.learning_rate = cfg.learning_rate;
    auto opt = nn::make_adam(student, acfg);
    Rng rng(cfg.seed);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    DistillResult out;
    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ppo::shuffle_indices(idx, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const auto end = std::min(idx.size(), start + cfg.batch_size);
            const auto cols = std::span(idx).subspan(start, end - start);
            const auto obs = nn::gather_columns(data.observations, cols);
            const auto act = nn::gather_columns(data.actions, cols);
            const auto l = distill_loss(student, obs, act, cfg.loss, cfg.expert_sigma);
            if (!std::isfinite(l.value))
                throw std::runtime_error("distill_train: non-finite " + to_string(cfg.loss) + " loss at epoch " +
                                         std::to_string(epoch));
            nn::adam_step(opt, student, l.net_grad, l.log_std_grad);
            total += l.value * static_cast<double>(cols.size());
        }
        out.epoch_loss.push_back(total / static_cast<double>(idx.size()));
    }
    return out;
}

inline DistillResult distill_train(PolicyParams& student, std::span<const Demonstration> dataset,
                                   const DistillConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("distill_train: empty dataset");
    return distill_train(student, flatten(dataset), cfg);
}

/// Loss scaled by 2 sigma*^2 for logging, so KL values are readable.
inline double display_loss(double raw, const DistillConfig& cfg) {
    return cfg.loss == LossKind::KL ? raw * 2.0 * cfg.expert_sigma * cfg.expert_sigma : raw;
}

}  // namespace cpd::distill
