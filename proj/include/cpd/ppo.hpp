#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/adam.hpp"
#include "cpd/binary_io.hpp"
#include "cpd/checkpoint.hpp"
#include "cpd/curves.hpp"
#include "cpd/env.hpp"
#include "cpd/gaussian.hpp"
#include "cpd/nn.hpp"
#include "cpd/rng.hpp"

namespace cpd::ppo {

using nn::Matrix;
using nn::PolicyParams;

struct TrainConfig {
    std::uint64_t total_steps = 100000;
    std::uint32_t n_envs = 5;
    /// Transitions gathered per update, summed over all envs.
    std::uint32_t n_steps_per_update = 2048;
    std::uint32_t epochs = 10;
    std::uint32_t minibatch_size = 64;
    double clip_epsilon = 0.2;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double value_coef = 0.5;
    double entropy_coef = 0.0;
    double learning_rate = 3e-4;
    /// Rewards are multiplied by this before GAE and value regression.
    double reward_scale = 1e-3;
    std::uint32_t eval_every_episodes = 100;
    std::uint32_t eval_episodes = 10;
    std::vector<std::size_t> hidden_sizes{64, 64};
    nn::Activation activation = nn::Activation::tanh;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
        if (total_steps == 0 || n_envs == 0 || n_steps_per_update == 0 || epochs == 0 || minibatch_size == 0 ||
            eval_every_episodes == 0 || eval_episodes == 0)
            fail("integer settings must be positive");
        if (!(clip_epsilon > 0 && clip_epsilon < 1)) fail("clip_epsilon must lie in (0, 1)");
        if (!(gamma > 0 && gamma <= 1)) fail("gamma must lie in (0, 1]");
        if (!(gae_lambda > 0 && gae_lambda <= 1)) fail("gae_lambda must lie in (0, 1]");
        if (!(value_coef > 0) || !(entropy_coef >= 0) || !(learning_rate > 0) || !(reward_scale > 0))
            fail("coefficients must be positive");
    }

    std::uint32_t steps_per_env() const { return std::max<std::uint32_t>(1, n_steps_per_update / n_envs); }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nn::NetArch actor_arch(std::size_t obs_dim, std::size_t act_dim, const TrainConfig& cfg) {
    nn::NetArch a{{obs_dim}, cfg.activation};
    for (auto h : cfg.hidden_sizes) a.layer_sizes.push_back(h);
    a.layer_sizes.push_back(act_dim);
    return a;
}

inline nn::NetArch critic_arch(std::size_t obs_dim, const TrainConfig& cfg) { return actor_arch(obs_dim, 1, cfg); }

// ---------------------------------------------------------------------------
// Rollouts

/// One environment plus its private random stream (action noise and reset seeds).
struct EnvSlot {
    env::EnvState state;
    Rng rng;
    std::vector<double> observation;
    double episode_reward = 0.0;
};

inline EnvSlot make_slot(const env::ObjectSpec& spec, std::uint64_t seed) {
    EnvSlot s;
    s.rng = Rng(seed);
    s.state = env::env_reset(spec, s.rng.next_u64());
    s.observation = env::observe(s.state);
    return s;
}

struct EpisodeStats {
    double reward = 0.0;
    double z_rotation = 0.0;
};

/// Time-major records: index t * n_envs + e.
struct RolloutBuffer {
    std::size_t n_envs = 0;
    std::size_t n_steps = 0;
    Matrix observations;  // obs_dim x (n_envs * n_steps)
    Matrix actions;       // act_dim x (n_envs * n_steps)
    std::vector<double> log_probs;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<std::uint8_t> dones;
    std::vector<double> bootstrap;  // value of the observation after the last step, per env
    std::vector<EpisodeStats> finished;
    std::vector<double> advantages;
    std::vector<double> returns;

    std::size_t size() const { return log_probs.size(); }
};

inline Matrix stack_observations(const std::vector<EnvSlot>& slots) {
    Matrix m(static_cast<Eigen::Index>(slots.front().observation.size()), static_cast<Eigen::Index>(slots.size()));
    for (std::size_t e = 0; e < slots.size(); ++e)
        for (std::size_t i = 0; i < slots[e].observation.size(); ++i)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e)) = slots[e].observation[i];
    return m;
}

/// Advances every env n_steps with sampled actions, auto-resetting finished episodes.
inline RolloutBuffer collect_rollouts(const PolicyParams& actor, const PolicyParams& critic,
                                      std::vector<EnvSlot>& slots, std::size_t n_steps) {
    if (slots.empty()) throw std::invalid_argument("collect_rollouts: no environments");
    const auto obs_dim = slots.front().observation.size();
    const auto act_dim = env::kActionDim;
    if (actor.net.arch.input_dim() != obs_dim || actor.net.arch.output_dim() != act_dim ||
        actor.log_std.size() != act_dim || critic.net.arch.input_dim() != obs_dim ||
        critic.net.arch.output_dim() != 1)
        throw std::invalid_argument("collect_rollouts: actor/critic dimensions do not match the environment");

    RolloutBuffer buf;
    buf.n_envs = slots.size();
    buf.n_steps = n_steps;
    const auto total = static_cast<Eigen::Index>(buf.n_envs * n_steps);
    buf.observations.resize(static_cast<Eigen::Index>(obs_dim), total);
    buf.actions.resize(static_cast<Eigen::Index>(act_dim), total);
    buf.log_probs.reserve(static_cast<std::size_t>(total));
    buf.rewards.reserve(static_cast<std::size_t>(total));
    buf.values.reserve(static_cast<std::size_t>(total));
    buf.dones.reserve(static_cast<std::size_t>(total));

    nn::GaussianHead head{std::vector<double>(act_dim), actor.log_std};
    for (std::size_t t = 0; t < n_steps; ++t) {
        const Matrix obs = stack_observations(slots);
        const Matrix mu = nn::net_forward(actor.net, obs);
        const Matrix v = nn::net_forward(critic.net, obs);
        for (std::size_t e = 0; e < slots.size(); ++e) {
            auto& slot = slots[e];
            const auto col = static_cast<Eigen::Index>(t * slots.size() + e);
            for (std::size_t d = 0; d < act_dim; ++d) head.mean[d] = mu(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(e));
            const auto action = nn::gaussian_sample(head, slot.rng);
            buf.observations.col(col) = obs.col(static_cast<Eigen::Index>(e));
            for (std::size_t d = 0; d < act_dim; ++d) buf.actions(static_cast<Eigen::Index>(d), col) = action[d];
            buf.log_probs.push_back(nn::gaussian_log_prob(head, action));
            buf.values.push_back(v(0, static_cast<Eigen::Index>(e)));
            const auto step = env::env_step(slot.state, action);
            buf.rewards.push_back(step.reward);
            buf.dones.push_back(step.done ? 1 : 0);
            slot.episode_reward += step.reward;
            if (step.done) {
                buf.finished.push_back({slot.episode_reward, slot.state.pose.phi});
                slot.episode_reward = 0.0;
                slot.state = env::env_reset(slot.state.spec, slot.rng.next_u64());
                slot.observation = env::observe(slot.state);
            } else {
                slot.observation = step.observation;
            }
        }
    }
    const Matrix last = nn::net_forward(critic.net, stack_observations(slots));
    for (std::size_t e = 0; e < slots.size(); ++e) buf.bootstrap.push_back(last(0, static_cast<Eigen::Index>(e)));
    return buf;
}

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t;  A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
    const auto n = rewards.size();
    if (values.size() != n || dones.size() != n) throw std::invalid_argument("compute_gae: length mismatch");
    GaeResult out{std::vector<double>(n), std::vector<double>(n)};
    double next_adv = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double next_value = (i + 1 < n) ? values[i + 1] : bootstrap;
        const double live = dones[i] ? 0.0 : 1.0;
        const double delta = rewards[i] + gamma * next_value * live - values[i];
        next_adv = delta + gamma * lambda * live * next_adv;
        out.advantages[i] = next_adv;
        out.returns[i] = next_adv + values[i];
    }
    return out;
}

/// Per-env GAE over the time-major buffer, with rewards scaled by reward_scale.
inline void finalize_rollouts(RolloutBuffer& buf, const TrainConfig& cfg) {
    buf.advantages.assign(buf.size(), 0.0);
    buf.returns.assign(buf.size(), 0.0);
    std::vector<double> r(buf.n_steps), v(buf.n_steps);
    std::vector<std::uint8_t> d(buf.n_steps);
    for (std::size_t e = 0; e < buf.n_envs; ++e) {
        for (std::size_t t = 0; t < buf.n_steps; ++t) {
            const auto i = t * buf.n_envs + e;
            r[t] = buf.rewards[i] * cfg.reward_scale;
            v[t] = buf.values[i];
            d[t] = buf.dones[i];
        }
        const auto g = compute_gae(r, v, d, buf.bootstrap[e], cfg.gamma, cfg.gae_lambda);
        for (std::size_t t = 0; t < buf.n_steps; ++t) {
            buf.advantages[t * buf.n_envs + e] = g.advantages[t];
            buf.returns[t * buf.n_envs + e] = g.returns[t];
        }
    }
}

// ---------------------------------------------------------------------------
// Loss

struct Minibatch {
    Matrix observations;
    Matrix actions;
    std::vector<double> old_log_probs;
    std::vector<double> advantages;
    std::vector<double> returns;
};

struct LossTerms {
    double total = 0.0;
    double policy = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
};

struct Gradients {
    std::vector<double> actor_net;
    std::vector<double> log_std;
    std::vector<double> critic_net;
};

/// Minimized objective: -mean(min(r A, clip(r) A)) + value_coef mean((V - R)^2) - entropy_coef H.
inline LossTerms ppo_loss(const PolicyParams& actor, const PolicyParams& critic, const Minibatch& mb,
                          const TrainConfig& cfg, Gradients* grads = nullptr) {
    const auto batch = mb.observations.cols();
    const auto act_dim = static_cast<Eigen::Index>(actor.log_std.size());
    const double inv_b = 1.0 / static_cast<double>(batch);
    nn::ForwardCache actor_cache, critic_cache;
    const Matrix mu = nn::net_forward(actor.net, mb.observations, grads ? &actor_cache : nullptr);
    const Matrix v = nn::net_forward(critic.net, mb.observations, grads ? &critic_cache : nullptr);

    std::vector<double> sigma(actor.log_std.size());
    double log_std_sum = 0.0;
    for (std::size_t d = 0; d < sigma.size(); ++d) {
        sigma[d] = std::exp(actor.log_std[d]);
        log_std_sum += actor.log_std[d];
    }

    LossTerms out;
    Matrix g_mu = Matrix::Zero(act_dim, batch);
    std::vector<double> g_log_std(actor.log_std.size(), 0.0);
    Matrix g_v(1, batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
        double lp = 0.0;
        for (Eigen::Index d = 0; d < act_dim; ++d) {
            const double z = (mb.actions(d, i) - mu(d, i)) / sigma[static_cast<std::size_t>(d)];
            lp += -0.5 * z * z;
        }
        lp += -log_std_sum - static_cast<double>(act_dim) * nn::kHalfLog2Pi;
        const auto si = static_cast<std::size_t>(i);
        const double ratio = std::exp(lp - mb.old_log_probs[si]);
        const double adv = mb.advantages[si];
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        const double unclipped_term = ratio * adv;
        const double clipped_term = clipped * adv;
        out.policy -= std::min(unclipped_term, clipped_term) * inv_b;
        out.mean_ratio += ratio * inv_b;
        if (std::abs(ratio - 1.0) > cfg.clip_epsilon) out.clip_fraction += inv_b;
        // The gradient flows only through the active, unclipped branch.
        const bool active = unclipped_term <= clipped_term;
        if (active) {
            const double g_lp = -adv * ratio * inv_b;
            for (Eigen::Index d = 0; d < act_dim; ++d) {
                const auto sd = static_cast<std::size_t>(d);
                const double diff = mb.actions(d, i) - mu(d, i);
                g_mu(d, i) = g_lp * diff / (sigma[sd] * sigma[sd]);
                const double z = diff / sigma[sd];
                g_log_std[sd] += g_lp * (z * z - 1.0);
            }
        }
        const double err = v(0, i) - mb.returns[si];
        out.value += err * err * inv_b;
        g_v(0, i) = 2.0 * cfg.value_coef * err * inv_b;
    }
    out.entropy = nn::gaussian_entropy(actor.log_std);
    out.total = out.policy + cfg.value_coef * out.value - cfg.entropy_coef * out.entropy;
    if (grads) {
        for (auto& g : g_log_std) g -= cfg.entropy_coef;
        grads->actor_net = nn::net_backward(actor.net, actor_cache, g_mu);
        grads->log_std = std::move(g_log_std);
        grads->critic_net = nn::net_backward(critic.net, critic_cache, g_v);
    }
    return out;
}

inline Minibatch make_minibatch(const RolloutBuffer& buf, std::span<const std::size_t> idx,
                                std::span<const double> advantages) {
    Minibatch mb;
    mb.observations = nn::gather_columns(buf.observations, idx);
    mb.actions = nn::gather_columns(buf.actions, idx);
    for (auto i : idx) {
        mb.old_log_probs.push_back(buf.log_probs[i]);
        mb.advantages.push_back(advantages[i]);
        mb.returns.push_back(buf.returns[i]);
    }
    return mb;
}

struct UpdateStats {
    LossTerms mean_terms;
    std::size_t minibatches = 0;
    bool aborted = false;
    std::string diagnostic;
};

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
}

/// Clipped-surrogate epochs over shuffled minibatches. On a non-finite loss or
/// gradient the parameters and optimizer states are restored.
inline UpdateStats ppo_update(PolicyParams& actor, PolicyParams& critic, nn::AdamState& actor_opt,
                              nn::AdamState& critic_opt, const RolloutBuffer& buf, const TrainConfig& cfg, Rng& rng) {
    if (buf.advantages.size() != buf.size() || buf.returns.size() != buf.size())
        throw std::invalid_argument("ppo_update: buffer has no advantages; call finalize_rollouts first");
    const auto n = buf.size();
    std::vector<double> adv = buf.advantages;
    const double m = mean(adv);
    const double s = std::max(population_std(adv), 1e-8);
    for (auto& a : adv) a = (a - m) / s;

    const auto actor0 = actor;
    const auto critic0 = critic;
    const auto actor_opt0 = actor_opt;
    const auto critic_opt0 = critic_opt;
    UpdateStats stats;
    auto abort = [&](std::string why) {
        actor = actor0;
        critic = critic0;
        actor_opt = actor_opt0;
        critic_opt = critic_opt0;
        stats.aborted = true;
        stats.diagnostic = std::move(why);
        return stats;
    };

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t mbs = cfg.minibatch_size;
    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(idx, rng);
        for (std::size_t start = 0; start < n; start += mbs) {
            const auto end = std::min(n, start + mbs);
            const auto mb = make_minibatch(buf, std::span(idx).subspan(start, end - start), adv);
            Gradients g;
            const auto terms = ppo_loss(actor, critic, mb, cfg, &g);
            if (!std::isfinite(terms.total))
                return abort("non-finite PPO loss at epoch " + std::to_string(epoch));
            try {
                nn::adam_step(actor_opt, actor, g.actor_net, g.log_std);
                nn::adam_step(critic_opt, critic.net, g.critic_net);
            } catch (const std::domain_error& e) {
                return abort(e.what());
            }
            stats.minibatches += 1;
            stats.mean_terms.total += terms.total;
            stats.mean_terms.policy += terms.policy;
            stats.mean_terms.value += terms.value;
            stats.mean_terms.entropy += terms.entropy;
            stats.mean_terms.mean_ratio += terms.mean_ratio;
            stats.mean_terms.clip_fraction += terms.clip_fraction;
        }
    }
    if (stats.minibatches > 0) {
        const double k = 1.0 / static_cast<double>(stats.minibatches);
        auto& t = stats.mean_terms;
        t.total *= k;
        t.policy *= k;
        t.value *= k;
        t.entropy *= k;
        t.mean_ratio *= k;
        t.clip_fraction *= k;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodeEval {
    double z_rotation = 0.0;
    double reward = 0.0;
    std::uint32_t steps = 0;
    bool dropped = false;
};

struct EvalResult {
    double mean_z_rotation = 0.0;
    double mean_reward = 0.0;
    std::vector<EpisodeEval> episodes;
};

/// Deterministic rollouts with the mean action; episode i uses seed eval_seed + i.
inline EvalResult evaluate_policy(const PolicyParams& actor, const env::ObjectSpec& spec, std::uint32_t n_episodes,
                                  std::uint64_t eval_seed) {
    if (n_episodes == 0) throw std::invalid_argument("evaluate_policy: need at least one episode");
    EvalResult out;
    std::vector<env::EnvState> envs;
    envs.reserve(n_episodes);
    for (std::uint32_t i = 0; i < n_episodes; ++i) envs.push_back(env::env_reset(spec, eval_seed + i));
    out.episodes.resize(n_episodes);
    const auto obs_dim = static_cast<Eigen::Index>(spec.observation_dim());
    // Episodes advance in lockstep so the network runs batched; each env keeps its own stream.
    std::vector<std::size_t> live(n_episodes);
    std::iota(live.begin(), live.end(), std::size_t{0});
    while (!live.empty()) {
        Matrix obs(obs_dim, static_cast<Eigen::Index>(live.size()));
        for (std::size_t j = 0; j < live.size(); ++j) {
            const auto o = env::observe(envs[live[j]]);
            for (Eigen::Index r = 0; r < obs_dim; ++r) obs(r, static_cast<Eigen::Index>(j)) = o[static_cast<std::size_t>(r)];
        }
        const Matrix mu = nn::net_forward(actor.net, obs);
        std::vector<std::size_t> still;
        for (std::size_t j = 0; j < live.size(); ++j) {
            auto& e = envs[live[j]];
            std::vector<double> a(mu.col(static_cast<Eigen::Index>(j)).data(),
                                  mu.col(static_cast<Eigen::Index>(j)).data() + mu.rows());
            const auto step = env::env_step(e, a);
            out.episodes[live[j]].reward += step.reward;
            if (step.done) {
                auto& rec = out.episodes[live[j]];
                rec.z_rotation = e.pose.phi;  // initial phi is always 0
                rec.steps = e.step_index;
                rec.dropped = e.dropped;
            } else {
                still.push_back(live[j]);
            }
        }
        live = std::move(still);
    }
    for (const auto& ep : out.episodes) {
        out.mean_z_rotation += ep.z_rotation;
        out.mean_reward += ep.reward;
    }
    out.mean_z_rotation /= n_episodes;
    out.mean_reward /= n_episodes;
    return out;
}

// ---------------------------------------------------------------------------
// Expert training

struct EvalPoint {
    std::uint64_t episode = 0;  // training episodes completed when evaluated
    double score = 0.0;         // mean z-rotation, degrees
    double reward = 0.0;
    double stability = 0.0;     // -std of smoothed reward tail; -inf when undefined
};

struct ExpertArtifact {
    PolicyParams params;
    std::uint32_t object_id = 0;
    double best_eval_score = 0.0;
    double initial_eval_score = 0.0;
    std::uint64_t eval_seed = 0;
    std::uint32_t selected = 0;  // index into eval_history
    bool diverged = false;
    std::vector<EpisodeStats> training_curve;
    std::vector<EvalPoint> eval_history;
    TrainConfig config;
};

inline constexpr double kSelectionBand = 0.05;
inline constexpr double kStabilityTail = 0.2;

/// -std of the smoothed reward curve over its last 20%.
inline double curve_stability(std::span<const EpisodeStats> curve) {
    std::vector<double> r;
    r.reserve(curve.size());
    for (const auto& c : curve) r.push_back(c.reward);
    const auto smooth = moving_average(r);
    const auto tail = static_cast<std::size_t>(std::ceil(kStabilityTail * static_cast<double>(smooth.size())));
    if (tail < 2) return -std::numeric_limits<double>::infinity();
    return -population_std(std::span(smooth).last(tail));
}

/// Highest score wins unless another checkpoint within 5% of it comes from a
/// more stable stretch of training.
inline std::size_t select_checkpoint(std::span<const EvalPoint> history) {
    if (history.empty()) throw std::invalid_argument("select_checkpoint: empty history");
    double best = history.front().score;
    for (const auto& h : history) best = std::max(best, h.score);
    const double floor = best - kSelectionBand * std::abs(best);
    std::size_t pick = history.size();
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        if (h.score < floor) continue;
        if (pick == history.size() || h.stability > history[pick].stability ||
            (h.stability == history[pick].stability && h.score > history[pick].score))
            pick = i;
    }
    return pick;
}

inline ExpertArtifact train_expert(const env::ObjectSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    spec.validate();
    const auto obs_dim = spec.observation_dim();
    PolicyParams actor = nn::make_policy(actor_arch(obs_dim, env::kActionDim, cfg), mix_seed({cfg.seed, 1}));
    PolicyParams critic = nn::make_value_net(critic_arch(obs_dim, cfg), mix_seed({cfg.seed, 2}));
    nn::AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    auto actor_opt = nn::make_adam(actor, adam_cfg);
    auto critic_opt = nn::make_adam(critic, adam_cfg);
    Rng update_rng(mix_seed({cfg.seed, 4}));

    ExpertArtifact art;
    art.object_id = spec.object_id;
    art.config = cfg;
    art.eval_seed = mix_seed({cfg.seed, 3}) >> 16;  // headroom for eval_seed + i

    std::vector<PolicyParams> snapshots;
    auto checkpoint = [&](std::uint64_t episode) {
        const auto e = evaluate_policy(actor, spec, cfg.eval_episodes, art.eval_seed);
        art.eval_history.push_back({episode, e.mean_z_rotation, e.mean_reward, curve_stability(art.training_curve)});
        snapshots.push_back(actor);
    };
    checkpoint(0);
    art.initial_eval_score = art.eval_history.front().score;

    const auto per_env = cfg.steps_per_env();
    const std::uint64_t window = static_cast<std::uint64_t>(per_env) * cfg.n_envs;
    const auto n_updates = cfg.total_steps / window;
    std::vector<EnvSlot> slots;
    for (std::uint32_t e = 0; e < cfg.n_envs; ++e) slots.push_back(make_slot(spec, mix_seed({cfg.seed, 5, e})));

    std::uint64_t next_eval = cfg.eval_every_episodes;
    int consecutive_failures = 0;
    for (std::uint64_t u = 0; u < n_updates; ++u) {
        auto buf = collect_rollouts(actor, critic, slots, per_env);
        art.training_curve.insert(art.training_curve.end(), buf.finished.begin(), buf.finished.end());
        finalize_rollouts(buf, cfg);
        const auto stats = ppo_update(actor, critic, actor_opt, critic_opt, buf, cfg, update_rng);
        if (stats.aborted) {
            if (++consecutive_failures >= 2) {
                art.diverged = true;
                break;
            }
        } else {
            consecutive_failures = 0;
        }
        if (art.training_curve.size() >= next_eval) {
            checkpoint(art.training_curve.size());
            while (next_eval <= art.training_curve.size()) next_eval += cfg.eval_every_episodes;
        }
    }
    if (n_updates > 0 && art.eval_history.back().episode != art.training_curve.size())
        checkpoint(art.training_curve.size());

    art.selected = static_cast<std::uint32_t>(select_checkpoint(art.eval_history));
    art.params = snapshots[art.selected];
    art.best_eval_score = art.eval_history[art.selected].score;
    return art;
}

// ---------------------------------------------------------------------------
// Persistence ("CPDE": checkpoint record, id, scores, config text, curve CSV)

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string train_config_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "total_steps = " << c.total_steps << "\n"
       << "n_envs = " << c.n_envs << "\n"
       << "n_steps_per_update = " << c.n_steps_per_update << "\n"
       << "epochs = " << c.epochs << "\n"
       << "minibatch_size = " << c.minibatch_size << "\n"
       << "clip_epsilon = " << format_double(c.clip_epsilon) << "\n"
       << "gamma = " << format_double(c.gamma) << "\n"
       << "gae_lambda = " << format_double(c.gae_lambda) << "\n"
       << "value_coef = " << format_double(c.value_coef) << "\n"
       << "entropy_coef = " << format_double(c.entropy_coef) << "\n"
       << "learning_rate = " << format_double(c.learning_rate) << "\n"
       << "reward_scale = " << format_double(c.reward_scale) << "\n"
       << "eval_every_episodes = " << c.eval_every_episodes << "\n"
       << "eval_episodes = " << c.eval_episodes << "\n"
       << "hidden_sizes = ";
    for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) os << (i ? ", " : "") << c.hidden_sizes[i];
    os << "\nactivation = " << nn::to_string(c.activation) << "\n"
       << "seed = " << c.seed << "\n";
    return os.str();
}

inline TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const auto key = trim(line.substr(0, eq));
        const auto val = trim(line.substr(eq + 1));
        if (key == "total_steps") c.total_steps = std::stoull(val);
        else if (key == "n_envs") c.n_envs = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "n_steps_per_update") c.n_steps_per_update = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "epochs") c.epochs = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "minibatch_size") c.minibatch_size = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "clip_epsilon") c.clip_epsilon = std::stod(val);
        else if (key == "gamma") c.gamma = std::stod(val);
        else if (key == "gae_lambda") c.gae_lambda = std::stod(val);
        else if (key == "value_coef") c.value_coef = std::stod(val);
        else if (key == "entropy_coef") c.entropy_coef = std::stod(val);
        else if (key == "learning_rate") c.learning_rate = std::stod(val);
        else if (key == "reward_scale") c.reward_scale = std::stod(val);
        else if (key == "eval_every_episodes") c.eval_every_episodes = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "eval_episodes") c.eval_episodes = static_cast<std::uint32_t>(std::stoul(val));
        else if (key == "activation") c.activation = nn::activation_from_string(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "hidden_sizes") {
            c.hidden_sizes.clear();
            std::istringstream hs(val);
            std::string item;
            while (std::getline(hs, item, ','))
                if (!trim(item).empty()) c.hidden_sizes.push_back(std::stoul(trim(item)));
        } else
            throw io::FormatError("unknown training config key '" + key + "'");
    }
    return c;
}

inline std::string curve_csv(std::span<const EpisodeStats> curve) {
    std::ostringstream os;
    os << "episode,reward,z_rotation\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
        os << i << "," << format_double(curve[i].reward) << "," << format_double(curve[i].z_rotation) << "\n";
    return os.str();
}

inline std::vector<EpisodeStats> parse_curve_csv(const std::string& text) {
    std::vector<EpisodeStats> out;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    if (line != "episode,reward,z_rotation") throw io::FormatError("training curve: bad header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) throw io::FormatError("training curve: bad row");
        out.push_back({std::stod(line.substr(a + 1, b - a - 1)), std::stod(line.substr(b + 1))});
    }
    return out;
}

inline io::Bytes encode_expert(const ExpertArtifact& a) {
    auto w = io::begin_record(io::kExpertMagic);
    w.blob(nn::encode_checkpoint(a.params));
    w.u32(a.object_id);
    w.f64(a.best_eval_score);
    w.f64(a.initial_eval_score);
    w.u64(a.eval_seed);
    w.u32(a.selected);
    w.u8(a.diverged ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(a.eval_history.size()));
    for (const auto& h : a.eval_history) {
        w.u64(h.episode);
        w.f64(h.score);
        w.f64(h.reward);
        w.f64(h.stability);
    }
    w.str(train_config_text(a.config));
    w.str(curve_csv(a.training_curve));
    return io::finish_record(std::move(w));
}

inline ExpertArtifact decode_expert(std::span<const std::uint8_t> data) {
    auto r = io::open_record(data, io::kExpertMagic);
    ExpertArtifact a;
    a.params = nn::decode_checkpoint(r.blob());
    a.object_id = r.u32();
    a.best_eval_score = r.f64();
    a.initial_eval_score = r.f64();
    a.eval_seed = r.u64();
    a.selected = r.u32();
    a.diverged = r.u8() != 0;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        EvalPoint h;
        h.episode = r.u64();
        h.score = r.f64();
        h.reward = r.f64();
        h.stability = r.f64();
        a.eval_history.push_back(h);
    }
    if (a.selected >= a.eval_history.size()) throw io::FormatError("expert: selected checkpoint out of range");
    try {
        a.config = parse_train_config_text(r.str());
    } catch (const std::logic_error& e) {
        throw io::FormatError(std::string("expert: bad config block: ") + e.what());
    }
    a.training_curve = parse_curve_csv(r.str());
    r.expect_end();
    return a;
}

inline void save_expert(const std::filesystem::path& path, const ExpertArtifact& a) {
    io::write_file(path, encode_expert(a));
}

inline ExpertArtifact load_expert(const std::filesystem::path& path) { return decode_expert(io::read_file(path)); }

}  // namespace cpd::ppo
