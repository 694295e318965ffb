#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/binary_io.hpp"
#include "cpd/distill.hpp"
#include "cpd/env.hpp"
#include "cpd/ppo.hpp"
#include "cpd/rng.hpp"

namespace cpd::replay {

using distill::DemoEpisode;
using distill::Demonstration;

enum class StrategyKind : std::uint8_t { Naive = 0, Cumulative = 1, ReplayBR = 2, ReplayEX = 3, ReplayRP = 4, ReplayRPR = 5 };

inline constexpr StrategyKind kAllStrategies[] = {StrategyKind::Naive,    StrategyKind::Cumulative,
                                                  StrategyKind::ReplayBR, StrategyKind::ReplayEX,
                                                  StrategyKind::ReplayRP, StrategyKind::ReplayRPR};

inline std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::Naive: return "Naive";
        case StrategyKind::Cumulative: return "Cumulative";
        case StrategyKind::ReplayBR: return "ReplayBR";
        case StrategyKind::ReplayEX: return "ReplayEX";
        case StrategyKind::ReplayRP: return "ReplayRP";
        case StrategyKind::ReplayRPR: return "ReplayRPR";
    }
    return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
    for (auto k : kAllStrategies)
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown strategy '" + s +
                                "' (expected Naive, Cumulative, ReplayBR, ReplayEX, ReplayRP or ReplayRPR)");
}

/// Naive and Cumulative do not use the capacity.
inline bool uses_capacity(StrategyKind k) { return k != StrategyKind::Naive && k != StrategyKind::Cumulative; }

struct Slot {
    std::uint32_t experience_index = 0;  // 0-based position in the stream
    std::uint32_t ordinal = 0;           // episode index inside its demonstration
    DemoEpisode episode;
};

/// Bounded exemplar store. Slots are kept sorted by (experience_index, ordinal).
struct ExperienceBuffer {
    std::size_t capacity = 1;
    StrategyKind strategy = StrategyKind::ReplayBR;
    Rng rng;
    std::uint32_t experiences_seen = 0;
    std::vector<Slot> slots;

    ExperienceBuffer() = default;
    ExperienceBuffer(StrategyKind s, std::size_t m, std::uint64_t seed) : capacity(m), strategy(s), rng(seed) {
        if (m == 0 && uses_capacity(s)) throw std::invalid_argument("ExperienceBuffer: capacity must be positive");
    }

    /// Retained episode count per experience index (length = experiences_seen).
    std::vector<std::size_t> slot_counts() const {
        std::vector<std::size_t> c(experiences_seen, 0);
        for (const auto& s : slots) c[s.experience_index] += 1;
        return c;
    }

    std::vector<const DemoEpisode*> episodes() const {
        std::vector<const DemoEpisode*> out;
        out.reserve(slots.size());
        for (const auto& s : slots) out.push_back(&s.episode);
        return out;
    }
};

namespace detail {

inline void sort_slots(std::vector<Slot>& slots) {
    std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
        return a.experience_index != b.experience_index ? a.experience_index < b.experience_index
                                                        : a.ordinal < b.ordinal;
    });
}

/// k distinct positions out of n, uniformly (partial Fisher-Yates), returned sorted.
inline std::vector<std::size_t> choose(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::vector<Slot> as_slots(const Demonstration& demo, std::uint32_t experience) {
    std::vector<Slot> out;
    out.reserve(demo.episodes.size());
    for (std::size_t j = 0; j < demo.episodes.size(); ++j)
        out.push_back({experience, static_cast<std::uint32_t>(j), demo.episodes[j]});
    return out;
}

inline std::vector<Slot> subsample(std::vector<Slot> pool, std::size_t k, Rng& rng) {
    if (k >= pool.size()) return pool;
    std::vector<Slot> out;
    out.reserve(k);
    for (auto i : choose(pool.size(), k, rng)) out.push_back(std::move(pool[i]));
    return out;
}

inline void require_nonempty(const Demonstration& d) {
    if (d.episodes.empty()) throw std::invalid_argument("replay update: new demonstration is empty");
}

}  // namespace detail

/// Balanced quotas: floor(M / N) each, the M mod N remainder one extra slot each in
/// ascending experience order. Experiences that cannot fill their quota (caps) pass
/// the slack on to the others the same way.
inline std::vector<std::size_t> balanced_quotas(std::size_t capacity, std::span<const std::size_t> caps) {
    std::vector<std::size_t> q(caps.size(), 0);
    std::size_t remaining = capacity;
    while (remaining > 0) {
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < caps.size(); ++i)
            if (q[i] < caps[i]) open.push_back(i);
        if (open.empty()) break;
        const auto base = remaining / open.size();
        auto extra = remaining % open.size();
        std::size_t given = 0;
        for (auto i : open) {
            auto want = base + (extra > 0 ? 1 : 0);
            if (extra > 0) --extra;
            const auto g = std::min(want, caps[i] - q[i]);
            q[i] += g;
            given += g;
        }
        remaining -= given;
        if (given == 0) break;
    }
    return q;
}

inline void update_replay_br(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    const auto exp = buf.experiences_seen;
    auto counts = buf.slot_counts();
    counts.push_back(demo.episodes.size());
    const auto quotas = balanced_quotas(buf.capacity, counts);
    // Previously retained experiences only shrink: subsample what is already held.
    std::vector<std::vector<Slot>> by_exp(exp + 1);
    for (auto& s : buf.slots) by_exp[s.experience_index].push_back(std::move(s));
    by_exp[exp] = detail::as_slots(demo, exp);
    buf.slots.clear();
    for (std::uint32_t e = 0; e <= exp; ++e) {
        auto kept = detail::subsample(std::move(by_exp[e]), quotas[e], buf.rng);
        for (auto& s : kept) buf.slots.push_back(std::move(s));
    }
    buf.experiences_seen += 1;
    detail::sort_slots(buf.slots);
}

/// i-th experience (1-based) gets max(1, floor(M / i)) slots; the old buffer is
/// subsampled uniformly, regardless of source, to fill the rest.
inline void update_replay_ex(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    const auto exp = buf.experiences_seen;
    const std::size_t i = exp + 1;
    const std::size_t m = buf.capacity;
    const std::size_t n_new = demo.episodes.size();
    std::size_t take_new = 0, keep_old = 0;
    if (i == 1) {
        take_new = std::min(m, n_new);
    } else {
        take_new = std::min(std::max<std::size_t>(1, m / i), n_new);
        take_new = std::min(take_new, m);
        keep_old = std::min(buf.slots.size(), m - take_new);
        take_new = std::min(n_new, m - keep_old);
    }
    auto old_kept = detail::subsample(std::move(buf.slots), keep_old, buf.rng);
    auto new_kept = detail::subsample(detail::as_slots(demo, exp), take_new, buf.rng);
    buf.slots = std::move(old_kept);
    for (auto& s : new_kept) buf.slots.push_back(std::move(s));
    buf.experiences_seen += 1;
    detail::sort_slots(buf.slots);
}

/// Keeps the M highest episodic rewards; ties prefer the newer experience, then the lower ordinal.
inline void update_replay_rp(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    auto pool = std::move(buf.slots);
    for (auto& s : detail::as_slots(demo, buf.experiences_seen)) pool.push_back(std::move(s));
    std::stable_sort(pool.begin(), pool.end(), [](const Slot& a, const Slot& b) {
        if (a.episode.episodic_reward != b.episode.episodic_reward)
            return a.episode.episodic_reward > b.episode.episodic_reward;
        if (a.experience_index != b.experience_index) return a.experience_index > b.experience_index;
        return a.ordinal < b.ordinal;
    });
    if (pool.size() > buf.capacity) pool.resize(buf.capacity);
    buf.slots = std::move(pool);
    buf.experiences_seen += 1;
    detail::sort_slots(buf.slots);
}

/// Shifted reservoir weights: w_j = (r_j - min r) + eps, eps = 1e-6 max(1, |min r|).
inline std::vector<double> reservoir_weights(std::span<const double> rewards) {
    if (rewards.empty()) return {};
    const double lo = *std::min_element(rewards.begin(), rewards.end());
    const double eps = 1e-6 * std::max(1.0, std::abs(lo));
    std::vector<double> w(rewards.size());
    for (std::size_t j = 0; j < rewards.size(); ++j) w[j] = (rewards[j] - lo) + eps;
    return w;
}

/// Weighted sampling without replacement by the key method: keep the k largest
/// u^(1/w). Keys are compared in log space, ln(u) / w, which orders identically.
inline std::vector<std::size_t> weighted_reservoir(std::span<const double> weights, std::size_t k, Rng& rng) {
    if (k >= weights.size()) {
        std::vector<std::size_t> all(weights.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    std::vector<std::pair<double, std::size_t>> keys;
    keys.reserve(weights.size());
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (!(weights[j] > 0)) throw std::invalid_argument("weighted_reservoir: weights must be positive");
        keys.emplace_back(std::log(rng.uniform_open()) / weights[j], j);
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(keys[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

inline void update_replay_rpr(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    auto pool = std::move(buf.slots);
    for (auto& s : detail::as_slots(demo, buf.experiences_seen)) pool.push_back(std::move(s));
    std::vector<double> rewards;
    for (const auto& s : pool) rewards.push_back(s.episode.episodic_reward);
    const auto keep = weighted_reservoir(reservoir_weights(rewards), buf.capacity, buf.rng);
    std::vector<Slot> kept;
    kept.reserve(keep.size());
    for (auto j : keep) kept.push_back(std::move(pool[j]));
    buf.slots = std::move(kept);
    buf.experiences_seen += 1;
    detail::sort_slots(buf.slots);
}

inline void update_naive(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    buf.slots = detail::as_slots(demo, buf.experiences_seen);
    buf.experiences_seen += 1;
}

inline void update_cumulative(ExperienceBuffer& buf, const Demonstration& demo) {
    detail::require_nonempty(demo);
    for (auto& s : detail::as_slots(demo, buf.experiences_seen)) buf.slots.push_back(std::move(s));
    buf.experiences_seen += 1;
}

inline void update_buffer(ExperienceBuffer& buf, const Demonstration& demo) {
    switch (buf.strategy) {
        case StrategyKind::Naive: return update_naive(buf, demo);
        case StrategyKind::Cumulative: return update_cumulative(buf, demo);
        case StrategyKind::ReplayBR: return update_replay_br(buf, demo);
        case StrategyKind::ReplayEX: return update_replay_ex(buf, demo);
        case StrategyKind::ReplayRP: return update_replay_rp(buf, demo);
        case StrategyKind::ReplayRPR: return update_replay_rpr(buf, demo);
    }
}

// Buffer snapshot ("CPDB").

inline io::Bytes encode_buffer(const ExperienceBuffer& buf) {
    std::size_t obs_dim = 0, act_dim = 0;
    if (!buf.slots.empty() && !buf.slots.front().episode.steps.empty()) {
        obs_dim = buf.slots.front().episode.steps.front().observation.size();
        act_dim = buf.slots.front().episode.steps.front().action.size();
    }
    auto w = io::begin_record(io::kBufferMagic);
    w.u8(static_cast<std::uint8_t>(buf.strategy));
    w.u64(buf.capacity);
    w.u32(buf.experiences_seen);
    w.str(buf.rng.state());
    w.u32(static_cast<std::uint32_t>(obs_dim));
    w.u32(static_cast<std::uint32_t>(act_dim));
    w.u32(static_cast<std::uint32_t>(buf.slots.size()));
    for (const auto& s : buf.slots) {
        w.u32(s.experience_index);
        w.u32(s.ordinal);
        w.u32(s.episode.source_object_id);
        distill::write_episode(w, s.episode);
    }
    return io::finish_record(std::move(w));
}

inline ExperienceBuffer decode_buffer(std::span<const std::uint8_t> data) {
    auto r = io::open_record(data, io::kBufferMagic);
    ExperienceBuffer buf;
    const auto kind = r.u8();
    if (kind > 5) throw io::FormatError("buffer: unknown strategy tag " + std::to_string(kind));
    buf.strategy = static_cast<StrategyKind>(kind);
    buf.capacity = r.u64();
    buf.experiences_seen = r.u32();
    try {
        buf.rng.set_state(r.str());
    } catch (const std::invalid_argument& e) {
        throw io::FormatError(std::string("buffer: ") + e.what());
    }
    const auto obs_dim = r.u32();
    const auto act_dim = r.u32();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        Slot s;
        s.experience_index = r.u32();
        s.ordinal = r.u32();
        const auto obj = r.u32();
        if (s.experience_index >= buf.experiences_seen) throw io::FormatError("buffer: slot from an unseen experience");
        s.episode = distill::read_episode(r, obs_dim, act_dim, obj);
        buf.slots.push_back(std::move(s));
    }
    r.expect_end();
    return buf;
}

// ---------------------------------------------------------------------------
// CPD loop

struct EvalBundle {
    std::vector<env::ObjectSpec> specs;  // all K tasks, column order of the score matrix
    std::uint32_t episodes = 10;
    std::uint64_t seed = 1000000;
};

struct CpdSettings {
    StrategyKind strategy = StrategyKind::ReplayBR;
    std::size_t capacity = 100;
    distill::DistillConfig distill;
    nn::NetArch student_arch;
    std::uint64_t seed = 0;
};

/// Identity of one retained exemplar.
struct SlotId {
    std::uint32_t experience_index = 0;
    std::uint32_t ordinal = 0;

    friend auto operator<=>(const SlotId&, const SlotId&) = default;
};

struct CpdRunResult {
    nn::PolicyParams distilled;
    std::vector<std::vector<double>> score_matrix;       // experiences x tasks, mean z-rotation
    std::vector<std::vector<std::size_t>> buffer_trace;  // per experience: slot counts by source
    std::vector<std::vector<SlotId>> retained;           // per experience: buffer contents
    std::vector<std::size_t> training_set_sizes;         // episodes trained on, per experience
    std::vector<std::vector<double>> loss_curves;

    friend bool operator==(const CpdRunResult&, const CpdRunResult&) = default;
};

/// Raised with the failing experience attached.
class CpdError : public std::runtime_error {
public:
    CpdError(std::size_t experience, const std::string& what)
        : std::runtime_error("experience " + std::to_string(experience) + ": " + what), experience_(experience) {}
    std::size_t experience() const { return experience_; }

private:
    std::size_t experience_;
};

inline std::vector<double> evaluate_all(const nn::PolicyParams& student, const EvalBundle& bundle) {
    std::vector<double> row;
    row.reserve(bundle.specs.size());
    for (const auto& spec : bundle.specs)
        row.push_back(ppo::evaluate_policy(student, spec, bundle.episodes, bundle.seed).mean_z_rotation);
    return row;
}

/// Sequential distillation over the stream: strategy update, continue training the
/// student on the whole buffer, then score it on every task.
inline CpdRunResult cpd_run(std::span<const Demonstration> stream, const CpdSettings& settings,
                            const EvalBundle& bundle) {
    if (stream.empty()) throw std::invalid_argument("cpd_run: empty demonstration stream");
    if (bundle.specs.empty()) throw std::invalid_argument("cpd_run: no evaluation tasks");
    CpdRunResult out;
    out.distilled = nn::make_policy(settings.student_arch, mix_seed({settings.seed, 2}));
    ExperienceBuffer buf(settings.strategy, settings.capacity, mix_seed({settings.seed, 1}));
    for (std::size_t e = 0; e < stream.size(); ++e) {
        try {
            update_buffer(buf, stream[e]);
            out.buffer_trace.push_back(buf.slot_counts());
            std::vector<SlotId> ids;
            for (const auto& s : buf.slots) ids.push_back({s.experience_index, s.ordinal});
            out.retained.push_back(std::move(ids));
            out.training_set_sizes.push_back(buf.slots.size());
            auto cfg = settings.distill;
            cfg.seed = mix_seed({settings.seed, 3, e});
            const auto eps = buf.episodes();
            const auto data = distill::flatten(std::span<const DemoEpisode* const>(eps));
            auto res = distill::distill_train(out.distilled, data, cfg);
            out.loss_curves.push_back(std::move(res.epoch_loss));
            out.score_matrix.push_back(evaluate_all(out.distilled, bundle));
        } catch (const CpdError&) {
            throw;
        } catch (const std::exception& ex) {
            throw CpdError(e, ex.what());
        }
    }
    return out;
}

}  // namespace cpd::replay
