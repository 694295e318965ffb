#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/binary_io.hpp"
#include "cpd/rng.hpp"

namespace cpd::env {

inline constexpr std::size_t kPoseDim = 6;
inline constexpr std::size_t kActionDim = 8;  // four fingers, two DoF each
inline constexpr double kDropPenalty = -100.0;

/// Axis order used by every pose-shaped vector and matrix row.
enum Axis : std::size_t { kX = 0, kY = 1, kZ = 2, kPhi = 3, kPsi = 4, kTheta = 5 };

/// Object pose. Angles are in degrees, unwrapped (accumulated, never reduced mod 360):
/// phi about z, psi about y, theta about x.
struct Pose {
    double x = 0, y = 0, z = 0, phi = 0, psi = 0, theta = 0;

    std::array<double, kPoseDim> as_array() const { return {x, y, z, phi, psi, theta}; }

    static Pose from_array(const std::array<double, kPoseDim>& a) { return {a[0], a[1], a[2], a[3], a[4], a[5]}; }

    friend bool operator==(const Pose&, const Pose&) = default;
};

using GainMatrix = std::array<std::array<double, kActionDim>, kPoseDim>;
using CouplingMatrix = std::array<std::array<double, kPoseDim>, kPoseDim>;

struct ObjectSpec {
    std::uint32_t object_id = 0;
    std::uint32_t num_objects = 1;  // K, width of the one-hot block
    std::uint32_t episode_length = 100;
    GainMatrix gain{};
    CouplingMatrix coupling{};
    double noise_scale = 0.0;
    double drop_threshold = 1.0;
    /// Per-episode actuation factor is drawn from U(1 - grip_spread, 1 + grip_spread).
    double grip_spread = 0.0;
    std::uint64_t seed_base = 0;

    std::size_t observation_dim() const { return kPoseDim + kActionDim + num_objects; }

    void validate() const {
        if (num_objects == 0 || object_id >= num_objects)
            throw std::invalid_argument("ObjectSpec: object_id " + std::to_string(object_id) +
                                        " outside [0, " + std::to_string(num_objects) + ")");
        if (episode_length == 0) throw std::invalid_argument("ObjectSpec: episode_length must be positive");
        if (!(drop_threshold > 0)) throw std::invalid_argument("ObjectSpec: drop_threshold must be positive");
        if (!(noise_scale >= 0) || !(noise_scale < drop_threshold))
            throw std::invalid_argument("ObjectSpec: need 0 <= noise_scale < drop_threshold");
        if (!(grip_spread >= 0 && grip_spread < 1))
            throw std::invalid_argument("ObjectSpec: grip_spread must lie in [0, 1)");
        if (std::none_of(gain[kPhi].begin(), gain[kPhi].end(), [](double g) { return g > 0; }))
            throw std::invalid_argument("ObjectSpec: phi gain row has no positive entry");
    }

    friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

/// Parameters of the synthetic rotation-task family.
struct FamilyConfig {
    std::uint32_t num_tasks = 3;
    std::uint64_t master_seed = 7;
    std::uint32_t episode_length = 100;
    double noise_scale = 0.02;
    double drop_threshold = 15.0;
    /// Mean L1 norm of the phi gain row, degrees per step at full actuation.
    double phi_rate = 2.0;
    /// Std of the gain entries feeding the other five axes.
    double drift_scale = 0.15;
    /// Std of the off-diagonal coupling entries.
    double coupling_scale = 0.02;
    /// Half-width of the unobserved per-episode grip-quality factor.
    double grip_spread = 0.25;

    friend bool operator==(const FamilyConfig&, const FamilyConfig&) = default;
};

inline double gain_distance(const GainMatrix& a, const GainMatrix& b) {
    double s = 0.0;
    for (std::size_t r = 0; r < kPoseDim; ++r)
        for (std::size_t c = 0; c < kActionDim; ++c) s += (a[r][c] - b[r][c]) * (a[r][c] - b[r][c]);
    return std::sqrt(s);
}

inline constexpr double kMinTaskDistance = 0.5;
inline constexpr int kMaxFamilyResamples = 1000;

namespace detail {

using GaitSigns = std::array<double, kActionDim>;

/// Actuation sign pattern per task. The first seven tasks take distinct non-constant
/// rows of the 8x8 Sylvester-Hadamard matrix (mutually orthogonal, four positive
/// entries each) under a shared column permutation and a per-task sign flip; further
/// tasks get random patterns with at least one positive entry.
inline std::vector<GaitSigns> gait_signs(std::uint32_t k, Rng& rng) {
    std::array<std::size_t, kActionDim - 1> rows{};
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i + 1;
    std::array<std::size_t, kActionDim> cols{};
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.index(i)]);
    for (std::size_t i = cols.size(); i > 1; --i) std::swap(cols[i - 1], cols[rng.index(i)]);
    std::vector<GaitSigns> out;
    for (std::uint32_t t = 0; t < k; ++t) {
        GaitSigns g{};
        if (t < rows.size()) {
            const double flip = rng.uniform() < 0.5 ? -1.0 : 1.0;
            for (std::size_t c = 0; c < kActionDim; ++c)
                g[c] = flip * ((std::popcount(rows[t] & cols[c]) % 2) ? -1.0 : 1.0);
        } else {
            do {
                for (auto& v : g) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
            } while (std::none_of(g.begin(), g.end(), [](double v) { return v > 0; }));
        }
        out.push_back(g);
    }
    return out;
}

inline ObjectSpec draw_spec(const FamilyConfig& cfg, std::uint32_t id, const GaitSigns& signs, Rng& rng) {
    ObjectSpec s;
    s.object_id = id;
    s.num_objects = cfg.num_tasks;
    s.episode_length = cfg.episode_length;
    s.noise_scale = cfg.noise_scale;
    s.drop_threshold = cfg.drop_threshold;
    s.grip_spread = cfg.grip_spread;
    for (std::size_t r = 0; r < kPoseDim; ++r)
        for (std::size_t c = 0; c < kActionDim; ++c) s.gain[r][c] = rng.normal() * cfg.drift_scale;
    double l1 = 0.0;
    for (std::size_t c = 0; c < kActionDim; ++c) {
        s.gain[kPhi][c] = signs[c] * rng.uniform(0.5, 1.5);
        l1 += std::abs(s.gain[kPhi][c]);
    }
    const double target = cfg.phi_rate * rng.uniform(0.8, 1.2);
    for (auto& g : s.gain[kPhi]) g *= target / l1;
    for (std::size_t r = 0; r < kPoseDim; ++r)
        for (std::size_t c = 0; c < kPoseDim; ++c)
            s.coupling[r][c] = (r == c) ? 1.0 : rng.normal() * cfg.coupling_scale;
    s.seed_base = rng.next_u64();
    return s;
}

}  // namespace detail

/// K specs drawn from master_seed with pairwise gain distance >= kMinTaskDistance.
inline std::vector<ObjectSpec> make_task_family(const FamilyConfig& cfg) {
    if (cfg.num_tasks < 1) throw std::invalid_argument("make_task_family: need K >= 1");
    Rng rng(mix_seed({cfg.master_seed, 0x7461736bULL}));
    const auto signs = detail::gait_signs(cfg.num_tasks, rng);
    std::vector<ObjectSpec> family;
    for (std::uint32_t k = 0; k < cfg.num_tasks; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxFamilyResamples && !placed; ++attempt) {
            auto spec = detail::draw_spec(cfg, k, signs[k], rng);
            const bool has_positive = std::any_of(spec.gain[kPhi].begin(), spec.gain[kPhi].end(),
                                                  [](double g) { return g > 0; });
            const bool far = std::all_of(family.begin(), family.end(), [&](const ObjectSpec& o) {
                return gain_distance(o.gain, spec.gain) >= kMinTaskDistance;
            });
            if (has_positive && far) {
                spec.validate();
                family.push_back(spec);
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error("make_task_family: task " + std::to_string(k) + " could not reach gain distance " +
                                     std::to_string(kMinTaskDistance) + " after " +
                                     std::to_string(kMaxFamilyResamples) + " resamples");
    }
    return family;
}

inline std::vector<ObjectSpec> make_task_family(std::uint32_t k, std::uint64_t master_seed) {
    FamilyConfig cfg;
    cfg.num_tasks = k;
    cfg.master_seed = master_seed;
    return make_task_family(cfg);
}

/// R_t = 1000 dphi - |dpsi| - |dtheta| - |dx| - |dy|. The z axis does not enter.
inline double reward_fn(const Pose& prev, const Pose& curr) {
    return 1000.0 * (curr.phi - prev.phi) - std::abs(curr.psi - prev.psi) - std::abs(curr.theta - prev.theta) -
           std::abs(curr.x - prev.x) - std::abs(curr.y - prev.y);
}

struct EnvState {
    ObjectSpec spec;
    Pose pose;
    Pose prev_pose;
    std::array<double, kActionDim> prev_action{};
    std::uint32_t step_index = 0;
    double grip = 1.0;
    Rng rng;
    bool done = false;
    bool dropped = false;
};

inline EnvState env_reset(const ObjectSpec& spec, std::uint64_t episode_seed) {
    spec.validate();
    EnvState s;
    s.spec = spec;
    s.rng = Rng(mix_seed({spec.seed_base, episode_seed}));
    if (spec.grip_spread > 0) s.grip = s.rng.uniform(1.0 - spec.grip_spread, 1.0 + spec.grip_spread);
    return s;
}

/// Pose (positions over drop_threshold, angles over 180 degrees), previous clamped
/// action, one-hot object id.
inline std::vector<double> observe(const EnvState& s) {
    std::vector<double> obs(s.spec.observation_dim(), 0.0);
    const auto p = s.pose.as_array();
    for (std::size_t i = 0; i < kPoseDim; ++i) obs[i] = i < kPhi ? p[i] / s.spec.drop_threshold : p[i] / 180.0;
    for (std::size_t i = 0; i < kActionDim; ++i) obs[kPoseDim + i] = s.prev_action[i];
    obs[kPoseDim + kActionDim + s.spec.object_id] = 1.0;
    return obs;
}

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
};

/// pose_delta = grip * coupling * (gain * clamp(action)) + noise_scale * xi.
inline StepResult env_step(EnvState& s, std::span<const double> action) {
    if (s.done) throw std::logic_error("env_step: episode already finished");
    if (action.size() != kActionDim)
        throw std::invalid_argument("env_step: action has " + std::to_string(action.size()) + " entries, expected 8");
    std::array<double, kActionDim> a{};
    for (std::size_t i = 0; i < kActionDim; ++i) a[i] = std::clamp(action[i], -1.0, 1.0);
    std::array<double, kPoseDim> raw{};
    for (std::size_t r = 0; r < kPoseDim; ++r)
        for (std::size_t c = 0; c < kActionDim; ++c) raw[r] += s.grip * s.spec.gain[r][c] * a[c];
    auto p = s.pose.as_array();
    for (std::size_t r = 0; r < kPoseDim; ++r) {
        double d = 0.0;
        for (std::size_t c = 0; c < kPoseDim; ++c) d += s.spec.coupling[r][c] * raw[c];
        if (s.spec.noise_scale > 0) d += s.spec.noise_scale * s.rng.normal();
        p[r] += d;
    }
    s.prev_pose = s.pose;
    s.pose = Pose::from_array(p);
    s.prev_action = a;
    s.step_index += 1;

    StepResult out;
    out.reward = reward_fn(s.prev_pose, s.pose);
    if (std::abs(s.pose.x) + std::abs(s.pose.y) > s.spec.drop_threshold) {
        s.dropped = true;
        s.done = true;
        out.reward += kDropPenalty;
    } else if (s.step_index >= s.spec.episode_length) {
        s.done = true;
    }
    out.done = s.done;
    out.observation = observe(s);
    return out;
}

/// phi_final - phi_initial over a pose trajectory (initial pose first).
inline double episode_z_rotation(std::span<const Pose> poses) {
    if (poses.size() < 2) throw std::invalid_argument("episode_z_rotation: episode has no steps");
    return poses.back().phi - poses.front().phi;
}

// Task-family file ("CPDT").

inline void write_spec(io::ByteWriter& w, const ObjectSpec& s) {
    w.u32(s.object_id);
    w.u32(s.num_objects);
    w.u32(s.episode_length);
    for (const auto& row : s.gain) w.f64s(row);
    for (const auto& row : s.coupling) w.f64s(row);
    w.f64(s.noise_scale);
    w.f64(s.drop_threshold);
    w.f64(s.grip_spread);
    w.u64(s.seed_base);
}

inline ObjectSpec read_spec(io::ByteReader& r) {
    ObjectSpec s;
    s.object_id = r.u32();
    s.num_objects = r.u32();
    s.episode_length = r.u32();
    for (auto& row : s.gain)
        for (auto& v : row) v = r.f64();
    for (auto& row : s.coupling)
        for (auto& v : row) v = r.f64();
    s.noise_scale = r.f64();
    s.drop_threshold = r.f64();
    s.grip_spread = r.f64();
    s.seed_base = r.u64();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw io::FormatError(std::string("task family: ") + e.what());
    }
    return s;
}

inline io::Bytes encode_family(std::uint64_t master_seed, const std::vector<ObjectSpec>& family) {
    auto w = io::begin_record(io::kFamilyMagic);
    w.u32(static_cast<std::uint32_t>(family.size()));
    w.u64(master_seed);
    for (const auto& s : family) write_spec(w, s);
    return io::finish_record(std::move(w));
}

struct FamilyFile {
    std::uint64_t master_seed = 0;
    std::vector<ObjectSpec> specs;
};

inline FamilyFile decode_family(std::span<const std::uint8_t> data) {
    auto r = io::open_record(data, io::kFamilyMagic);
    FamilyFile f;
    const auto k = r.u32();
    f.master_seed = r.u64();
    for (std::uint32_t i = 0; i < k; ++i) f.specs.push_back(read_spec(r));
    r.expect_end();
    return f;
}

}  // namespace cpd::env
