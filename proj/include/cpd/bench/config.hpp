#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/binary_io.hpp"
#include "cpd/distill.hpp"
#include "cpd/env.hpp"
#include "cpd/ppo.hpp"
#include "cpd/replay.hpp"

namespace cpd::bench {

struct ExperimentConfig {
    env::FamilyConfig family;
    /// Stream order of tasks; empty means 0, 1, ..., K-1.
    std::vector<std::uint32_t> task_order;

    ppo::TrainConfig ppo;
    /// Independent training runs per task; the selection rule picks one expert among them.
    std::uint32_t expert_runs = 1;

    std::uint32_t demo_episodes = 100;

    distill::DistillConfig distill;
    /// Losses compared under Cumulative training (one extra run per loss and seed).
    std::vector<distill::LossKind> loss_comparison{distill::LossKind::MSE, distill::LossKind::NLL,
                                                   distill::LossKind::KL};

    std::vector<replay::StrategyKind> strategies{std::begin(replay::kAllStrategies), std::end(replay::kAllStrategies)};
    std::vector<std::size_t> buffer_sizes;
    std::vector<std::uint64_t> seeds;
    std::uint32_t eval_episodes = 10;
    std::uint64_t eval_seed = 1000000;

    std::string output_dir;
    std::string cache_dir;  // empty: <output_dir>/cache
    std::uint32_t threads = 1;

    std::vector<std::uint32_t> stream_order() const {
        if (!task_order.empty()) return task_order;
        std::vector<std::uint32_t> o(family.num_tasks);
        for (std::uint32_t i = 0; i < family.num_tasks; ++i) o[i] = i;
        return o;
    }

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct Diagnostic {
    std::size_t line = 0;  // 0 when not tied to a line
    std::string message;
};

/// Carries every problem found in a config, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<Diagnostic> diags) : std::runtime_error(join(diags)), diags_(std::move(diags)) {}
    const std::vector<Diagnostic>& diagnostics() const { return diags_; }

private:
    static std::string join(const std::vector<Diagnostic>& d) {
        std::string s = std::to_string(d.size()) + " config error(s):";
        for (const auto& x : d) s += "\n  " + (x.line ? "line " + std::to_string(x.line) + ": " : std::string{}) + x.message;
        return s;
    }
    std::vector<Diagnostic> diags_;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("empty list element");
        out.push_back(item);
    }
    if (out.empty()) throw std::invalid_argument("expected a non-empty comma-separated list");
    return out;
}

inline std::uint64_t to_u64(const std::string& v) {
    std::uint64_t x = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc{} || p != end) throw std::invalid_argument("expected an unsigned integer, got '" + v + "'");
    return x;
}

inline std::uint32_t to_u32(const std::string& v) {
    const auto x = to_u64(v);
    if (x > 0xffffffffULL) throw std::invalid_argument("value " + v + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(x);
}

inline double to_f64(const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("expected a real number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("expected a real number, got '" + v + "'");
    return x;
}

inline std::string fmt(double v) { return ppo::format_double(v); }

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + f(xs[i]);
    return s;
}

inline void positive(std::uint64_t x) {
    if (x == 0) throw std::invalid_argument("must be positive");
}

inline void open_unit(double x) {
    if (!(x > 0 && x < 1)) throw std::invalid_argument("must lie in (0, 1)");
}

inline void half_open_unit(double x) {
    if (!(x > 0 && x <= 1)) throw std::invalid_argument("must lie in (0, 1]");
}

inline void positive_real(double x) {
    if (!(x > 0)) throw std::invalid_argument("must be > 0");
}

inline void non_negative(double x) {
    if (!(x >= 0)) throw std::invalid_argument("must be >= 0");
}

struct Field {
    std::string section;
    std::string key;
    bool required = false;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

// clang-format off
inline const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = {
        {"family", "num_tasks", true,
         [](const C& c) { return std::to_string(c.family.num_tasks); },
         [](C& c, const std::string& v) { c.family.num_tasks = to_u32(v); positive(c.family.num_tasks); }},
        {"family", "master_seed", true,
         [](const C& c) { return std::to_string(c.family.master_seed); },
         [](C& c, const std::string& v) { c.family.master_seed = to_u64(v); }},
        {"family", "episode_length", false,
         [](const C& c) { return std::to_string(c.family.episode_length); },
         [](C& c, const std::string& v) { c.family.episode_length = to_u32(v); positive(c.family.episode_length); }},
        {"family", "noise_scale", false,
         [](const C& c) { return fmt(c.family.noise_scale); },
         [](C& c, const std::string& v) { c.family.noise_scale = to_f64(v); non_negative(c.family.noise_scale); }},
        {"family", "drop_threshold", false,
         [](const C& c) { return fmt(c.family.drop_threshold); },
         [](C& c, const std::string& v) { c.family.drop_threshold = to_f64(v); positive_real(c.family.drop_threshold); }},
        {"family", "phi_rate", false,
         [](const C& c) { return fmt(c.family.phi_rate); },
         [](C& c, const std::string& v) { c.family.phi_rate = to_f64(v); positive_real(c.family.phi_rate); }},
        {"family", "drift_scale", false,
         [](const C& c) { return fmt(c.family.drift_scale); },
         [](C& c, const std::string& v) { c.family.drift_scale = to_f64(v); non_negative(c.family.drift_scale); }},
        {"family", "coupling_scale", false,
         [](const C& c) { return fmt(c.family.coupling_scale); },
         [](C& c, const std::string& v) { c.family.coupling_scale = to_f64(v); non_negative(c.family.coupling_scale); }},
        {"family", "grip_spread", false,
         [](const C& c) { return fmt(c.family.grip_spread); },
         [](C& c, const std::string& v) {
             c.family.grip_spread = to_f64(v);
             if (!(c.family.grip_spread >= 0 && c.family.grip_spread < 1)) throw std::invalid_argument("must lie in [0, 1)");
         }},
        {"family", "task_order", false,
         [](const C& c) { return join(c.stream_order(), [](auto x) { return std::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.task_order.clear();
             for (const auto& s : split_list(v)) c.task_order.push_back(to_u32(s));
         }},

        {"ppo", "total_steps", false,
         [](const C& c) { return std::to_string(c.ppo.total_steps); },
         [](C& c, const std::string& v) { c.ppo.total_steps = to_u64(v); positive(c.ppo.total_steps); }},
        {"ppo", "n_envs", false,
         [](const C& c) { return std::to_string(c.ppo.n_envs); },
         [](C& c, const std::string& v) { c.ppo.n_envs = to_u32(v); positive(c.ppo.n_envs); }},
        {"ppo", "n_steps_per_update", false,
         [](const C& c) { return std::to_string(c.ppo.n_steps_per_update); },
         [](C& c, const std::string& v) { c.ppo.n_steps_per_update = to_u32(v); positive(c.ppo.n_steps_per_update); }},
        {"ppo", "epochs", false,
         [](const C& c) { return std::to_string(c.ppo.epochs); },
         [](C& c, const std::string& v) { c.ppo.epochs = to_u32(v); positive(c.ppo.epochs); }},
        {"ppo", "minibatch_size", false,
         [](const C& c) { return std::to_string(c.ppo.minibatch_size); },
         [](C& c, const std::string& v) { c.ppo.minibatch_size = to_u32(v); positive(c.ppo.minibatch_size); }},
        {"ppo", "clip_epsilon", false,
         [](const C& c) { return fmt(c.ppo.clip_epsilon); },
         [](C& c, const std::string& v) { c.ppo.clip_epsilon = to_f64(v); open_unit(c.ppo.clip_epsilon); }},
        {"ppo", "gamma", false,
         [](const C& c) { return fmt(c.ppo.gamma); },
         [](C& c, const std::string& v) { c.ppo.gamma = to_f64(v); half_open_unit(c.ppo.gamma); }},
        {"ppo", "gae_lambda", false,
         [](const C& c) { return fmt(c.ppo.gae_lambda); },
         [](C& c, const std::string& v) { c.ppo.gae_lambda = to_f64(v); half_open_unit(c.ppo.gae_lambda); }},
        {"ppo", "value_coef", false,
         [](const C& c) { return fmt(c.ppo.value_coef); },
         [](C& c, const std::string& v) { c.ppo.value_coef = to_f64(v); positive_real(c.ppo.value_coef); }},
        {"ppo", "entropy_coef", false,
         [](const C& c) { return fmt(c.ppo.entropy_coef); },
         [](C& c, const std::string& v) { c.ppo.entropy_coef = to_f64(v); non_negative(c.ppo.entropy_coef); }},
        {"ppo", "learning_rate", false,
         [](const C& c) { return fmt(c.ppo.learning_rate); },
         [](C& c, const std::string& v) { c.ppo.learning_rate = to_f64(v); positive_real(c.ppo.learning_rate); }},
        {"ppo", "reward_scale", false,
         [](const C& c) { return fmt(c.ppo.reward_scale); },
         [](C& c, const std::string& v) { c.ppo.reward_scale = to_f64(v); positive_real(c.ppo.reward_scale); }},
        {"ppo", "eval_every_episodes", false,
         [](const C& c) { return std::to_string(c.ppo.eval_every_episodes); },
         [](C& c, const std::string& v) { c.ppo.eval_every_episodes = to_u32(v); positive(c.ppo.eval_every_episodes); }},
        {"ppo", "eval_episodes", false,
         [](const C& c) { return std::to_string(c.ppo.eval_episodes); },
         [](C& c, const std::string& v) { c.ppo.eval_episodes = to_u32(v); positive(c.ppo.eval_episodes); }},
        {"ppo", "hidden_sizes", false,
         [](const C& c) { return join(c.ppo.hidden_sizes, [](auto x) { return std::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.ppo.hidden_sizes.clear();
             for (const auto& s : split_list(v)) { c.ppo.hidden_sizes.push_back(to_u32(s)); positive(c.ppo.hidden_sizes.back()); }
         }},
        {"ppo", "activation", false,
         [](const C& c) { return nn::to_string(c.ppo.activation); },
         [](C& c, const std::string& v) { c.ppo.activation = nn::activation_from_string(v); }},
        {"ppo", "expert_runs", false,
         [](const C& c) { return std::to_string(c.expert_runs); },
         [](C& c, const std::string& v) { c.expert_runs = to_u32(v); positive(c.expert_runs); }},

        {"demos", "episodes", false,
         [](const C& c) { return std::to_string(c.demo_episodes); },
         [](C& c, const std::string& v) { c.demo_episodes = to_u32(v); positive(c.demo_episodes); }},

        {"distill", "loss", false,
         [](const C& c) { return distill::to_string(c.distill.loss); },
         [](C& c, const std::string& v) { c.distill.loss = distill::loss_from_string(v); }},
        {"distill", "epochs", false,
         [](const C& c) { return std::to_string(c.distill.epochs); },
         [](C& c, const std::string& v) { c.distill.epochs = to_u32(v); }},
        {"distill", "batch_size", false,
         [](const C& c) { return std::to_string(c.distill.batch_size); },
         [](C& c, const std::string& v) { c.distill.batch_size = to_u32(v); positive(c.distill.batch_size); }},
        {"distill", "learning_rate", false,
         [](const C& c) { return fmt(c.distill.learning_rate); },
         [](C& c, const std::string& v) { c.distill.learning_rate = to_f64(v); positive_real(c.distill.learning_rate); }},
        {"distill", "expert_sigma", false,
         [](const C& c) { return fmt(c.distill.expert_sigma); },
         [](C& c, const std::string& v) { c.distill.expert_sigma = to_f64(v); positive_real(c.distill.expert_sigma); }},
        {"distill", "loss_comparison", false,
         [](const C& c) { return join(c.loss_comparison, [](auto x) { return distill::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.loss_comparison.clear();
             for (const auto& s : split_list(v)) c.loss_comparison.push_back(distill::loss_from_string(s));
         }},

        {"cpd", "strategies", false,
         [](const C& c) { return join(c.strategies, [](auto x) { return replay::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.strategies.clear();
             for (const auto& s : split_list(v)) c.strategies.push_back(replay::strategy_from_string(s));
         }},
        {"cpd", "buffer_sizes", false,
         [](const C& c) { return join(c.buffer_sizes, [](auto x) { return std::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.buffer_sizes.clear();
             for (const auto& s : split_list(v)) { c.buffer_sizes.push_back(to_u64(s)); positive(c.buffer_sizes.back()); }
         }},
        {"cpd", "seeds", true,
         [](const C& c) { return join(c.seeds, [](auto x) { return std::to_string(x); }); },
         [](C& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(s));
         }},
        {"cpd", "eval_episodes", false,
         [](const C& c) { return std::to_string(c.eval_episodes); },
         [](C& c, const std::string& v) { c.eval_episodes = to_u32(v); positive(c.eval_episodes); }},
        {"cpd", "eval_seed", false,
         [](const C& c) { return std::to_string(c.eval_seed); },
         [](C& c, const std::string& v) { c.eval_seed = to_u64(v); }},

        {"output", "dir", true,
         [](const C& c) { return c.output_dir; },
         [](C& c, const std::string& v) { if (v.empty()) throw std::invalid_argument("must not be empty"); c.output_dir = v; }},
        {"output", "cache_dir", false,
         [](const C& c) { return c.cache_dir; },
         [](C& c, const std::string& v) { c.cache_dir = v; }},
        {"output", "threads", false,
         [](const C& c) { return std::to_string(c.threads); },
         [](C& c, const std::string& v) { c.threads = to_u32(v); positive(c.threads); }},
    };
    return table;
}
// clang-format on

inline const std::vector<std::string>& section_order() {
    static const std::vector<std::string> s{"family", "ppo", "demos", "distill", "cpd", "output"};
    return s;
}

/// Buffer sizes at 100%, 10% and 1% of one demonstration (at least 1, deduplicated).
inline std::vector<std::size_t> default_buffer_sizes(std::uint32_t demo_episodes) {
    std::vector<std::size_t> out;
    for (std::size_t div : {1, 10, 100}) {
        const std::size_t m = std::max<std::size_t>(1, demo_episodes / div);
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    return out;
}

}  // namespace detail

/// Parses the INI-style experiment config (`[section]`, `key = value`, `#` comments,
/// comma-separated lists). Throws ConfigError listing every problem.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<Diagnostic> errors;
    std::map<std::string, std::size_t> seen;  // "section.key" -> line
    std::string section;
    std::istringstream is(text);
    std::string raw;
    std::size_t lineno = 0;
    const auto& sections = detail::section_order();
    while (std::getline(is, raw)) {
        ++lineno;
        auto line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                errors.push_back({lineno, "malformed section header '" + line + "'"});
                continue;
            }
            section = detail::trim(line.substr(1, line.size() - 2));
            if (std::find(sections.begin(), sections.end(), section) == sections.end()) {
                errors.push_back({lineno, "unknown section [" + section + "]"});
                section = "?";
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back({lineno, "expected 'key = value', got '" + line + "'"});
            continue;
        }
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        if (section.empty()) {
            errors.push_back({lineno, "key '" + key + "' appears before any [section]"});
            continue;
        }
        if (section == "?") continue;  // already reported
        const auto& table = detail::fields();
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const detail::Field& f) { return f.section == section && f.key == key; });
        if (it == table.end()) {
            errors.push_back({lineno, "unknown key '" + key + "' in [" + section + "]"});
            continue;
        }
        const auto full = section + "." + key;
        if (auto prev = seen.find(full); prev != seen.end()) {
            errors.push_back({lineno, "duplicate key '" + full + "' (first set on line " +
                                          std::to_string(prev->second) + ")"});
            continue;
        }
        seen[full] = lineno;
        try {
            it->set(cfg, value);
        } catch (const std::invalid_argument& e) {
            errors.push_back({lineno, full + " = " + value + ": " + e.what()});
        }
    }
    for (const auto& f : detail::fields())
        if (f.required && !seen.count(f.section + "." + f.key))
            errors.push_back({0, "missing required key '" + f.section + "." + f.key + "'"});

    // Cross-field checks.
    if (seen.count("family.task_order")) {
        auto sorted = cfg.task_order;
        std::sort(sorted.begin(), sorted.end());
        bool perm = sorted.size() == cfg.family.num_tasks;
        for (std::size_t i = 0; perm && i < sorted.size(); ++i) perm = sorted[i] == i;
        if (!perm)
            errors.push_back({seen["family.task_order"], "family.task_order must be a permutation of 0.." +
                                                             std::to_string(cfg.family.num_tasks - 1)});
    }
    if (cfg.family.noise_scale >= cfg.family.drop_threshold)
        errors.push_back({seen.count("family.noise_scale") ? seen["family.noise_scale"] : 0,
                          "family.noise_scale must be smaller than family.drop_threshold"});
    if (cfg.buffer_sizes.empty()) cfg.buffer_sizes = detail::default_buffer_sizes(cfg.demo_episodes);

    if (!errors.empty()) throw ConfigError(std::move(errors));
    // Identity order is stored implicitly so that emit/parse round-trips compare equal.
    if (cfg.task_order == cfg.stream_order() && !cfg.task_order.empty()) {
        std::vector<std::uint32_t> id(cfg.family.num_tasks);
        for (std::uint32_t i = 0; i < cfg.family.num_tasks; ++i) id[i] = i;
        if (cfg.task_order == id) cfg.task_order.clear();
    }
    return cfg;
}

/// Canonical text of one section.
inline std::string emit_section(const ExperimentConfig& cfg, const std::string& section) {
    std::ostringstream os;
    os << "[" << section << "]\n";
    for (const auto& f : detail::fields())
        if (f.section == section) {
            const auto v = f.get(cfg);
            if (v.empty()) continue;
            os << f.key << " = " << v << "\n";
        }
    return os.str();
}

inline std::string emit_config(const ExperimentConfig& cfg) {
    std::string s;
    for (const auto& sec : detail::section_order()) s += emit_section(cfg, sec) + "\n";
    return s;
}

/// Hash of every setting that can change results ([output] is excluded).
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::string s;
    for (const auto& sec : detail::section_order())
        if (sec != "output") s += emit_section(cfg, sec);
    return io::hex64(io::fnv1a64(s));
}

}  // namespace cpd::bench
