#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cpd/bench/config.hpp"
#include "cpd/bench/metrics.hpp"
#include "cpd/bench/report.hpp"
#include "cpd/distill.hpp"
#include "cpd/env.hpp"
#include "cpd/ppo.hpp"
#include "cpd/replay.hpp"

namespace cpd::bench {

using Logger = std::function<void(const std::string&)>;

struct Workspace {
    fs::path output_dir;
    fs::path cache_dir;
};

/// `CPD_CACHE_DIR` wins over the config; the default is <output>/cache.
inline Workspace resolve_workspace(const ExperimentConfig& cfg) {
    Workspace ws;
    ws.output_dir = cfg.output_dir;
    if (const char* env = std::getenv("CPD_CACHE_DIR"); env && *env)
        ws.cache_dir = env;
    else if (!cfg.cache_dir.empty())
        ws.cache_dir = cfg.cache_dir;
    else
        ws.cache_dir = ws.output_dir / "cache";
    return ws;
}

/// Runs fn(0..n-1) on up to `threads` workers. Every index runs even if some throw;
/// the returned vector holds the exception (or null) per index.
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, std::uint32_t threads,
                                                    const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto w = std::min<std::size_t>(std::max<std::uint32_t>(threads, 1), n);
    if (w <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < w; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return errors;
}

inline std::string what_of(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception& ex) {
        return ex.what();
    } catch (...) {
        return "unknown error";
    }
}

struct Failure {
    std::string phase;
    std::string item;
    std::string message;
};

class PipelineError : public std::runtime_error {
public:
    PipelineError(std::vector<Failure> f, const fs::path& manifest)
        : std::runtime_error(std::to_string(f.size()) + " pipeline failure(s); see " + manifest.string()),
          failures_(std::move(f)) {}
    const std::vector<Failure>& failures() const { return failures_; }

private:
    std::vector<Failure> failures_;
};

inline fs::path write_failure_manifest(const Workspace& ws, const std::string& hash, const std::vector<Failure>& fs_) {
    const auto path = ws.output_dir / "failure_manifest.txt";
    std::string s = "# config_hash=" + hash + "\n";
    for (const auto& f : fs_) s += f.phase + "\t" + f.item + "\t" + f.message + "\n";
    io::write_text(path, s);
    return path;
}

// ---------------------------------------------------------------------------
// Seeds and cache keys

inline std::uint64_t expert_train_seed(std::uint64_t seed, std::uint32_t task, std::uint32_t run) {
    return mix_seed({seed, task, run, 0x657870ULL});
}
inline std::uint64_t demo_seed(std::uint64_t seed, std::uint32_t task) { return mix_seed({seed, task, 0x64656dULL}); }
inline std::uint64_t student_seed(std::uint64_t seed) { return mix_seed({seed, 0x737475ULL}); }

inline std::string expert_key(const ExperimentConfig& cfg, const env::ObjectSpec& spec, std::uint64_t seed,
                              std::uint32_t run) {
    io::ByteWriter w;
    env::write_spec(w, spec);
    w.str(emit_section(cfg, "ppo"));
    w.u64(seed);
    w.u32(run);
    return io::hex64(io::fnv1a64(w.take()));
}

inline std::string demo_key(const std::string& expert_keys, std::uint32_t episodes) {
    return io::hex64(io::fnv1a64(expert_keys + "/" + std::to_string(episodes)));
}

// ---------------------------------------------------------------------------

struct SeedArtifacts {
    std::uint64_t seed = 0;
    std::vector<ExpertSummary> experts;            // task-id order
    std::vector<distill::Demonstration> stream;    // experience order
};

struct PipelineContext {
    ExperimentConfig cfg;
    Workspace ws;
    std::string hash;
    std::vector<env::ObjectSpec> specs;  // task-id order
    Logger log;

    explicit PipelineContext(ExperimentConfig c, Logger l = {})
        : cfg(std::move(c)), ws(resolve_workspace(cfg)), hash(config_hash(cfg)), log(std::move(l)) {
        specs = env::make_task_family(cfg.family);
        for (auto t : cfg.stream_order())
            if (t >= specs.size()) throw std::invalid_argument("task_order references missing task");
    }

    void note(const std::string& m) const {
        static std::mutex mu;
        if (!log) return;
        std::lock_guard lk(mu);
        log(m);
    }

    replay::EvalBundle eval_bundle() const { return {specs, cfg.eval_episodes, cfg.eval_seed}; }
};

inline fs::path persist_family(const PipelineContext& ctx) {
    const auto bytes = env::encode_family(ctx.cfg.family.master_seed, ctx.specs);
    const auto path = ctx.ws.cache_dir / ("family_" + io::hex64(io::fnv1a64(bytes)) + ".cpdt");
    if (!fs::exists(path)) io::write_file(path, bytes);
    return path;
}

inline ppo::ExpertArtifact obtain_expert_run(const PipelineContext& ctx, std::uint32_t task, std::uint64_t seed,
                                             std::uint32_t run, std::string* key_out = nullptr) {
    const auto& spec = ctx.specs.at(task);
    const auto key = expert_key(ctx.cfg, spec, seed, run);
    if (key_out) *key_out = key;
    const auto path = ctx.ws.cache_dir / "experts" / (key + ".cpde");
    if (fs::exists(path)) {
        try {
            auto a = ppo::load_expert(path);
            ctx.note("expert " + task_name(task) + " seed " + std::to_string(seed) + " run " + std::to_string(run) +
                     ": cached");
            return a;
        } catch (const std::exception& e) {
            ctx.note("expert cache entry " + path.string() + " unreadable (" + e.what() + "); retraining");
        }
    }
    auto tc = ctx.cfg.ppo;
    tc.seed = expert_train_seed(seed, task, run);
    auto a = ppo::train_expert(spec, tc);
    ppo::save_expert(path, a);
    ctx.note("expert " + task_name(task) + " seed " + std::to_string(seed) + " run " + std::to_string(run) +
             ": initial " + csv_number(a.initial_eval_score) + " best " + csv_number(a.best_eval_score) +
             (a.diverged ? " (diverged)" : ""));
    return a;
}

inline bool better_expert(const ppo::ExpertArtifact& a, const ppo::ExpertArtifact& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    return a.best_eval_score > b.best_eval_score;
}

/// Trains (or loads) all expert runs for the given seeds, `threads` at a time.
inline std::vector<Failure> train_experts(const PipelineContext& ctx, const std::vector<std::uint64_t>& seeds) {
    struct Job {
        std::uint64_t seed;
        std::uint32_t task, run;
    };
    std::vector<Job> jobs;
    for (auto s : seeds)
        for (std::uint32_t t = 0; t < ctx.specs.size(); ++t)
            for (std::uint32_t r = 0; r < ctx.cfg.expert_runs; ++r) jobs.push_back({s, t, r});
    const auto errs =
        parallel_for(jobs.size(), ctx.cfg.threads, [&](std::size_t i) { obtain_expert_run(ctx, jobs[i].task, jobs[i].seed, jobs[i].run); });
    std::vector<Failure> out;
    for (std::size_t i = 0; i < jobs.size(); ++i)
        if (errs[i])
            out.push_back({"train-experts", "seed " + std::to_string(jobs[i].seed) + " " + task_name(jobs[i].task) +
                                                " run " + std::to_string(jobs[i].run),
                           what_of(errs[i])});
    return out;
}

/// Selected experts and their demonstrations for one seed.
inline SeedArtifacts prepare_seed(const PipelineContext& ctx, std::uint64_t seed) {
    SeedArtifacts art;
    art.seed = seed;
    std::vector<distill::Demonstration> by_task;
    for (std::uint32_t t = 0; t < ctx.specs.size(); ++t) {
        std::optional<ppo::ExpertArtifact> best;
        std::string keys;
        for (std::uint32_t r = 0; r < ctx.cfg.expert_runs; ++r) {
            std::string k;
            auto a = obtain_expert_run(ctx, t, seed, r, &k);
            keys += k;
            if (!best || better_expert(a, *best)) best = std::move(a);
        }
        ExpertSummary sum;
        sum.seed = seed;
        sum.task = t;
        sum.runs = ctx.cfg.expert_runs;
        sum.initial_score = best->initial_eval_score;
        sum.best_score = best->best_eval_score;
        sum.diverged = best->diverged;
        for (const auto& ep : best->training_curve) sum.training_rewards.push_back(ep.reward);
        art.experts.push_back(std::move(sum));

        const auto path = ctx.ws.cache_dir / "demos" / (demo_key(keys, ctx.cfg.demo_episodes) + ".cpdd");
        std::optional<distill::Demonstration> demo;
        if (fs::exists(path)) {
            try {
                demo = distill::load_demonstration(path);
            } catch (const std::exception& e) {
                ctx.note("demo cache entry " + path.string() + " unreadable (" + e.what() + "); resampling");
            }
        }
        if (!demo) {
            demo = distill::sample_demonstrations(*best, ctx.specs[t], ctx.cfg.demo_episodes, demo_seed(seed, t));
            distill::save_demonstration(path, *demo);
        }
        by_task.push_back(std::move(*demo));
    }
    for (auto t : ctx.cfg.stream_order()) art.stream.push_back(by_task[t]);
    return art;
}

inline replay::CpdSettings cell_settings(const PipelineContext& ctx, const CellKey& key, std::uint64_t seed) {
    replay::CpdSettings st;
    st.strategy = key.strategy;
    st.capacity = key.capacity;
    st.distill = ctx.cfg.distill;
    st.distill.loss = key.loss;
    st.student_arch = ppo::actor_arch(ctx.specs.front().observation_dim(), env::kActionDim, ctx.cfg.ppo);
    st.seed = student_seed(seed);
    return st;
}

/// One (seed, strategy, M, loss) cell: sequential distillation plus evaluation.
inline ScoreMatrix run_cell(const PipelineContext& ctx, const SeedArtifacts& art, const CellKey& key) {
    const auto res = replay::cpd_run(art.stream, cell_settings(ctx, key, art.seed), ctx.eval_bundle());
    ScoreMatrix m;
    m.key = key;
    m.seed = art.seed;
    m.task_order = ctx.cfg.stream_order();
    m.rows = res.score_matrix;
    return m;
}

inline fs::path persist_run(const PipelineContext& ctx, const ScoreMatrix& m) {
    const auto p = ctx.ws.output_dir / "runs" / run_file_name(m);
    io::write_text(p, score_matrix_csv(m, ctx.hash));
    return p;
}

/// Main grid cells followed by loss-comparison cells not already in the grid.
inline std::pair<std::vector<CellKey>, std::vector<CellKey>> cell_plan(const ExperimentConfig& cfg) {
    std::vector<CellKey> grid, extra;
    auto push_unique = [](std::vector<CellKey>& v, const CellKey& k) {
        if (std::find(v.begin(), v.end(), k) == v.end()) v.push_back(k);
    };
    for (auto s : cfg.strategies) {
        if (replay::uses_capacity(s))
            for (auto m : cfg.buffer_sizes) push_unique(grid, make_cell_key(s, m, cfg.distill.loss));
        else
            push_unique(grid, make_cell_key(s, 0, cfg.distill.loss));
    }
    for (auto l : cfg.loss_comparison) {
        const auto k = make_cell_key(replay::StrategyKind::Cumulative, 0, l);
        if (std::find(grid.begin(), grid.end(), k) == grid.end()) push_unique(extra, k);
    }
    return {grid, extra};
}

/// Experts, demonstrations, every cell for every seed, then the seed-level aggregate.
inline AggregateReport run_pipeline(const ExperimentConfig& cfg, Logger log = {}) {
    PipelineContext ctx(cfg, std::move(log));
    if (cfg.strategies.empty() || cfg.buffer_sizes.empty() || cfg.seeds.empty())
        throw std::invalid_argument("run_pipeline: strategy, buffer-size and seed lists must be non-empty");
    auto fail = [&](const std::vector<Failure>& f) {
        throw PipelineError(f, write_failure_manifest(ctx.ws, ctx.hash, f));
    };

    persist_family(ctx);
    if (auto f = train_experts(ctx, cfg.seeds); !f.empty()) fail(f);

    std::vector<SeedArtifacts> seeds(cfg.seeds.size());
    {
        const auto errs =
            parallel_for(seeds.size(), cfg.threads, [&](std::size_t i) { seeds[i] = prepare_seed(ctx, cfg.seeds[i]); });
        std::vector<Failure> f;
        for (std::size_t i = 0; i < errs.size(); ++i)
            if (errs[i]) f.push_back({"sample-demos", "seed " + std::to_string(cfg.seeds[i]), what_of(errs[i])});
        if (!f.empty()) fail(f);
    }

    const auto [grid, extra] = cell_plan(cfg);
    std::vector<CellKey> keys = grid;
    keys.insert(keys.end(), extra.begin(), extra.end());
    const auto n_cells = keys.size() * seeds.size();
    std::vector<ScoreMatrix> results(n_cells);
    const auto errs = parallel_for(n_cells, cfg.threads, [&](std::size_t i) {
        const auto& key = keys[i % keys.size()];
        const auto& art = seeds[i / keys.size()];
        results[i] = run_cell(ctx, art, key);
        persist_run(ctx, results[i]);
        ctx.note("cell " + cell_label(key) + " seed " + std::to_string(art.seed) + ": final avg " +
                 csv_number(avg_seen_tasks(results[i]).back()));
    });
    std::vector<Failure> f;
    for (std::size_t i = 0; i < n_cells; ++i)
        if (errs[i])
            f.push_back({"cpd", cell_label(keys[i % keys.size()]) + " seed " + std::to_string(seeds[i / keys.size()].seed),
                         what_of(errs[i])});
    if (!f.empty()) fail(f);

    AggregateReport rep;
    rep.config_hash = ctx.hash;
    rep.task_order = cfg.stream_order();
    rep.seeds = cfg.seeds;
    rep.buffer_sizes = cfg.buffer_sizes;
    rep.strategies = cfg.strategies;
    rep.main_loss = cfg.distill.loss;
    for (std::size_t c = 0; c < keys.size(); ++c) {
        std::vector<ScoreMatrix> runs;
        for (std::size_t s = 0; s < seeds.size(); ++s) runs.push_back(results[s * keys.size() + c]);
        auto agg = aggregate_cell(std::move(runs));
        const bool in_grid = c < grid.size();
        const bool compared = keys[c].strategy == replay::StrategyKind::Cumulative &&
                              std::find(cfg.loss_comparison.begin(), cfg.loss_comparison.end(), keys[c].loss) !=
                                  cfg.loss_comparison.end();
        if (in_grid && compared) rep.loss_cells.push_back(agg);
        (in_grid ? rep.cells : rep.loss_cells).push_back(std::move(agg));
    }
    // Loss rows follow the configured comparison order.
    std::vector<CellAggregate> ordered;
    for (auto l : cfg.loss_comparison)
        for (const auto& c : rep.loss_cells)
            if (c.key.loss == l) ordered.push_back(c);
    rep.loss_cells = std::move(ordered);
    for (const auto& s : seeds) rep.experts.insert(rep.experts.end(), s.experts.begin(), s.experts.end());
    return rep;
}

}  // namespace cpd::bench
