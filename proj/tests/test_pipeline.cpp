#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "cpd/bench/pipeline.hpp"
#include "cpd/bench/verify.hpp"
#include "test_util.hpp"

using namespace cpd;
using namespace cpd::bench;

namespace {

ExperimentConfig tiny(const fs::path& out) {
    ExperimentConfig c;
    c.family.num_tasks = 2;
    c.family.master_seed = 3;
    c.family.episode_length = 30;
    c.ppo.total_steps = 1200;
    c.ppo.n_envs = 2;
    c.ppo.n_steps_per_update = 400;
    c.ppo.epochs = 2;
    c.ppo.eval_every_episodes = 10;
    c.ppo.eval_episodes = 2;
    c.demo_episodes = 6;
    c.distill.epochs = 2;
    c.distill.batch_size = 64;
    c.buffer_sizes = {6, 2};
    c.seeds = {0, 1};
    c.eval_episodes = 2;
    c.output_dir = out.string();
    return c;
}

std::vector<std::string> run_logged(const ExperimentConfig& c, AggregateReport* rep = nullptr) {
    std::vector<std::string> log;
    auto r = run_pipeline(c, [&](const std::string& m) { log.push_back(m); });
    if (rep) *rep = std::move(r);
    return log;
}

std::size_t count_containing(const std::vector<std::string>& log, const std::string& s) {
    std::size_t n = 0;
    for (const auto& l : log) n += l.find(s) != std::string::npos;
    return n;
}

struct ScopedEnv {
    explicit ScopedEnv(const std::string& v) { ::setenv("CPD_CACHE_DIR", v.c_str(), 1); }
    ~ScopedEnv() { ::unsetenv("CPD_CACHE_DIR"); }
};

}  // namespace

TEST(Pipeline, SecondRunUsesCacheAndIsByteIdentical) {
    const auto dir = cpd::testing::scratch_dir("pipe_cache");
    const auto cfg = tiny(dir / "out");
    AggregateReport a, b;
    const auto first = run_logged(cfg, &a);
    EXPECT_EQ(count_containing(first, ": initial "), 4u);  // 2 seeds x 2 tasks trained
    const auto files_a = emit_report(a, dir / "rep_a");
    const auto second = run_logged(cfg, &b);
    EXPECT_EQ(count_containing(second, ": initial "), 0u);
    EXPECT_EQ(count_containing(second, ": cached"), 2 * count_containing(first, ": cached"));
    const auto files_b = emit_report(b, dir / "rep_b");
    ASSERT_EQ(files_a.size(), files_b.size());
    for (std::size_t i = 0; i < files_a.size(); ++i) EXPECT_EQ(io::read_file(files_a[i]), io::read_file(files_b[i]));

    // 6 strategies: 4 replay x 2 sizes + Naive + Cumulative; loss cells MSE, NLL, KL.
    EXPECT_EQ(a.cells.size(), 10u);
    ASSERT_EQ(a.loss_cells.size(), 3u);
    EXPECT_EQ(a.loss_cells[2].key.loss, distill::LossKind::KL);
    EXPECT_EQ(a.experts.size(), 4u);
    for (const auto& c : a.cells) {
        EXPECT_EQ(c.runs.size(), 2u);
        for (const auto& r : c.runs) EXPECT_EQ(avg_seen_tasks(r), avg_seen_tasks(r.rows, r.task_order));
    }
}

TEST(Pipeline, CachedExpertReproducesItsScore) {
    const auto dir = cpd::testing::scratch_dir("pipe_sound");
    auto cfg = tiny(dir / "out");
    cfg.seeds = {5};
    PipelineContext ctx(cfg);
    const auto fresh = obtain_expert_run(ctx, 1, 5, 0);
    const auto cached = obtain_expert_run(ctx, 1, 5, 0);
    EXPECT_EQ(ppo::encode_expert(fresh), ppo::encode_expert(cached));
    const auto eval = ppo::evaluate_policy(cached.params, ctx.specs[1], cfg.ppo.eval_episodes, cached.eval_seed);
    EXPECT_EQ(eval.mean_z_rotation, cached.best_eval_score);
}

TEST(Pipeline, SingleStrategySingleSeed) {
    const auto dir = cpd::testing::scratch_dir("pipe_naive");
    auto cfg = tiny(dir / "out");
    cfg.strategies = {replay::StrategyKind::Naive};
    cfg.loss_comparison.clear();
    cfg.seeds = {2};
    AggregateReport rep;
    run_logged(cfg, &rep);
    ASSERT_EQ(rep.cells.size(), 1u);
    EXPECT_TRUE(rep.loss_cells.empty());
    ASSERT_EQ(rep.cells[0].runs.size(), 1u);
    EXPECT_EQ(rep.cells[0].runs[0].rows.size(), 2u);
    const auto files = emit_report(rep, dir / "rep");
    EXPECT_EQ(std::distance(fs::directory_iterator(dir / "rep" / "runs"), fs::directory_iterator()), 1);
}

TEST(Pipeline, CacheDirectoryOverrideAndCorruptEntries) {
    const auto dir = cpd::testing::scratch_dir("pipe_env");
    auto cfg = tiny(dir / "out");
    cfg.strategies = {replay::StrategyKind::Naive};
    cfg.loss_comparison.clear();
    cfg.seeds = {0};
    {
        ScopedEnv env((dir / "shared").string());
        EXPECT_EQ(resolve_workspace(cfg).cache_dir, dir / "shared");
        run_logged(cfg);
        EXPECT_TRUE(fs::exists(dir / "shared" / "experts"));
        EXPECT_FALSE(fs::exists(dir / "out" / "cache"));
        // Damage one cached expert and one demonstration: both are rebuilt, results unchanged.
        const auto before = io::read_text(dir / "out" / "runs" / "score_Naive_Mall_KL_seed0.csv");
        auto e = fs::directory_iterator(dir / "shared" / "experts")->path();
        auto bytes = io::read_file(e);
        bytes[bytes.size() / 2] ^= 0xff;
        io::write_file(e, bytes);
        io::write_text(fs::directory_iterator(dir / "shared" / "demos")->path(), "garbage");
        const auto log = run_logged(cfg);
        EXPECT_EQ(count_containing(log, "unreadable"), 2u);
        EXPECT_EQ(io::read_text(dir / "out" / "runs" / "score_Naive_Mall_KL_seed0.csv"), before);
    }
    EXPECT_EQ(resolve_workspace(cfg).cache_dir, dir / "out" / "cache");
}

TEST(Pipeline, FailuresWriteAManifest) {
    const auto dir = cpd::testing::scratch_dir("pipe_fail");
    auto cfg = tiny(dir / "out");
    cfg.strategies = {replay::StrategyKind::Naive};
    cfg.loss_comparison.clear();
    cfg.seeds = {0, 1};
    // Cells cannot persist their run files when "runs" is a regular file.
    fs::create_directories(dir / "out");
    io::write_text(dir / "out" / "runs", "in the way");
    try {
        run_logged(cfg);
        FAIL() << "expected PipelineError";
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.failures().size(), 2u);
        EXPECT_EQ(e.failures()[0].phase, "cpd");
    }
    const auto manifest = io::read_text(dir / "out" / "failure_manifest.txt");
    EXPECT_EQ(manifest.rfind("# config_hash=" + config_hash(cfg), 0), 0u);
    // Experts and demonstrations finished before the failure and stay cached.
    EXPECT_EQ(std::distance(fs::directory_iterator(dir / "out" / "cache" / "experts"), fs::directory_iterator()), 4);
}

TEST(Pipeline, CellPlanAndSeeds) {
    auto cfg = tiny("x");
    const auto [grid, extra] = cell_plan(cfg);
    EXPECT_EQ(grid.size(), 10u);
    EXPECT_EQ(extra.size(), 2u);  // KL Cumulative is already in the grid
    EXPECT_NE(expert_train_seed(0, 0, 0), expert_train_seed(0, 0, 1));
    EXPECT_NE(expert_train_seed(0, 1, 0), expert_train_seed(1, 0, 0));
    EXPECT_NE(demo_seed(0, 0), demo_seed(0, 1));
    auto other = cfg;
    other.ppo.learning_rate *= 2;
    PipelineContext a(cfg), b(other);
    EXPECT_NE(expert_key(a.cfg, a.specs[0], 0, 0), expert_key(b.cfg, b.specs[0], 0, 0));
    other = cfg;
    other.distill.epochs = 9;
    PipelineContext c(other);
    EXPECT_EQ(expert_key(a.cfg, a.specs[0], 0, 0), expert_key(c.cfg, c.specs[0], 0, 0));
    std::vector<int> hits(7, 0);
    const auto errs = parallel_for(7, 3, [&](std::size_t i) {
        hits[i] += 1;
        if (i == 4) throw std::runtime_error("boom");
    });
    EXPECT_EQ(hits, std::vector<int>(7, 1));
    EXPECT_TRUE(errs[4]);
    EXPECT_EQ(what_of(errs[4]), "boom");
}

TEST(Pipeline, ThreadCountDoesNotChangeResults) {
    const auto dir = cpd::testing::scratch_dir("pipe_threads");
    auto cfg = tiny(dir / "one");
    cfg.strategies = {replay::StrategyKind::ReplayRPR, replay::StrategyKind::ReplayEX};
    cfg.loss_comparison.clear();
    AggregateReport a, b;
    run_logged(cfg, &a);
    cfg.threads = 3;
    cfg.output_dir = (dir / "three").string();
    run_logged(cfg, &b);
    EXPECT_EQ(aggregate_csv(a), aggregate_csv(b));
    EXPECT_EQ(matrices_csv(a), matrices_csv(b));
}

TEST(Cli, VerifyAndConfigErrors) {
    const auto dir = cpd::testing::scratch_dir("cli");
    const auto fam = env::encode_family(1, env::make_task_family(2, 1));
    io::write_file(dir / "f.cpdt", fam);
    const std::string exe = CPD_BENCH_EXE;
    EXPECT_EQ(std::system((exe + " verify " + (dir / "f.cpdt").string() + " > /dev/null").c_str()), 0);
    auto bad = fam;
    bad.back() ^= 1;
    io::write_file(dir / "g.cpdt", bad);
    EXPECT_NE(std::system((exe + " verify " + (dir / "g.cpdt").string() + " > /dev/null").c_str()), 0);
    io::write_text(dir / "bad.ini", "[ppo]\ngamma = 2\n");
    const int rc = std::system((exe + " report " + (dir / "bad.ini").string() + " 2> /dev/null").c_str());
    EXPECT_TRUE(WIFEXITED(rc));
    EXPECT_EQ(WEXITSTATUS(rc), 2);
    EXPECT_EQ(std::system((exe + " verify " + std::string(CPD_CONFIG_DIR) + "/desk.ini > /dev/null").c_str()), 0);
}
