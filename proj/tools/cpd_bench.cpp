#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "cpd/cpd.hpp"

namespace {

using namespace cpd;
using namespace cpd::bench;

ExperimentConfig load_config(const std::string& path) {
    const auto text = io::read_text(path);
    try {
        return parse_config(text);
    } catch (const ConfigError& e) {
        for (const auto& d : e.diagnostics())
            std::cerr << path << ":" << (d.line ? std::to_string(d.line) + ":" : std::string{}) << " " << d.message
                      << "\n";
        throw;
    }
}

Logger make_logger(bool quiet) {
    if (quiet) return {};
    return [](const std::string& m) { std::cerr << "[cpd] " << m << "\n"; };
}

void print_matrix(const ScoreMatrix& m) {
    const auto seen = avg_seen_tasks(m);
    std::printf("%-12s", "experience");
    for (std::size_t t = 0; t < m.task_order.size(); ++t) std::printf(" %10s", task_name(static_cast<std::uint32_t>(t)).c_str());
    std::printf(" %10s\n", "avg_seen");
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
        std::printf("%-12s", task_name(m.task_order[r]).c_str());
        for (double v : m.rows[r]) std::printf(" %10.2f", v);
        std::printf(" %10.2f\n", seen[r]);
    }
}

int cmd_train_experts(const std::string& path, std::uint32_t threads, bool quiet) {
    auto cfg = load_config(path);
    if (threads) cfg.threads = threads;
    PipelineContext ctx(cfg, make_logger(quiet));
    persist_family(ctx);
    if (const auto f = train_experts(ctx, cfg.seeds); !f.empty()) {
        const auto manifest = write_failure_manifest(ctx.ws, ctx.hash, f);
        for (const auto& x : f) std::cerr << x.phase << ": " << x.item << ": " << x.message << "\n";
        std::cerr << "failure manifest: " << manifest << "\n";
        return 1;
    }
    std::printf("%-6s %-6s %12s %12s %s\n", "seed", "task", "initial", "best", "status");
    for (auto s : cfg.seeds) {
        const auto art = prepare_seed(ctx, s);
        for (const auto& e : art.experts)
            std::printf("%-6llu %-6s %12.2f %12.2f %s\n", static_cast<unsigned long long>(e.seed),
                        task_name(e.task).c_str(), e.initial_score, e.best_score, e.diverged ? "diverged" : "ok");
    }
    std::printf("cache: %s\n", ctx.ws.cache_dir.string().c_str());
    return 0;
}

int cmd_sample_demos(const std::string& path, std::uint32_t threads, bool quiet) {
    auto cfg = load_config(path);
    if (threads) cfg.threads = threads;
    PipelineContext ctx(cfg, make_logger(quiet));
    persist_family(ctx);
    std::printf("%-6s %-6s %9s %14s %14s\n", "seed", "task", "episodes", "mean_reward", "mean_z_rot");
    for (auto s : cfg.seeds) {
        const auto art = prepare_seed(ctx, s);
        for (const auto& d : art.stream) {
            double r = 0, z = 0;
            for (const auto& ep : d.episodes) {
                r += ep.episodic_reward;
                z += ep.z_rotation;
            }
            const double n = static_cast<double>(d.count());
            std::printf("%-6llu %-6s %9zu %14.2f %14.2f\n", static_cast<unsigned long long>(s),
                        task_name(d.object_id).c_str(), d.count(), r / n, z / n);
        }
    }
    return 0;
}

int cmd_cpd(const std::string& path, const std::string& strategy, std::size_t buffer, std::uint64_t seed,
            const std::string& loss, bool quiet) {
    auto cfg = load_config(path);
    PipelineContext ctx(cfg, make_logger(quiet));
    const auto s = replay::strategy_from_string(strategy);
    const auto l = loss.empty() ? cfg.distill.loss : distill::loss_from_string(loss);
    const auto art = prepare_seed(ctx, seed);
    const auto m = run_cell(ctx, art, make_cell_key(s, buffer, l));
    const auto file = persist_run(ctx, m);
    std::printf("%s, M = %s, %s loss, seed %llu\n", strategy.c_str(), capacity_label(m.key.capacity).c_str(),
                distill::to_string(l).c_str(), static_cast<unsigned long long>(seed));
    print_matrix(m);
    std::printf("wrote %s\n", file.string().c_str());
    return 0;
}

int cmd_report(const std::string& path, std::uint32_t threads, bool quiet) {
    auto cfg = load_config(path);
    if (threads) cfg.threads = threads;
    const auto rep = run_pipeline(cfg, make_logger(quiet));
    const auto files = emit_report(rep, cfg.output_dir);
    std::printf("final avg-seen-task score (mean +- std over %zu seeds, %s loss)\n", rep.seeds.size(),
                distill::to_string(rep.main_loss).c_str());
    std::printf("%-12s", "M");
    for (auto s : rep.strategies) std::printf(" %18s", replay::to_string(s).c_str());
    std::printf("\n");
    for (auto m : rep.buffer_sizes) {
        std::printf("%-12zu", m);
        for (auto s : rep.strategies) {
            const auto f = rep.find(make_cell_key(s, m, rep.main_loss))->final_avg();
            std::printf("   %7.2f +- %6.2f", f.mean, f.std);
        }
        std::printf("\n");
    }
    if (!rep.loss_cells.empty()) {
        std::printf("Cumulative by loss:");
        for (const auto& c : rep.loss_cells)
            std::printf("  %s %.2f", distill::to_string(c.key.loss).c_str(), c.final_avg().mean);
        std::printf("\n");
    }
    std::printf("wrote %zu files under %s\n", files.size(), cfg.output_dir.c_str());
    return 0;
}

int cmd_verify(const std::vector<std::string>& files) {
    int bad = 0;
    for (const auto& f : files) {
        try {
            const auto r = verify_file(f);
            std::printf("OK    %s: %s (%s)\n", f.c_str(), r.kind.c_str(), r.summary.c_str());
        } catch (const std::exception& e) {
            std::printf("FAIL  %s: %s\n", f.c_str(), e.what());
            ++bad;
        }
    }
    return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual policy distillation workbench"};
    app.require_subcommand(1);
    bool quiet = false;
    std::uint32_t threads = 0;
    app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

    std::string config;
    auto* train = app.add_subcommand("train-experts", "Train (or load cached) PPO experts for every seed and task");
    train->add_option("config", config, "Experiment config")->required()->check(CLI::ExistingFile);
    train->add_option("--threads", threads, "Worker threads (overrides the config)");

    auto* demos = app.add_subcommand("sample-demos", "Sample expert demonstrations for every seed and task");
    demos->add_option("config", config, "Experiment config")->required()->check(CLI::ExistingFile);
    demos->add_option("--threads", threads, "Worker threads (overrides the config)");

    std::string strategy, loss;
    std::size_t buffer = 0;
    std::uint64_t seed = 0;
    auto* cpd_cmd = app.add_subcommand("cpd", "Run one distillation cell and write its score matrix");
    cpd_cmd->add_option("config", config, "Experiment config")->required()->check(CLI::ExistingFile);
    cpd_cmd->add_option("--strategy", strategy, "Naive, Cumulative, ReplayBR, ReplayEX, ReplayRP or ReplayRPR")->required();
    cpd_cmd->add_option("--buffer", buffer, "Buffer capacity M (ignored by Naive and Cumulative)")->required();
    cpd_cmd->add_option("--seed", seed, "Pipeline seed")->required();
    cpd_cmd->add_option("--loss", loss, "Distillation loss (defaults to the config)");

    auto* report = app.add_subcommand("report", "Run the full sweep and emit CSV tables and SVG plots");
    report->add_option("config", config, "Experiment config")->required()->check(CLI::ExistingFile);
    report->add_option("--threads", threads, "Worker threads (overrides the config)");

    std::vector<std::string> files;
    auto* verify = app.add_subcommand("verify", "Validate checksum and structure of artifact files");
    verify->add_option("file", files, "Artifact files")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train_experts(config, threads, quiet);
        if (*demos) return cmd_sample_demos(config, threads, quiet);
        if (*cpd_cmd) return cmd_cpd(config, strategy, buffer, seed, loss, quiet);
        if (*report) return cmd_report(config, threads, quiet);
        if (*verify) return cmd_verify(files);
    } catch (const ConfigError&) {
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
