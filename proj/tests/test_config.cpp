#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cpd/bench/config.hpp"

using namespace cpd;
using namespace cpd::bench;

namespace {

const char* kMinimal = R"(
[family]
num_tasks = 3
master_seed = 7

[cpd]
seeds = 0, 1

[output]
dir = out/x
)";

std::string read(const std::string& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<Diagnostic> errors_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.diagnostics();
    }
    return {};
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
    const auto c = parse_config(kMinimal);
    EXPECT_EQ(c.family.num_tasks, 3u);
    EXPECT_EQ(c.family.master_seed, 7u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1}));
    EXPECT_EQ(c.output_dir, "out/x");
    const ppo::TrainConfig pd;
    EXPECT_EQ(c.ppo.clip_epsilon, pd.clip_epsilon);
    EXPECT_EQ(c.ppo.total_steps, pd.total_steps);
    EXPECT_EQ(c.distill.loss, distill::LossKind::KL);
    EXPECT_EQ(c.distill.expert_sigma, 1e-6);
    EXPECT_EQ(c.demo_episodes, 100u);
    EXPECT_EQ(c.buffer_sizes, (std::vector<std::size_t>{100, 10, 1}));
    EXPECT_EQ(c.strategies.size(), 6u);
    EXPECT_EQ(c.stream_order(), (std::vector<std::uint32_t>{0, 1, 2}));
}

TEST(Config, RangeErrorNamesKeyLineAndRange) {
    const auto d = errors_of(std::string(kMinimal) + "[ppo]\nclip_epsilon = 1.5\n");
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].line, 12u);
    EXPECT_NE(d[0].message.find("ppo.clip_epsilon"), std::string::npos);
    EXPECT_NE(d[0].message.find("(0, 1)"), std::string::npos) << d[0].message;
}

TEST(Config, ReportsEveryProblem) {
    const std::string text = R"([family]
num_tasks = zero
colour = red
[bogus]
x = 1
[ppo]
gamma = 1.5
gamma = 0.9
just some words
[output]
dir = o
)";
    const auto d = errors_of(text);
    // bad integer, unknown key, unknown section, bad range, duplicate, no '=', missing seeds + master_seed
    ASSERT_EQ(d.size(), 8u);
    EXPECT_EQ(d[0].line, 2u);
    EXPECT_EQ(d[1].line, 3u);
    EXPECT_EQ(d[2].line, 4u);
    EXPECT_EQ(d[3].line, 7u);
    EXPECT_EQ(d[4].line, 8u);
    EXPECT_EQ(d[5].line, 9u);
    EXPECT_EQ(d[6].line, 0u);
    std::string all;
    for (const auto& x : d) all += x.message + "\n";
    EXPECT_NE(all.find("family.master_seed"), std::string::npos);
    EXPECT_NE(all.find("cpd.seeds"), std::string::npos);
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos);
    }
}

TEST(Config, TypeAndCrossFieldChecks) {
    EXPECT_FALSE(errors_of(std::string(kMinimal) + "[ppo]\nn_envs = -3\n").empty());
    EXPECT_FALSE(errors_of(std::string(kMinimal) + "[ppo]\nn_envs = 2.5\n").empty());
    EXPECT_FALSE(errors_of(std::string(kMinimal) + "[distill]\nloss = L1\n").empty());
    EXPECT_FALSE(errors_of(std::string(kMinimal) + "[cpd]\nstrategies = Naive, Magic\n").empty());
    EXPECT_FALSE(errors_of(std::string(kMinimal) + "[distill]\nexpert_sigma = 0\n").empty());
    EXPECT_FALSE(errors_of(std::string("[family]\nnum_tasks = 3\nmaster_seed = 1\ntask_order = 0, 0, 1\n") +
                           "[cpd]\nseeds = 1\n[output]\ndir = o\n")
                     .empty());
    EXPECT_FALSE(errors_of(std::string("[family]\nnum_tasks = 3\nmaster_seed = 1\nnoise_scale = 20\n") +
                           "[cpd]\nseeds = 1\n[output]\ndir = o\n")
                     .empty());
    const auto c = parse_config(std::string("[family]\nnum_tasks = 3\nmaster_seed = 1\ntask_order = 2, 0, 1\n") +
                                "[cpd]\nseeds = 1\n[output]\ndir = o\n");
    EXPECT_EQ(c.stream_order(), (std::vector<std::uint32_t>{2, 0, 1}));
}

TEST(Config, CommentsCrlfAndWhitespace) {
    const std::string text =
        "# header\r\n[family]   \r\n  num_tasks=2 # two\r\nmaster_seed =  9\r\n[cpd]\r\nseeds=3,4 ,5\r\n[output]\r\ndir = a b\r\n";
    const auto c = parse_config(text);
    EXPECT_EQ(c.family.num_tasks, 2u);
    EXPECT_EQ(c.family.master_seed, 9u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
    EXPECT_EQ(c.output_dir, "a b");
}

TEST(Config, EmitParseRoundTrip) {
    for (const auto& path : {std::string(CPD_CONFIG_DIR) + "/desk.ini", std::string(CPD_CONFIG_DIR) + "/full.ini"}) {
        const auto c = parse_config(read(path));
        const auto text = emit_config(c);
        const auto d = parse_config(text);
        EXPECT_EQ(c, d) << path;
        EXPECT_EQ(emit_config(d), text);
        EXPECT_EQ(config_hash(c), config_hash(d));
    }
    auto c = parse_config(std::string(kMinimal) + "[ppo]\nlearning_rate = 0.000123456789012345\nhidden_sizes = 32, 16\n");
    EXPECT_EQ(parse_config(emit_config(c)), c);
}

TEST(Config, HashTracksResultsNotOutputLocation) {
    const auto a = parse_config(kMinimal);
    auto b = a;
    b.output_dir = "elsewhere";
    b.threads = 8;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.distill.epochs += 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ShippedPresets) {
    const auto desk = parse_config(read(std::string(CPD_CONFIG_DIR) + "/desk.ini"));
    EXPECT_EQ(desk.family.num_tasks, 3u);
    EXPECT_EQ(desk.seeds.size(), 5u);
    EXPECT_EQ(desk.ppo.total_steps, 100000u);
    EXPECT_EQ(desk.ppo.n_envs, 5u);
    EXPECT_EQ(desk.buffer_sizes, (std::vector<std::size_t>{desk.demo_episodes, desk.demo_episodes / 10,
                                                           desk.demo_episodes / 100}));
    const auto full = parse_config(read(std::string(CPD_CONFIG_DIR) + "/full.ini"));
    EXPECT_EQ(full.demo_episodes, 1000u);
    EXPECT_EQ(full.buffer_sizes, (std::vector<std::size_t>{1000, 100, 10}));
}
