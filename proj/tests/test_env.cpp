#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cpd/env.hpp"
#include "test_util.hpp"

using namespace cpd::env;

namespace {

ObjectSpec hand_spec() {
    ObjectSpec s;
    s.num_objects = 2;
    s.object_id = 1;
    s.episode_length = 10;
    s.noise_scale = 0.0;
    s.drop_threshold = 1.0;
    s.gain[kPhi][0] = 0.1;
    s.gain[kX][1] = 0.3;
    for (std::size_t i = 0; i < kPoseDim; ++i) s.coupling[i][i] = 1.0;
    s.seed_base = 5;
    return s;
}

std::vector<double> action(std::initializer_list<double> head) {
    std::vector<double> a(kActionDim, 0.0);
    std::copy(head.begin(), head.end(), a.begin());
    return a;
}

}  // namespace

TEST(RewardFn, HandValues) {
    const Pose zero{};
    EXPECT_EQ(reward_fn(zero, zero), 0.0);
    const Pose p{0, 0, 0, 1.5, -2.0, 3.0};
    EXPECT_EQ(reward_fn(p, p), 0.0);

    Pose curr{};
    curr.phi = 0.2;
    curr.psi = 0.1;
    curr.x = 0.05;
    EXPECT_EQ(reward_fn(zero, curr), 1000.0 * 0.2 - 0.1 - 0.05);
    EXPECT_NEAR(reward_fn(zero, curr), 199.85, 1e-12);

    Pose back{};
    back.phi = -0.1;
    EXPECT_EQ(reward_fn(zero, back), -100.0);

    Pose z_only{};
    z_only.z = 4.0;
    EXPECT_EQ(reward_fn(zero, z_only), 0.0);
}

TEST(TaskFamily, SizesDeterminismAndDistance) {
    const auto one = make_task_family(1, 3);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].object_id, 0u);

    const auto a = make_task_family(5, 42);
    const auto b = make_task_family(5, 42);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, make_task_family(5, 43));
    int pairs = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].object_id, i);
        EXPECT_EQ(a[i].num_objects, 5u);
        EXPECT_NO_THROW(a[i].validate());
        for (std::size_t j = i + 1; j < a.size(); ++j, ++pairs) {
            double s = 0;
            for (std::size_t r = 0; r < kPoseDim; ++r)
                for (std::size_t c = 0; c < kActionDim; ++c) s += std::pow(a[i].gain[r][c] - a[j].gain[r][c], 2);
            EXPECT_GE(std::sqrt(s), kMinTaskDistance);
        }
    }
    EXPECT_EQ(pairs, 10);
    EXPECT_THROW(make_task_family(0, 1), std::invalid_argument);
}

TEST(TaskFamily, GaitPatternsAreOrthogonal) {
    FamilyConfig cfg;
    cfg.num_tasks = 7;
    const auto fam = make_task_family(cfg);
    for (std::size_t i = 0; i < fam.size(); ++i)
        for (std::size_t j = i + 1; j < fam.size(); ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < kActionDim; ++c)
                dot += (fam[i].gain[kPhi][c] > 0 ? 1 : -1) * (fam[j].gain[kPhi][c] > 0 ? 1 : -1);
            EXPECT_EQ(dot, 0.0) << i << "," << j;
        }
}

TEST(TaskFamily, UnreachableDistanceIsRejected) {
    FamilyConfig cfg;
    cfg.num_tasks = 9;  // beyond the orthogonal set, patterns may repeat
    cfg.phi_rate = 1e-3;
    cfg.drift_scale = 0.0;
    cfg.coupling_scale = 0.0;
    EXPECT_THROW(make_task_family(cfg), std::runtime_error);
}

TEST(EnvReset, FixedInitialPoseAndSeededStream) {
    const auto spec = make_task_family(2, 1)[0];
    const auto s1 = env_reset(spec, 10);
    const auto s2 = env_reset(spec, 10);
    const auto s3 = env_reset(spec, 11);
    EXPECT_EQ(s1.pose, Pose{});
    EXPECT_EQ(s3.pose, Pose{});
    EXPECT_FALSE(s1.done);
    EXPECT_EQ(s1.step_index, 0u);
    EXPECT_TRUE(s1.rng == s2.rng);
    EXPECT_EQ(s1.grip, s2.grip);
    EXPECT_FALSE(s1.rng == s3.rng);
}

TEST(EnvReset, GripFactorRange) {
    auto spec = make_task_family(1, 1)[0];
    for (std::uint64_t e = 0; e < 200; ++e) {
        const auto s = env_reset(spec, e);
        EXPECT_GE(s.grip, 1.0 - spec.grip_spread);
        EXPECT_LT(s.grip, 1.0 + spec.grip_spread);
    }
    spec.grip_spread = 0.0;
    EXPECT_EQ(env_reset(spec, 3).grip, 1.0);
}

TEST(EnvStep, NullDynamicsAndExactReward) {
    auto spec = hand_spec();
    auto s = env_reset(spec, 0);
    auto r = env_step(s, action({}));
    EXPECT_EQ(s.pose, Pose{});
    EXPECT_EQ(r.reward, 0.0);

    s = env_reset(spec, 0);
    r = env_step(s, action({1.0}));
    EXPECT_NEAR(s.pose.phi, 0.1, 1e-15);
    EXPECT_EQ(s.pose.x, 0.0);
    EXPECT_NEAR(r.reward, 100.0, 1e-10);
}

TEST(EnvStep, ActionsAreClamped) {
    const auto spec = hand_spec();
    auto a = env_reset(spec, 0), b = env_reset(spec, 0);
    env_step(a, action({7.0}));
    env_step(b, action({1.0}));
    EXPECT_EQ(a.pose, b.pose);
    EXPECT_EQ(a.prev_action[0], 1.0);
}

TEST(EnvStep, ObservationLayout) {
    const auto fam = make_task_family(3, 9);
    auto s = env_reset(fam[2], 4);
    const auto o0 = observe(s);
    ASSERT_EQ(o0.size(), 6u + 8u + 3u);
    const auto r = env_step(s, action({0.5, -2.0}));
    ASSERT_EQ(r.observation.size(), 17u);
    EXPECT_EQ(r.observation[6], 0.5);
    EXPECT_EQ(r.observation[7], -1.0);
    for (const auto* o : {&o0, &r.observation}) {
        const double sum = std::accumulate(o->begin() + 14, o->end(), 0.0);
        EXPECT_EQ(sum, 1.0);
        EXPECT_EQ((*o)[16], 1.0);
    }
}

TEST(EnvStep, DropTerminatesWithPenalty) {
    auto spec = hand_spec();
    auto s = env_reset(spec, 0);
    // x grows by 0.3 per step; |x| > 1 first happens on step 4.
    for (int t = 1; t <= 3; ++t) EXPECT_FALSE(env_step(s, action({0.0, 1.0})).done);
    const auto last = env_step(s, action({0.0, 1.0}));
    EXPECT_TRUE(last.done);
    EXPECT_TRUE(s.dropped);
    EXPECT_EQ(s.step_index, 4u);
    EXPECT_NEAR(last.reward, -0.3 + kDropPenalty, 1e-12);
    EXPECT_THROW(env_step(s, action({})), std::logic_error);
}

TEST(EnvStep, EpisodeLengthAndBadAction) {
    auto spec = hand_spec();
    auto s = env_reset(spec, 0);
    for (std::uint32_t t = 0; t < spec.episode_length; ++t) EXPECT_EQ(env_step(s, action({1.0})).done, t + 1 == 10);
    EXPECT_FALSE(s.dropped);
    auto fresh = env_reset(spec, 0);
    EXPECT_THROW(env_step(fresh, std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(EnvStep, ReplayIsDeterministicAndTelescopes) {
    const auto fam = make_task_family(3, 2);
    cpd::Rng arng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto& spec = fam[trial % 3];
        std::vector<std::vector<double>> acts;
        for (std::uint32_t t = 0; t < spec.episode_length; ++t) acts.push_back(cpd::testing::random_vector(arng, 8, -1.5, 1.5));
        auto run = [&](std::vector<double>& rewards, std::vector<Pose>& poses) {
            auto s = env_reset(spec, 100 + trial);
            poses.push_back(s.pose);
            for (const auto& a : acts) {
                const auto r = env_step(s, a);
                rewards.push_back(r.reward);
                poses.push_back(s.pose);
                if (r.done) break;
            }
        };
        std::vector<double> r1, r2;
        std::vector<Pose> p1, p2;
        run(r1, p1);
        run(r2, p2);
        ASSERT_EQ(r1, r2);
        ASSERT_EQ(p1, p2);

        double phi_part = 0.0, deltas = 0.0;
        for (std::size_t t = 1; t < p1.size(); ++t) {
            phi_part += 1000.0 * (p1[t].phi - p1[t - 1].phi);
            deltas += p1[t].phi - p1[t - 1].phi;
        }
        const double z = episode_z_rotation(p1);
        EXPECT_NEAR(phi_part, 1000.0 * z, 1e-9);
        EXPECT_NEAR(deltas, z, 1e-9);
    }
}

TEST(EpisodeZRotation, Examples) {
    std::vector<Pose> flat(5, Pose{0, 0, 0, 12.0, 0, 0});
    EXPECT_EQ(episode_z_rotation(flat), 0.0);
    std::vector<Pose> quarter;
    for (int i = 0; i <= 7; ++i) quarter.push_back(Pose{0, 0, 0, 90.0 * i / 7.0, 0, 0});
    EXPECT_NEAR(episode_z_rotation(quarter), 90.0, 1e-12);
    EXPECT_THROW(episode_z_rotation(std::vector<Pose>{}), std::invalid_argument);
    EXPECT_THROW(episode_z_rotation(std::vector<Pose>(1)), std::invalid_argument);
}

TEST(ObjectSpec, Validation) {
    auto s = hand_spec();
    EXPECT_NO_THROW(s.validate());
    auto bad = s;
    bad.noise_scale = 2.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = s;
    bad.gain[kPhi][0] = -0.1;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = s;
    bad.object_id = 2;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = s;
    bad.grip_spread = 1.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(FamilyFile, RoundTripAndCorruption) {
    const auto fam = make_task_family(4, 77);
    const auto bytes = encode_family(77, fam);
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CPDT");
    const auto back = decode_family(bytes);
    EXPECT_EQ(back.master_seed, 77u);
    EXPECT_EQ(back.specs, fam);
    auto bad = bytes;
    bad[20] ^= 0x40;
    EXPECT_THROW(decode_family(bad), cpd::io::FormatError);
}
