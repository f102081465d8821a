#include "ucms/harness.hpp"
#include "ucms/verify.hpp"

#include <gtest/gtest.h>

using namespace ucms;

TEST(NaiveSchedule, HandTrace) {
    const std::vector<sim::OffloadJob> jobs{{0, 0.2, 1.0}, {1, 0.5, 0.5}, {2, 0.0, 3.0}};
    const auto out = verify::naive_schedule(jobs, {0.0, 0.0});
    ASSERT_EQ(out.size(), 3u);
    // u2 arrives first and takes CPU 0 until 3.0; u0 takes CPU 1 until 1.2;
    // u1 waits for CPU 1 and finishes at 1.7.
    EXPECT_EQ(out[0].user, 2);
    EXPECT_DOUBLE_EQ(out[0].finish_s, 3.0);
    EXPECT_EQ(out[1].user, 0);
    EXPECT_DOUBLE_EQ(out[1].finish_s, 1.2);
    EXPECT_EQ(out[2].user, 1);
    EXPECT_DOUBLE_EQ(out[2].start_s, 1.2);
    EXPECT_DOUBLE_EQ(out[2].finish_s, 1.7);
}

TEST(NaiveSchedule, BusyCpusDelayStart) {
    const std::vector<sim::OffloadJob> jobs{{0, 0.0, 1.0}};
    const auto out = verify::naive_schedule(jobs, {2.0, 0.5});
    EXPECT_DOUBLE_EQ(out[0].start_s, 0.5);
    EXPECT_DOUBLE_EQ(out[0].cpu_free_s, 0.5);
    std::vector<double> free{2.0, 0.5};
    const auto fast = sim::schedule_server(jobs, free);
    EXPECT_EQ(fast[0].finish_s, out[0].finish_s);
}

TEST(Oracles, QueueOracleAgrees) {
    const auto r = verify::queue_oracle(300, 5);
    EXPECT_TRUE(r.passed) << (r.failures.empty() ? "" : r.failures.front());
    EXPECT_EQ(r.cases, 300u);
}

TEST(Oracles, MatchingInvariantsAtSmokeScale) {
    const auto r = verify::matching_invariants(200, 3, harness::preset("smoke").env);
    EXPECT_TRUE(r.passed) << (r.failures.empty() ? "" : r.failures.front());
}

TEST(Oracles, EnvironmentInvariantsHoldForPresets) {
    for (const auto& name : {"full", "smoke", "stress"}) {
        const auto r = verify::environment_invariants(500, 11, harness::preset(name).env);
        EXPECT_TRUE(r.passed) << name << ": " << (r.failures.empty() ? "" : r.failures.front());
    }
}

TEST(Oracles, DeployedShapesCoverActorsAndCritics) {
    const auto shapes = verify::deployed_shapes(EnvConfig{}, {64, 512});
    ASSERT_FALSE(shapes.empty());
    bool actor = false;
    bool critic = false;
    for (const auto& s : shapes) {
        EXPECT_EQ(s.widths[1], 64);
        EXPECT_EQ(s.widths[2], 512);
        actor = actor || (s.output == nn::Activation::Sigmoid && s.widths.back() == 3);
        critic = critic || (s.output == nn::Activation::Identity && s.widths.back() == 1);
    }
    EXPECT_TRUE(actor);
    EXPECT_TRUE(critic);
}

TEST(Oracles, GradientCheckPassesOnSmallNets) {
    verify::GradCheckOptions opts;
    opts.nets = 10;
    const auto r = verify::gradient_check({4, 6, 5, 2}, nn::Activation::Relu, nn::Activation::Sigmoid, 9, opts);
    EXPECT_TRUE(r.passed) << r.detail;
    EXPECT_EQ(r.cases, 10u);
}

TEST(Oracles, SamplingLawOnFewVectors) {
    const auto r = verify::sampling_law(5, 20000, 0.01, 12);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Report, FailRecordsViolation) {
    verify::Report r;
    r.fail("boom");
    EXPECT_FALSE(r.passed);
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0], "boom");
}
