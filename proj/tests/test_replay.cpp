#include "ucms/errors.hpp"
#include "ucms/replay.hpp"
#include "ucms/verify.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace ucms;
using namespace ucms::replay;

namespace {

Experience make_exp(double reward, int users = 2, int dim = 3) {
    Experience e;
    e.num_users = users;
    e.state_dim = dim;
    e.states.assign(static_cast<std::size_t>(users * dim), 0.1);
    e.next_states.assign(static_cast<std::size_t>(users * dim), 0.2);
    e.actions.assign(static_cast<std::size_t>(users), hybrid::UserAction{0.5, 0.5, 0.5});
    e.approved.assign(static_cast<std::size_t>(users), 0);
    e.assignment.assign(static_cast<std::size_t>(users), 0);
    e.rewards.assign(static_cast<std::size_t>(users), reward);
    return e;
}

} // namespace

TEST(Priority, CompositeFormula) {
    EXPECT_NEAR(priority(-2.0, 0.5, 0.5, 0.5, 1e-6), 1.250001, 1e-12);
    EXPECT_DOUBLE_EQ(priority(0.0, 0.0, 0.5, 0.5, 1e-6), 1e-6);
    EXPECT_EQ(priority(3.0, 0.1, 1.0, 0.0, 1e-6), priority(3.0, 9.0, 1.0, 0.0, 1e-6));
}

TEST(Experience, ValidateCatchesLengthMismatch) {
    auto e = make_exp(1.0);
    EXPECT_NO_THROW(e.validate());
    EXPECT_DOUBLE_EQ(e.mean_reward(), 1.0);
    e.rewards.pop_back();
    EXPECT_THROW(e.validate(), StructuralError);
}

TEST(Buffer, FirstPushGetsEpsilon) {
    PriorityBuffer buf(10, 0.5, 0.5, 1e-6);
    buf.push(make_exp(-1.0));
    EXPECT_EQ(buf.size(), 1u);
    EXPECT_EQ(buf.priority_at(0), 1e-6);
}

TEST(Buffer, NewEntriesTakeCurrentMaximum) {
    PriorityBuffer buf(10, 0.5, 0.5, 1e-6);
    buf.push(make_exp(-1.0));
    buf.push(make_exp(-1.0));
    const std::vector<SampleRef> refs{{0, buf.serial_at(0)}};
    const std::vector<double> r{-4.0}, d{2.0};
    buf.update_priorities(refs, r, d);
    buf.push(make_exp(-1.0));
    EXPECT_DOUBLE_EQ(buf.priority_at(2), priority(-4.0, 2.0, 0.5, 0.5, 1e-6));
}

TEST(Buffer, TwoItemProbabilities) {
    PriorityBuffer buf(4, 0.5, 0.5, 1e-6);
    buf.push(make_exp(0.0));
    buf.push(make_exp(0.0));
    // 0.5 (|r| + eps) + 0.5 (|d| + eps) with r = d gives |r| + eps.
    const std::vector<SampleRef> refs{{0, buf.serial_at(0)}, {1, buf.serial_at(1)}};
    const std::vector<double> r{1.25 - 1e-6, 3.75 - 1e-6};
    buf.update_priorities(refs, r, r);
    const auto p = buf.probabilities();
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(Buffer, RingEvictsOldest) {
    PriorityBuffer buf(3, 0.5, 0.5, 1e-6);
    for (int i = 0; i < 4; ++i) {
        buf.push(make_exp(static_cast<double>(i)));
    }
    EXPECT_EQ(buf.size(), 3u);
    EXPECT_DOUBLE_EQ(buf.at(0).rewards[0], 3.0);
    EXPECT_DOUBLE_EQ(buf.at(1).rewards[0], 1.0);
}

TEST(Buffer, StaleUpdatesAreSkippedAndCounted) {
    PriorityBuffer buf(2, 0.5, 0.5, 1e-6);
    buf.push(make_exp(0.0));
    const SampleRef old{0, buf.serial_at(0)};
    buf.push(make_exp(0.0));
    buf.push(make_exp(0.0)); // evicts slot 0
    const double before = buf.priority_at(0);
    const std::vector<SampleRef> refs{old};
    const std::vector<double> r{100.0}, d{100.0};
    buf.update_priorities(refs, r, d);
    EXPECT_EQ(buf.stale_updates(), 1u);
    EXPECT_EQ(buf.priority_at(0), before);
}

TEST(Buffer, UnderfullSampleIsNotReady) {
    PriorityBuffer buf(10, 0.5, 0.5, 1e-6);
    buf.push(make_exp(0.0));
    Rng rng(1);
    EXPECT_THROW(buf.sample(2, rng), NotReadyError);
    EXPECT_FALSE(buf.ready(2));
}

TEST(Buffer, RewardTermBoundsPriorityFromBelow) {
    PriorityBuffer buf(4, 0.3, 0.7, 1e-6);
    buf.push(make_exp(-5.0));
    const std::vector<SampleRef> refs{{0, buf.serial_at(0)}};
    const std::vector<double> r{-5.0};
    for (double td : {2.0, 0.5, 0.01, 0.0}) {
        const std::vector<double> d{td};
        buf.update_priorities(refs, r, d);
        EXPECT_GE(buf.priority_at(0), 0.3 * (5.0 + 1e-6));
    }
    const double p = buf.priority_at(0);
    buf.update_priorities(refs, r, std::vector<double>{0.0});
    EXPECT_EQ(buf.priority_at(0), p);
}

TEST(Buffer, ProbabilitiesSumToOneAndStayPositive) {
    PriorityBuffer buf(1000, 0.5, 0.5, 1e-6);
    Rng rng(3);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 100000; ++i) {
        buf.push(make_exp(0.0, 1, 1));
        if (i % 7 == 0) {
            const std::vector<SampleRef> refs{{buf.size() - 1, buf.serial_at(buf.size() - 1)}};
            const std::vector<double> r{u(rng)}, d{u(rng)};
            buf.update_priorities(refs, r, d);
        }
    }
    const auto pr = buf.priorities();
    for (double p : pr) {
        ASSERT_GE(p, 1e-6);
    }
    const auto prob = buf.probabilities();
    EXPECT_NEAR(std::accumulate(prob.begin(), prob.end(), 0.0), 1.0, 1e-12);
}

TEST(Buffer, SamplingIsReproducible) {
    PriorityBuffer buf(50, 0.5, 0.5, 1e-6);
    for (int i = 0; i < 50; ++i) {
        buf.push(make_exp(static_cast<double>(i)));
    }
    Rng a(99), b(99);
    const auto x = buf.sample(20, a);
    const auto y = buf.sample(20, b);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(x.refs[i].slot, y.refs[i].slot);
    }
}

TEST(Buffer, UniformPrioritiesGiveUniformDraws) {
    PriorityBuffer buf(16, 0.5, 0.5, 1e-6);
    for (int i = 0; i < 16; ++i) {
        buf.push(make_exp(0.0));
    }
    Rng rng(5);
    std::vector<double> counts(16, 0.0);
    const int rounds = 100000 / 16;
    for (int k = 0; k < rounds; ++k) {
        for (const auto& r : buf.sample(16, rng).refs) {
            counts[r.slot] += 1.0;
        }
    }
    const double expected = rounds;
    double chi2 = 0.0;
    for (double c : counts) {
        chi2 += (c - expected) * (c - expected) / expected;
    }
    // 99th percentile of chi-square with 15 degrees of freedom.
    EXPECT_LT(chi2, 30.578);
}

TEST(Buffer, RandomPriorityVectorsFollowSamplingLaw) {
    const auto r = verify::sampling_law(20, 100000, 0.01, 77);
    EXPECT_TRUE(r.passed) << r.detail << (r.failures.empty() ? "" : " " + r.failures.front());
}

TEST(Buffer, HistogramCountsEveryEntry) {
    PriorityBuffer buf(10, 0.5, 0.5, 1e-6);
    for (int i = 0; i < 10; ++i) {
        buf.push(make_exp(0.0));
    }
    const auto h = buf.priority_histogram(4);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::size_t{0}), 10u);
}
