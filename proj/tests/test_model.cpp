#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tokenecon/model.hpp"

using namespace tokenecon;

TEST(RewardFn, AffineValueSlopeIntegral) {
    auto w = RewardFn::affine(2.0, 0.5);
    EXPECT_DOUBLE_EQ(w(0.0), 2.0);
    EXPECT_DOUBLE_EQ(w(2.0), 1.0);
    EXPECT_DOUBLE_EQ(w.derivative(3.0), -0.5);
    EXPECT_NEAR(w.integral(1.7), oracle::simpson([&](double x) { return w(x); }, 1.7), 1e-12);
}

TEST(RewardFn, NegatedBprIntegralMatchesQuadrature) {
    auto w = RewardFn::negated_bpr(6.0, 2.5, 0.15, 4.0, 1.3);
    for (double x : {0.0, 0.3, 1.0, 2.2}) {
        EXPECT_NEAR(w.integral(x), oracle::simpson([&](double s) { return w(s); }, x), 1e-9 * (1 + x));
        const double h = 1e-6;
        if (x > h) EXPECT_NEAR(w.derivative(x), (w(x + h) - w(x - h)) / (2 * h), 1e-6);
    }
}

TEST(RewardFn, NegatedBprHasUniformSlopeAtZeroFlow) {
    auto w = RewardFn::negated_bpr(4.0, 1.0, 0.15, 4.0);
    EXPECT_DOUBLE_EQ(w(0.0), -4.0);
    EXPECT_NEAR(w.derivative(0.0), -4e-3, 1e-15);
}

TEST(RewardFn, UniformDecreaseOnSampledGrid) {
    std::vector<RewardFn> fns = {RewardFn::affine(-1.0, 1e-3), RewardFn::affine(0.0, 1.0),
                                 RewardFn::negated_bpr(6.0, 0.3, 0.15, 4.0),
                                 RewardFn::negated_bpr(0.0, 1.0, 1.0, 1.0)};
    for (const auto& w : fns) {
        const double eps = w.min_slope();
        ASSERT_GT(eps, 0.0);
        for (int i = 0; i < 50; ++i)
            for (int j = i + 1; j < 50; ++j) {
                double y = 0.02 * i, x = 0.02 * j;
                EXPECT_LE(w(x) - w(y), -eps * (x - y) + 1e-12);
            }
    }
}

TEST(RewardFn, RejectsBadBprParameters) {
    EXPECT_THROW(RewardFn::negated_bpr(1.0, 0.0, 0.15, 4.0), ModelError);
    EXPECT_THROW(RewardFn::negated_bpr(1.0, 1.0, 0.15, 0.5), ModelError);
}

TEST(ActionReward, SingleResource) {
    std::vector<RewardFn> w = {RewardFn::affine(0.0, 1.0)};
    EXPECT_DOUBLE_EQ(action_reward({{0}, ""}, {0.5}, w), -0.5);
}

TEST(ActionReward, ZeroFlowsGiveInterceptSum) {
    std::vector<RewardFn> w = {RewardFn::affine(1.5, 1.0), RewardFn::affine(-0.25, 1.0), RewardFn::affine(3.0, 1.0)};
    EXPECT_DOUBLE_EQ(action_reward({{0, 1, 2}, ""}, {0.0, 0.0, 0.0}, w), 4.25);
}

TEST(ActionReward, AdditiveOverResources) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(0.0, 2.0);
    std::vector<RewardFn> w;
    for (int r = 0; r < 6; ++r) w.push_back(RewardFn::negated_bpr(U(rng) + 0.1, U(rng) + 0.5, 0.15, 4.0));
    for (int trial = 0; trial < 50; ++trial) {
        FlowVector sigma(6);
        for (double& s : sigma) s = U(rng);
        Action a;
        for (std::size_t r = 0; r < 6; ++r)
            if (rng() % 2) a.resources.push_back(r);
        if (a.resources.empty()) a.resources.push_back(0);
        double direct = 0.0;
        for (auto r : a.resources) direct += w[r](sigma[r]);
        EXPECT_NEAR(action_reward(a, sigma, w), direct, 1e-12);
    }
}

TEST(SigmaFromActionFlows, SumsOverActionsUsingResource) {
    auto s = oracle::braess();
    auto sigma = sigma_from_action_flows(s, {{0.25, 0.25, 0.5}});
    EXPECT_DOUBLE_EQ(sigma[0], 0.75);
    EXPECT_DOUBLE_EQ(sigma[1], 0.25);
    EXPECT_DOUBLE_EQ(sigma[2], 0.25);
    EXPECT_DOUBLE_EQ(sigma[3], 0.75);
    EXPECT_DOUBLE_EQ(sigma[4], 0.5);
}

TEST(ValidateScenario, ValidPigouHasNoDiagnostics) {
    auto s = oracle::pigou();
    EXPECT_TRUE(validate_scenario(s).empty()) << describe(validate_scenario(s));
}

TEST(ValidateScenario, FlagsNoiseAboveQuarterActionRate) {
    auto s = oracle::pigou();
    s.rates.noise = s.rates.action / 2.0;
    auto d = validate_scenario(s);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].assumption, "noise bound");
}

TEST(ValidateScenario, FlagsClassWithOnlyPositiveTolls) {
    auto s = oracle::pigou();
    s.tolls = {{1, 2}};
    auto d = validate_scenario(s);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].assumption, "affordability");
}

TEST(ValidateScenario, FlagsRevisionRatioAndTokenCap) {
    auto s = oracle::pigou();
    s.rates.revision = 1.0;
    s.tolls = {{-20, 3}};
    auto d = validate_scenario(s);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].assumption, "time-scale separation");
    EXPECT_EQ(d[1].assumption, "Tokens");
}

TEST(ValidateScenario, FlagsFlatReward) {
    auto s = oracle::pigou();
    s.rewards[0] = RewardFn::affine(-1.0, 0.0);
    auto d = validate_scenario(s);
    ASSERT_FALSE(d.empty());
    EXPECT_EQ(d[0].assumption, "decreasing rewards");
}
