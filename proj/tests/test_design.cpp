#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "tokenecon/design.hpp"

using namespace tokenecon;

namespace {

// Random instance: up to 3 classes, up to 4 actions over 5 affine resources.
Scenario random_instance(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::uniform_int_distribution<int> nc(1, 3), na(1, 4);
    Scenario s;
    s.name = "random";
    for (int r = 0; r < 5; ++r) s.rewards.push_back(RewardFn::affine(-2.0 * U(rng), 0.1 + 2.0 * U(rng)));
    const int C = nc(rng);
    double tot = 0.0;
    for (int c = 0; c < C; ++c) {
        ClassSpec cs;
        cs.name = "c" + std::to_string(c);
        cs.mass = 0.2 + U(rng);
        tot += cs.mass;
        const int A = na(rng);
        std::set<std::vector<std::size_t>> seen;
        while (static_cast<int>(cs.actions.size()) < A) {
            std::vector<std::size_t> res;
            for (std::size_t r = 0; r < 5; ++r)
                if (U(rng) < 0.4) res.push_back(r);
            if (res.empty() || !seen.insert(res).second) continue;
            cs.actions.push_back({res, ""});
        }
        s.classes.push_back(cs);
    }
    for (auto& c : s.classes) c.mass /= tot;
    s.rates = {1.0, 0.1, 0.011};
    s.k_max = 10;
    return s;
}

// J_eff by grid search over the top-road share, Pigou with w1 = -1 - eps x, w2 = -x
std::pair<double, double> pigou_grid(double eps) {
    double best = -1e300, arg = 0.0;
    for (int i = 0; i <= 1000000; ++i) {
        const double y = i / 1000000.0;  // bottom share
        const double J = -(1.0 - y) * (1.0 + eps * (1.0 - y)) - y * y;
        if (J > best) best = J, arg = y;
    }
    return {arg, best};
}

double scenario_efficiency(const Scenario& s, const std::vector<std::vector<double>>& f) {
    return efficiency(sigma_from_action_flows(s, f), s.rewards);
}

SystemOptimum hand_optimum(std::vector<double> f, std::vector<double> w) {
    SystemOptimum o;
    o.flows = {f};
    o.w_action = {w};
    double acc = 0.0, tot = 0.0;
    for (std::size_t a = 0; a < f.size(); ++a) acc += f[a] * w[a], tot += f[a];
    o.w_bar = {acc / tot};
    return o;
}

}  // namespace

TEST(SystemOptimum, PigouMatchesGridSearch) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto [y, J] = pigou_grid(1e-3);
    EXPECT_NEAR(opt.sigma[1], y, 2e-6);
    EXPECT_NEAR(opt.j_eff, J, 1e-10);
    EXPECT_NEAR(opt.sigma[0] + opt.sigma[1], 1.0, 1e-12);
    EXPECT_LE(opt.residual, 1e-6);
    // eps -> 0 limit: half and half, average reward -3/4
    auto s0 = oracle::pigou(1e-9);
    auto o0 = solve_system_optimum(s0, ObjectiveSpec::average_reward());
    EXPECT_NEAR(o0.sigma[1], 0.5, 1e-6);
    EXPECT_NEAR(o0.j_eff, -0.75, 1e-6);
}

TEST(SystemOptimum, BraessMatchesGridSearch) {
    auto s = oracle::braess();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    double best = -1e300;
    const int n = 1000;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; i + j <= n; ++j) {
            std::vector<std::vector<double>> f{{i / double(n), j / double(n), (n - i - j) / double(n)}};
            best = std::max(best, scenario_efficiency(s, f));
        }
    EXPECT_GE(opt.j_eff, best - 1e-12);
    EXPECT_NEAR(opt.j_eff, best, 1e-5);
    // symmetric optimum: a quarter on each outer path, half over the bridge
    EXPECT_NEAR(opt.flows[0][0], 0.25, 1e-6);
    EXPECT_NEAR(opt.flows[0][1], 0.25, 1e-6);
    EXPECT_NEAR(opt.flows[0][2], 0.5, 1e-6);
}

TEST(SystemOptimum, SingleResourceSingleClass) {
    Scenario s;
    s.rewards = {RewardFn::affine(-0.5, 2.0)};
    s.classes = {ClassSpec{"c", 1.0, {{{0}, "only"}}, -1, -1}};
    s.rates = {1.5, 0.1, 0.01};
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    EXPECT_DOUBLE_EQ(opt.sigma[0], 1.5);
    EXPECT_DOUBLE_EQ(opt.w_bar[0], s.rewards[0](1.5));
}

TEST(SystemOptimum, FlowsSatisfyProgramConstraints) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_instance(rng);
        auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
        for (std::size_t c = 0; c < s.classes.size(); ++c) {
            double tot = 0.0;
            for (double f : opt.flows[c]) {
                EXPECT_GE(f, 0.0);
                tot += f;
            }
            EXPECT_NEAR(tot, s.classes[c].mass * s.rates.action, 1e-12);
        }
        auto sig = sigma_from_action_flows(s, opt.flows);
        for (std::size_t r = 0; r < sig.size(); ++r) EXPECT_NEAR(sig[r], opt.sigma[r], 1e-12);
    }
}

TEST(SystemOptimum, RandomInstancesBeatRandomFeasiblePoints) {
    std::mt19937_64 rng(8);
    std::exponential_distribution<double> ex(1.0);
    for (int trial = 0; trial < 10; ++trial) {
        auto s = random_instance(rng);
        auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
        for (int probe = 0; probe < 2000; ++probe) {
            std::vector<std::vector<double>> f(s.classes.size());
            for (std::size_t c = 0; c < f.size(); ++c) {
                double tot = 0.0;
                for (std::size_t a = 0; a < s.classes[c].actions.size(); ++a) tot += (f[c].emplace_back(ex(rng)), f[c].back());
                for (double& v : f[c]) v *= s.classes[c].mass / tot;
            }
            EXPECT_LE(scenario_efficiency(s, f), opt.j_eff + 1e-12);
        }
    }
}

TEST(SystemOptimum, MinClassObjectiveMatchesGridSearch) {
    // two classes sharing a congested road, each with a private alternative
    Scenario s;
    s.rewards = {RewardFn::affine(0.0, 1.0), RewardFn::affine(-0.8, 0.2), RewardFn::affine(-0.3, 0.5)};
    s.classes = {ClassSpec{"a", 0.6, {{{0}, "shared"}, {{1}, "own"}}, -1, -1},
                 ClassSpec{"b", 0.4, {{{0}, "shared"}, {{2}, "own"}}, -1, -1}};
    s.rates = {1.0, 0.1, 0.011};
    auto obj = ObjectiveSpec::min_class(0.1);
    auto opt = solve_system_optimum(s, obj);
    double best = -1e300;
    const int n = 1500;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            const double fa = 0.6 * i / n, fb = 0.4 * j / n;
            std::vector<std::vector<double>> f{{fa, 0.6 - fa}, {fb, 0.4 - fb}};
            auto sig = sigma_from_action_flows(s, f);
            const double wa = (fa * s.rewards[0](sig[0]) + (0.6 - fa) * s.rewards[1](sig[1])) / 0.6;
            const double wb = (fb * s.rewards[0](sig[0]) + (0.4 - fb) * s.rewards[2](sig[2])) / 0.4;
            best = std::max(best, std::min(wa, wb) + 0.1 * efficiency(sig, s.rewards));
        }
    EXPECT_GE(opt.objective, best - 1e-5);
    EXPECT_NEAR(opt.j_f + 0.1 * opt.j_eff, opt.objective, 1e-12);
}

TEST(SystemOptimum, ObjectiveParsing) {
    EXPECT_EQ(parse_objective("avg-reward", 0.0).kind, ObjectiveSpec::Kind::AverageReward);
    auto o = parse_objective("min-class", 0.1);
    EXPECT_EQ(o.kind, ObjectiveSpec::Kind::MinClassPlusAverage);
    EXPECT_DOUBLE_EQ(o.gamma, 0.1);
    EXPECT_THROW(parse_objective("min-class", -1.0), ModelError);
    EXPECT_THROW(parse_objective("max-max", 0.1), ModelError);
}

TEST(SystemOptimum, ClassWithoutActionsIsAnError) {
    auto s = oracle::pigou();
    s.classes[0].actions.clear();
    EXPECT_THROW(solve_system_optimum(s, ObjectiveSpec::average_reward()), DesignError);
}

TEST(ContinuousTolls, ZeroGapGivesNoiseRatio) {
    auto o = hand_optimum({0.5, 0.5}, {-1.0, -1.0});
    auto t = continuous_tolls(o, 7.0, 0.1, 1.0);
    EXPECT_DOUBLE_EQ(t[0][0], 0.1);
    EXPECT_DOUBLE_EQ(t[0][1], 0.1);
    EXPECT_THROW(continuous_tolls(o, 0.0, 0.1, 1.0), DesignError);
}

TEST(ContinuousTolls, PigouSymmetricAroundNoiseRatio) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    const double alpha = 40.0;
    auto t = continuous_tolls(opt, alpha, 0.1, 1.0);
    // equal flows would make the offsets exactly opposite; here they are weighted by flow
    EXPECT_NEAR(opt.flows[0][0] * (t[0][0] - 0.1) + opt.flows[0][1] * (t[0][1] - 0.1), 0.0, 1e-12);
    EXPECT_NEAR(t[0][1] - t[0][0], alpha * (opt.w_action[0][1] - opt.w_action[0][0]), 1e-12);
    EXPECT_NEAR(t[0][0], 0.1 - 10.0, 0.05);
    EXPECT_NEAR(t[0][1], 0.1 + 10.0, 0.05);
}

TEST(ContinuousTolls, FlowWeightedIdentity) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_instance(rng);
        auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
        auto t = continuous_tolls(opt, 3.7, s.rates.noise, s.rates.action);
        for (std::size_t c = 0; c < s.classes.size(); ++c) {
            double acc = 0.0;
            for (std::size_t a = 0; a < t[c].size(); ++a) acc += opt.flows[c][a] * t[c][a];
            EXPECT_NEAR(acc, s.classes[c].mass * s.rates.noise, 1e-8);
        }
    }
}

TEST(ClassLp, PigouResidualsAreTiny) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto t = continuous_tolls(opt, 40.0, 0.1, 1.0);
    auto lp = verify_class_lp(s, opt, t, 40.0);
    ASSERT_EQ(lp.size(), 1u);
    EXPECT_LE(lp[0].max_residual(), 1e-10);
    EXPECT_DOUBLE_EQ(lp[0].y_t, 1.0 / 40.0);
    EXPECT_NEAR(lp[0].y_m, -0.1 / 40.0 + opt.w_bar[0], 1e-15);
}

TEST(ClassLp, PerturbedTollBreaksComplementarySlackness) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto t = continuous_tolls(opt, 40.0, 0.1, 1.0);
    t[0][1] += 0.1;
    try {
        verify_class_lp(s, opt, t, 40.0);
        FAIL() << "expected a certification failure";
    } catch (const CertificationError& e) {
        EXPECT_NE(std::string(e.what()).find("complementary slackness"), std::string::npos) << e.what();
    }
}

TEST(ClassLp, SingleActionClassIsCertified) {
    Scenario s;
    s.rewards = {RewardFn::affine(-0.5, 2.0)};
    s.classes = {ClassSpec{"c", 1.0, {{{0}, "only"}}, -1, -1}};
    s.rates = {1.0, 0.1, 0.01};
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto t = continuous_tolls(opt, 1.0, 0.1, 1.0);
    EXPECT_DOUBLE_EQ(t[0][0], 0.1);
    EXPECT_LE(verify_class_lp(s, opt, t, 1.0)[0].max_residual(), 1e-12);
}

TEST(ClassLp, RandomInstancesCertify) {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_instance(rng);
        auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
        auto sel = select_alpha_kbar(s, opt, 0.05, 1e-4);
        for (const auto& lp : verify_class_lp(s, opt, sel.continuous, sel.alpha)) EXPECT_LE(lp.max_residual(), 1e-8);
    }
}

TEST(Discretize, RoundsHalfAwayFromZero) {
    auto t = discretize_tolls({{0.1, 2.5, -2.5, -0.4, 0.5, -0.5}});
    EXPECT_EQ(t[0], (std::vector<int>{0, 3, -3, 0, 1, -1}));
}

TEST(Discretize, WithinHalfOfInput) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> U(-50.0, 50.0);
    ContinuousTolls tau(4);
    for (auto& row : tau) {
        for (int a = 0; a < 5; ++a) row.push_back(U(rng));
        row.push_back(-1.0);  // keep a free action
    }
    auto t = discretize_tolls(tau);
    for (std::size_t c = 0; c < tau.size(); ++c)
        for (std::size_t a = 0; a < tau[c].size(); ++a) EXPECT_LE(std::abs(t[c][a] - tau[c][a]), 0.5);
}

TEST(Discretize, AllPositiveRoundedTollsAreAnError) {
    try {
        discretize_tolls({{0.6, 1.2}});
        FAIL();
    } catch (const DesignError& e) {
        EXPECT_NE(std::string(e.what()).find("increase alpha"), std::string::npos);
    }
}

TEST(SelectAlpha, EqualRewardsGiveUnitAlphaAndZeroTolls) {
    Scenario s;
    s.rewards = {RewardFn::affine(0.0, 1.0), RewardFn::affine(0.0, 1.0)};
    s.classes = {ClassSpec{"c", 1.0, {{{0}, "a"}, {{1}, "b"}}, -1, -1}};
    s.rates = {1.0, 0.1, 0.011};
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto sel = select_alpha_kbar(s, opt, 0.05, 1e-4);
    EXPECT_DOUBLE_EQ(sel.alpha, 1.0);
    EXPECT_EQ(sel.tolls[0], (std::vector<int>{0, 0}));
    EXPECT_EQ(sel.delta_min, 0.0);
    EXPECT_GE(sel.k_max, 1);
}

TEST(SelectAlpha, FormulaFromSmallestGap) {
    Scenario s;
    s.rewards = {RewardFn::affine(0.0, 1.0), RewardFn::affine(0.0, 1.0)};
    s.classes = {ClassSpec{"c", 1.0, {{{0}, "a"}, {{1}, "b"}}, -1, -1}};
    s.rates = {1.0, 0.1, 0.011};
    // w̄ = -1, gaps 0.01 on both used actions
    auto o = hand_optimum({0.5, 0.5}, {-0.99, -1.01});
    auto sel = select_alpha_kbar(s, o, 0.05, 1e-4);
    EXPECT_NEAR(sel.delta_min, 0.01, 1e-12);
    EXPECT_NEAR(sel.alpha, 1000.0, 1e-9);
    EXPECT_EQ(sel.tolls[0], (std::vector<int>{10, -10}));
}

TEST(SelectAlpha, PigouKbarMeetsTailTolerance) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto sel = select_alpha_kbar(s, opt, 0.05, 1e-4);
    EXPECT_NEAR(sel.alpha, 0.5 / (0.05 * 0.25), 0.1);
    EXPECT_EQ(sel.tolls[0], (std::vector<int>{-10, 10}));
    EXPECT_EQ(sel.k_max % sel.max_toll, 0);
    EXPECT_GE(sel.k_max, 100);
    EXPECT_LE(tail_mass_bound(sel.max_toll, sel.k_max, 0.1), 1e-4);
    EXPECT_DOUBLE_EQ(sel.tail_bound, tail_mass_bound(sel.max_toll, sel.k_max, 0.1));
    // measured cap mass of the threshold chain stays under the tolerance too
    auto u = threshold_policy(0, 0, 1, sel.tolls[0], sel.k_max);
    auto eta = stationary_distribution(build_chain(u, sel.tolls[0], s.rates));
    EXPECT_LE(eta.back(), 1e-4);
}

TEST(SelectAlpha, TighterTailToleranceNeverShrinksKbar) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    int prev = 0;
    for (double tol : {1e-2, 1e-4, 1e-8, 1e-16, 1e-30}) {
        auto sel = select_alpha_kbar(s, opt, 0.05, tol);
        EXPECT_GE(sel.k_max, prev);
        EXPECT_LE(sel.tail_bound, tol);
        prev = sel.k_max;
    }
}

TEST(SelectAlpha, ArgumentRanges) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    EXPECT_THROW(select_alpha_kbar(s, opt, 0.0, 1e-4), DesignError);
    EXPECT_THROW(select_alpha_kbar(s, opt, 0.05, 1.0), DesignError);
}

TEST(Decompose, PigouUnitTollsSolveTwoByTwo) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto dec = decompose_flows(s, opt, {{-1, 1}});
    ASSERT_EQ(dec[0].components.size(), 1u);
    const auto& g = dec[0].components[0];
    // 0.1 (g_p + g_q) + g_p - g_q = 0, g_p + g_q = 1
    EXPECT_NEAR(g.g_p, 0.45, 1e-12);
    EXPECT_NEAR(g.g_q, 0.55, 1e-12);
    EXPECT_EQ(g.p, 0u);
    EXPECT_EQ(g.q, 1u);
    EXPECT_LE(dec[0].drift_residual, 1e-12);
    EXPECT_LE(dec[0].mass_residual, 1e-12);
    EXPECT_EQ(dec[0].support_violations, 0u);
}

TEST(Decompose, ZeroTollUsedActionIsSingleton) {
    Scenario s;
    s.rewards = {RewardFn::affine(-0.1, 1.0), RewardFn::affine(-5.0, 1.0)};
    s.classes = {ClassSpec{"c", 1.0, {{{0}, "good"}, {{1}, "bad"}}, -1, -1}};
    s.rates = {1.0, 0.1, 0.011};
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    ASSERT_EQ(opt.flows[0][1], 0.0);
    auto dec = decompose_flows(s, opt, {{0, 3}});
    ASSERT_EQ(dec[0].components.size(), 1u);
    EXPECT_TRUE(dec[0].zero_toll_case);
    EXPECT_TRUE(dec[0].components[0].singleton());
    EXPECT_DOUBLE_EQ(dec[0].components[0].total(), 1.0);
}

TEST(Decompose, NoValidPairIsAnError) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    EXPECT_THROW(decompose_flows(s, opt, {{-1, -2}}), DesignError);
}

TEST(Decompose, RandomDesignsSumToOptimalFlows) {
    std::mt19937_64 rng(29);
    int designed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_instance(rng);
        DesignResult r;
        try {
            r = design_tolls(s, ObjectiveSpec::average_reward());
        } catch (const DesignError& e) {
            ADD_FAILURE() << e.what();
            continue;
        }
        ++designed;
        for (std::size_t c = 0; c < s.classes.size(); ++c) {
            const auto& d = r.decomposition[c];
            const double mrd = s.classes[c].mass * s.rates.action;
            EXPECT_LE(d.mass_residual, 1e-9 * mrd);
            EXPECT_LE(d.drift_residual, 1e-9);
            EXPECT_EQ(d.support_violations, 0u);
            // rounding tolls moves each pair's action shares by a few percent at most
            EXPECT_LE(d.flow_residual, 0.05 * mrd) << "class " << c << " trial " << trial;
            for (const auto& g : d.components) {
                if (g.singleton()) continue;
                EXPECT_LE(r.selection.tolls[c][g.p], 0);
                EXPECT_GT(r.selection.tolls[c][g.q], 0);
            }
        }
        EXPECT_LE(r.toll_identity_residual, 1e-8);
    }
    EXPECT_EQ(designed, 20);
}

TEST(Design, PigouPipeline) {
    auto r = design_tolls(oracle::pigou(), ObjectiveSpec::average_reward());
    EXPECT_EQ(r.designed.tolls[0], (std::vector<int>{-10, 10}));
    EXPECT_EQ(r.designed.k_max, r.selection.k_max);
    EXPECT_LE(r.lp[0].max_residual(), 1e-10);
    ASSERT_EQ(r.decomposition[0].components.size(), 1u);
    EXPECT_NEAR(r.decomposition[0].components[0].g_q, 10.1 / 20.0, 1e-12);
}

TEST(Design, BraessPipeline) {
    auto r = design_tolls(oracle::braess(), ObjectiveSpec::average_reward());
    EXPECT_EQ(r.designed.tolls[0], (std::vector<int>{-10, -10, 10}));
    EXPECT_NEAR(r.selection.delta_min, 0.275, 1e-6);
    EXPECT_LE(r.lp[0].max_residual(), 1e-8);
    EXPECT_LE(r.decomposition[0].flow_residual, 0.01);
}

TEST(CandidateMsne, PigouCertificateAndFlowMatch) {
    auto r = design_tolls(oracle::pigou(), ObjectiveSpec::average_reward());
    GameModel m(r.designed);
    auto cand = construct_optimal_msne(m, r.decomposition, r.optimum);
    EXPECT_LE(cand.certificate.eps, 1e-2);
    EXPECT_LE(cand.flow_match, 0.05 * 0.5);
    auto cm = class_masses(m, cand.mu);
    EXPECT_NEAR(cm[0], 1.0, 1e-12);
}

TEST(CandidateMsne, DoublingKbarDoesNotIncreaseEps) {
    auto r = design_tolls(oracle::pigou(), ObjectiveSpec::average_reward());
    GameModel m1(r.designed);
    auto e1 = construct_optimal_msne(m1, r.decomposition, r.optimum).certificate.eps;
    auto sc = r.designed;
    sc.k_max *= 2;
    GameModel m2(sc);
    auto e2 = construct_optimal_msne(m2, r.decomposition, r.optimum).certificate.eps;
    EXPECT_LE(e2, e1 + 1e-12);
}

TEST(CandidateMsne, LargerAlphaTracksOptimumMoreClosely) {
    auto s = oracle::pigou();
    auto opt = solve_system_optimum(s, ObjectiveSpec::average_reward());
    auto base = select_alpha_kbar(s, opt, 0.05, 1e-4);
    double prev = 1e300;
    for (double mult : {1.0, 2.0, 4.0}) {
        const double alpha = base.alpha * mult;
        auto tolls = discretize_tolls(continuous_tolls(opt, alpha, 0.1, 1.0));
        auto sc = s;
        sc.tolls = tolls;
        sc.k_max = static_cast<int>(base.k_max * mult);
        auto dec = decompose_flows(sc, opt, tolls);
        GameModel m(sc);
        auto cand = construct_optimal_msne(m, dec, opt);
        auto sigma = sigma_from_distribution(m, cand.mu);
        double gap = 0.0;
        for (std::size_t r = 0; r < sigma.size(); ++r) gap = std::max(gap, std::abs(sigma[r] - opt.sigma[r]));
        EXPECT_LE(gap, prev + 1e-12) << "alpha x" << mult;
        prev = gap;
    }
}

TEST(SystemOptimum, PruneFoldsResidualFlowsIntoHeaviestAction) {
    // Pigou with a near-useless third road that picks up a sliver of flow
    auto s = oracle::pigou();
    s.rewards.push_back(RewardFn::affine(-1.00099, 1e-3));
    s.classes[0].actions.push_back({{2}, "side"});
    auto raw = solve_system_optimum(s, ObjectiveSpec::average_reward());
    ASSERT_GT(raw.flows[0][2], 1e-4);
    ASSERT_LT(raw.flows[0][2], 1e-2);
    SystemOptimumOptions o;
    o.prune = 1e-2;
    auto pr = solve_system_optimum(s, ObjectiveSpec::average_reward(), o);
    double tot_raw = 0.0, tot = 0.0;
    for (double v : raw.flows[0]) tot_raw += v;
    for (double v : pr.flows[0]) tot += v;
    EXPECT_NEAR(tot, tot_raw, 1e-12);
    EXPECT_EQ(pr.flows[0][2], 0.0);
    // pruning keeps the LP certificate exact for the pruned point
    auto sel = select_alpha_kbar(s, pr, 0.05, 1e-4);
    for (const auto& lp : verify_class_lp(s, pr, sel.continuous, sel.alpha)) EXPECT_LE(lp.max_residual(), 1e-8);
}
