#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ase_lab/graph.hpp"
#include "ase_lab/scm.hpp"
#include "fixtures.hpp"

using namespace ase_lab;

TEST(Layout, IndexingAndParents) {
    const VariableLayout sim(3, 2, false);
    EXPECT_EQ(sim.num_vars(), 9u);
    EXPECT_EQ(sim.state(1), 4u);
    EXPECT_EQ(sim.action(2, 1), 7u);
    EXPECT_EQ(sim.parents(sim.action(2, 1)).size(), 1u);
    EXPECT_EQ(sim.parents(sim.state(2)).size(), 4u);
    EXPECT_TRUE(sim.parents(0).empty());
    const VariableLayout tb(3, 2, true);
    const auto p = tb.parents(tb.action(2, 0));
    ASSERT_EQ(p.size(), 3u);
    EXPECT_EQ(p[0], tb.state(0));
    EXPECT_EQ(p[2], tb.action(1, 0));
}

TEST(BuildScm, RejectsUnnormalizedRows) {
    auto spec = std::make_shared<MmdpSpec>(*fixtures::m2_spec());
    spec->initial = {0.6, 0.6};
    EXPECT_THROW(build_scm(spec, fixtures::m2_policy(0.5, 0.8), Orderings::identity(*spec)), ValidationError);
    auto pol = fixtures::m2_policy(0.5, 0.8);
    pol.agents[0].row(0)[0] = 0.9;
    const auto good = fixtures::m2_spec();
    try {
        build_scm(good, pol, Orderings::identity(*good));
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("agent1"), std::string::npos);
    }
}

TEST(BuildScm, RandomModelsReproduceTablesAndAreNoiseMonotonic) {
    std::mt19937_64 gen(11);
    for (int rep = 0; rep < 40; ++rep) {
        const auto m = fixtures::random_model(gen, 3, 2, 2 + rep % 2, 2, rep % 2 == 0, rep % 3 == 0);
        const auto scm = fixtures::build(m);
        const auto& spec = *m.spec;
        for (std::size_t s = 0; s < spec.num_states(); ++s)
            EXPECT_NEAR(scm.table(0).pmf(0, spec.num_states())[s], spec.initial[s], 1e-12);
        for (std::size_t i = 0; i < spec.num_agents(); ++i) {
            const auto& table = scm.table(scm.layout().action(i, 0));
            EXPECT_TRUE(check_noise_monotonic(table, m.orderings.actions[i]));
            for (std::size_t c = 0; c < m.policy.agents[i].num_contexts(); ++c) {
                const auto implied = table.pmf(c, spec.num_actions(i));
                for (std::size_t a = 0; a < implied.size(); ++a)
                    EXPECT_NEAR(implied[a], m.policy.agents[i].row(c)[a], 1e-12);
            }
        }
        const auto& tr = scm.table(scm.layout().state(1));
        EXPECT_TRUE(check_noise_monotonic(tr, m.orderings.states));
        for (std::size_t r = 0; r < spec.transition.num_rows(); ++r) {
            std::vector<double> dense(spec.num_states(), 0.0);
            for (const auto& e : spec.transition.row(r)) dense[e.next] += e.prob;
            const auto implied = tr.pmf(r, spec.num_states());
            for (std::size_t s = 0; s < dense.size(); ++s) EXPECT_NEAR(implied[s], dense[s], 1e-12);
        }
    }
}

TEST(QuantileEval, BoundaryAndErrors) {
    const auto scm = fixtures::m2_scm(0.5, 0.8);
    const VarId a2 = scm.layout().action(1, 0);
    const std::vector<Value> pa{0, 1};
    EXPECT_EQ(quantile_eval(scm, a2, pa, 1.0 - 0.8), 0);
    EXPECT_EQ(quantile_eval(scm, a2, pa, 0.2000001), 1);
    const std::vector<Value> bad{0, 2};
    EXPECT_THROW(quantile_eval(scm, a2, bad, 0.5), ValidationError);
    EXPECT_THROW(quantile_eval(scm, a2, pa, 0.0), ValidationError);
}

TEST(SampleTrajectory, DeterministicSpecAndSeedDeterminism) {
    const auto det = fixtures::m2_scm(1.0, 1.0);
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
        const auto [tr, u] = sample_trajectory(det, rng);
        EXPECT_EQ(tr.values, (std::vector<Value>{0, 1, 1, 1}));
    }
    const auto scm = fixtures::m2_scm();
    Rng a(99), b(99);
    for (int k = 0; k < 20; ++k) EXPECT_EQ(sample_trajectory(scm, a).first, sample_trajectory(scm, b).first);
}

TEST(SampleTrajectory, StateMarginalsMatchAnalytic) {
    std::mt19937_64 gen(5);
    const auto m = fixtures::random_model(gen, 3, 2, 2, 2, false);
    const auto scm = fixtures::build(m);
    const auto& spec = *m.spec;
    // Forward propagation of the state marginal.
    std::vector<std::vector<double>> marg{spec.initial};
    for (std::size_t t = 0; t < spec.horizon; ++t) {
        std::vector<double> next(spec.num_states(), 0.0);
        for (std::size_t s = 0; s < spec.num_states(); ++s)
            for (std::size_t a0 = 0; a0 < 2; ++a0)
                for (std::size_t a1 = 0; a1 < 2; ++a1) {
                    const double pa = m.policy.agents[0].row(s)[a0] * m.policy.agents[1].row(s)[a1];
                    for (const auto& e : spec.transition.row(s, a0 * 2 + a1)) next[e.next] += marg[t][s] * pa * e.prob;
                }
        marg.push_back(next);
    }
    const int N = 100000;
    std::vector<std::vector<int>> counts(spec.horizon + 1, std::vector<int>(spec.num_states(), 0));
    Rng rng(17);
    for (int k = 0; k < N; ++k) {
        const auto tr = sample_trajectory(scm, rng).first;
        for (std::size_t t = 0; t <= spec.horizon; ++t) ++counts[t][tr[scm.layout().state(t)]];
    }
    for (std::size_t t = 0; t <= spec.horizon; ++t)
        for (std::size_t s = 0; s < spec.num_states(); ++s) {
            const double p = marg[t][s];
            const double se = std::sqrt(p * (1 - p) / N);
            EXPECT_NEAR(counts[t][s] / double(N), p, 3 * se + 1e-12) << "t=" << t << " s=" << s;
        }
}

TEST(Posterior, ObservedDownIsUniformOnPreimage) {
    auto spec = std::make_shared<MmdpSpec>();
    spec->states = {"only"};
    spec->agents = {{"mover", {"up", "down", "straight"}}};
    spec->horizon = 1;
    spec->initial = {1.0};
    spec->transition = TransitionTable::per_joint_action(1, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        const TransitionEntry e{0, 1.0};
        spec->transition.set_row(0, j, std::span<const TransitionEntry>(&e, 1));
    }
    JointPolicy pol;
    pol.agents.emplace_back(1, 3);
    const double p[3] = {0.2, 0.5, 0.3};
    pol.agents[0].set_all_priors(0, 0, p);
    const auto scm = build_scm(spec, pol, Orderings::identity(*spec));
    const std::vector<Value> states{0, 0}, actions{1};
    const auto tau = scm.make_trajectory(states, actions);
    const PosteriorNoise post(scm, tau);
    ASSERT_EQ(post.intervals(1).size(), 1u);
    EXPECT_DOUBLE_EQ(post.intervals(1)[0].lo, 0.2);
    EXPECT_DOUBLE_EQ(post.intervals(1)[0].hi, 0.7);
    // Deterministic variables are unconstrained.
    EXPECT_EQ(post.intervals(0)[0].lo, 0.0);
    EXPECT_EQ(post.intervals(0)[0].hi, 1.0);
    Rng rng(1);
    for (int k = 0; k < 1000; ++k) {
        const double u = post.sample(1, rng);
        EXPECT_GT(u, 0.2);
        EXPECT_LE(u, 0.7);
    }
}

TEST(Posterior, ResimulationReproducesTrajectory) {
    std::mt19937_64 gen(23);
    Rng rng(29);
    for (int rep = 0; rep < 20; ++rep) {
        const auto m = fixtures::random_model(gen, 3, 2, 3, 3, rep % 2 == 1);
        const auto scm = fixtures::build(m);
        const auto tau = sample_trajectory(scm, rng).first;
        const PosteriorNoise post(scm, tau);
        NoiseVector u(scm.num_vars());
        for (int k = 0; k < 500; ++k) {
            post.sample_into(rng, u);
            ASSERT_EQ(simulate_with_noise(scm, u), tau);
        }
    }
}

TEST(Posterior, ZeroProbabilityNamesVariable) {
    const auto scm = fixtures::m2_scm(0.5, 0.8);
    const std::vector<Value> states{0, 1}, actions{0, 1};
    const auto tau = scm.make_trajectory(states, actions);
    try {
        PosteriorNoise post(scm, tau);
        FAIL();
    } catch (const ZeroProbabilityEvidence& e) {
        EXPECT_NE(std::string(e.what()).find("A_{1,0}"), std::string::npos);
    }
    EXPECT_EQ(trajectory_probability(scm, tau), 0.0);
}

TEST(Simulate, InterventionsOverrideParents) {
    const auto scm = fixtures::m2_scm(0.5, 0.8);
    const auto tau = fixtures::m2_zero_trajectory(scm);
    const PosteriorNoise post(scm, tau);
    Rng rng(2);
    InterventionSet factual(scm.num_vars());
    factual.fix(scm.layout().action(0, 0), 0);
    InterventionSet flip(scm.num_vars());
    flip.fix(scm.layout().action(0, 0), 1);
    NoiseVector u(scm.num_vars());
    for (int k = 0; k < 2000; ++k) {
        post.sample_into(rng, u);
        EXPECT_EQ(simulate_with_noise(scm, u, InterventionSet(scm.num_vars())), tau);
        EXPECT_EQ(simulate_with_noise(scm, u, factual), tau);
        const auto cf = simulate_with_noise(scm, u, flip);
        EXPECT_EQ(cf[scm.layout().action(1, 0)], u[scm.layout().action(1, 0)] > 0.2 ? 1 : 0);
    }
    EXPECT_THROW(factual.fix(scm.layout().action(0, 0), 1), ValidationError);
    InterventionSet bad(scm.num_vars());
    bad.fix(scm.layout().action(0, 0), 5);
    EXPECT_THROW(simulate_with_noise(scm, u, bad), ValidationError);
}

TEST(Posterior, GeneralPiecewiseFunctions) {
    // A non-quantile override: A_{1,0} given A_{0,0}=0 outputs 1 on (0,1/3] and (2/3,1].
    auto scm = fixtures::m2_scm(0.5, 0.8);
    auto table = std::make_shared<FunctionTable>();
    const std::vector<double> cuts{1.0 / 3, 2.0 / 3, 1.0};
    const std::vector<Value> f0{1, 0, 1}, f1{0, 0, 1};
    for (int s = 0; s < 2; ++s) {
        table->add_row(cuts, f0);
        table->add_row(cuts, f1);
    }
    scm.set_override(scm.layout().action(1, 0), table);
    const std::vector<Value> states{0, 1}, actions{0, 1};
    const auto tau = scm.make_trajectory(states, actions);
    const PosteriorNoise post(scm, tau);
    EXPECT_EQ(post.intervals(2).size(), 2u);
    EXPECT_NEAR(post.mass(2), 2.0 / 3, 1e-15);
    Rng rng(4);
    NoiseVector u(scm.num_vars());
    int high = 0;
    for (int k = 0; k < 20000; ++k) {
        post.sample_into(rng, u);
        ASSERT_EQ(simulate_with_noise(scm, u), tau);
        high += u[2] > 0.5;
    }
    EXPECT_NEAR(high / 20000.0, 0.5, 0.02);
}

TEST(EdgeSets, AgentSpecificSubgraphs) {
    const VariableLayout layout(2, 2, true);
    const auto [g, gs] = agent_specific_subgraphs(layout, 0, 0, AgentSet{0b10});
    EXPECT_FALSE(g.intersects(gs));
    // Agent 1 at t=0 is a later mover, so its edges into S_1 belong to g.
    EXPECT_TRUE(g.contains(layout.state(1), 2));
    // Agent 0 at t=1 is a non-effect downstream action.
    EXPECT_TRUE(gs.contains(layout.state(2), 1));
    EXPECT_TRUE(gs.contains(layout.action(1, 1), 1));
    const auto pse = cf_pse_subgraph(layout, 0, 0, AgentSet{0b10});
    EXPECT_FALSE(pse.contains(layout.action(0, 1), 0));
    EXPECT_TRUE(pse.contains(layout.action(1, 1), 0));
    EXPECT_EQ(pse.complement(layout).size(), 1u);
    EXPECT_EQ(EdgeSet::all(layout).size(), 12u);
}
