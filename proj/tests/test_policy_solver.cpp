#include <gtest/gtest.h>

#include <random>

#include "ase_lab/env/sepsis_env.hpp"
#include "ase_lab/policy_solver.hpp"

using namespace ase_lab;

namespace {

MdpView random_mdp(std::mt19937_64& gen, std::size_t states, std::size_t actions) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MdpView m;
    m.num_states = states;
    m.num_actions = actions;
    m.gamma = 0.9;
    for (std::size_t r = 0; r < states * actions; ++r) {
        std::vector<TransitionEntry> row;
        double total = 0.0;
        for (std::size_t s = 0; s < states; ++s)
            if (unit(gen) < 0.3 || s == r % states) {
                row.push_back({static_cast<Value>(s), unit(gen)});
                total += row.back().prob;
            }
        for (auto& e : row) e.prob /= total;
        m.rows.push_back(row);
        m.reward.push_back(unit(gen) * 2 - 1);
    }
    return m;
}

}  // namespace

TEST(PolicySolver, SingleState) {
    MdpView m;
    m.num_states = 1;
    m.num_actions = 2;
    m.gamma = 0.99;
    m.rows = {{{0, 1.0}}, {{0, 1.0}}};
    m.reward = {0.0, 1.0};
    const auto p = policy_iteration(m);
    EXPECT_EQ(p.action[0], 1u);
    EXPECT_NEAR(p.value[0], 1.0 / (1.0 - 0.99), 1e-9);
}

TEST(PolicySolver, MatchesValueIteration) {
    std::mt19937_64 gen(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_mdp(gen, 20, 3);
        const auto p = policy_iteration(m);
        const auto v = value_iteration(m, 1e-12);
        for (std::size_t s = 0; s < m.num_states; ++s) EXPECT_NEAR(p.value[s], v[s], 1e-9);
        // Stable under one more improvement step.
        for (std::size_t s = 0; s < m.num_states; ++s)
            for (std::size_t a = 0; a < m.num_actions; ++a)
                EXPECT_LE(detail::q_value(m, p.value, s, a, m.gamma), p.value[s] + 1e-9);
    }
}

TEST(PolicySolver, ImprovementIsMonotone) {
    std::mt19937_64 gen(22);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = policy_iteration(random_mdp(gen, 20, 4));
        for (std::size_t k = 1; k < p.trace.size(); ++k)
            for (std::size_t s = 0; s < 20; ++s) EXPECT_GE(p.trace[k][s], p.trace[k - 1][s] - 1e-10);
    }
}

TEST(PolicySolver, TiesGoToLowestIndex) {
    MdpView m;
    m.num_states = 1;
    m.num_actions = 3;
    m.rows = {{{0, 1.0}}, {{0, 1.0}}, {{0, 1.0}}};
    m.reward = {0.5, 1.0, 1.0};
    EXPECT_EQ(policy_iteration(m).action[0], 1u);
    EXPECT_EQ(backward_induction(m, 3).action[0], 1u);
}

TEST(PolicySolver, BackwardInduction) {
    // Action 1 pays now and ends in an absorbing zero state; action 0 waits for a bigger payoff.
    MdpView m;
    m.num_states = 3;
    m.num_actions = 2;
    m.gamma = 1.0;
    m.rows = {{{1, 1.0}}, {{2, 1.0}}, {{2, 1.0}}, {{2, 1.0}}, {{2, 1.0}}, {{2, 1.0}}};
    m.reward = {0.0, 1.0, 3.0, 0.0, 0.0, 0.0};
    const auto p = backward_induction(m, 2);
    EXPECT_EQ(p.at(0, 0, 3), 0u);
    EXPECT_EQ(p.at(1, 0, 3), 1u);
    EXPECT_DOUBLE_EQ(p.value[0], 3.0);
}

TEST(PolicySolver, Validation) {
    MdpView m;
    m.num_states = 1;
    m.num_actions = 1;
    m.rows = {{{0, 0.5}}};
    m.reward = {0.0};
    EXPECT_THROW(policy_iteration(m), ValidationError);
    m.rows = {{{0, 1.0}}};
    m.gamma = 1.0;
    EXPECT_THROW(policy_iteration(m), ValidationError);
}

TEST(PolicySolver, SepsisPoliciesDiffer) {
    const auto asset = sepsis::load_asset();
    const auto pol = sepsis::train_policies(asset, {});
    std::size_t differ = 0, ai_abx = 0, clin_abx = 0;
    for (std::size_t s = 0; s < sepsis::kAlive; ++s) {
        const auto a = pol.ai.action[s], c = pol.clinician.action[s];
        differ += a != c;
        ai_abx += sepsis::antibiotics(a);
        clin_abx += sepsis::antibiotics(c);
        EXPECT_FALSE(sepsis::antibiotics(c) && !sepsis::antibiotics(a)) << sepsis::state_name(static_cast<Value>(s));
    }
    EXPECT_GE(differ, 1u);
    EXPECT_GE(ai_abx, clin_abx);
}

TEST(PolicySolver, SepsisFiniteHorizonFlag) {
    const auto asset = sepsis::load_asset();
    sepsis::SepsisEnvConfig cfg;
    cfg.finite_horizon = true;
    const auto pol = sepsis::train_policies(asset, cfg);
    EXPECT_EQ(pol.ai.slices, cfg.horizon);
    EXPECT_EQ(pol.ai.action.size(), cfg.horizon * sepsis::kStates);
    const auto scm = sepsis::build_sepsis_env(cfg, asset, pol);
    EXPECT_EQ(scm.policy().agents[sepsis::kAi].time_slices(), cfg.horizon);
}
