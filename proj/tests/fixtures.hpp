#pragma once

#include <memory>
#include <random>
#include <vector>

#include "ase_lab/scm.hpp"

namespace fixtures {

using namespace ase_lab;

/// Turn-based, two binary agents, h=1, S_0=0. Agent 1 picks 1 with probability
/// `p1`; agent 2 copies agent 1's action with probability `copy` and otherwise
/// plays 0; S_1 = A_{2,0}. copy=1 gives the deterministic chain.
inline std::shared_ptr<const MmdpSpec> m2_spec() {
    auto spec = std::make_shared<MmdpSpec>();
    spec->states = {"s0", "s1"};
    spec->agents = {{"agent1", {"a0", "a1"}}, {"agent2", {"b0", "b1"}}};
    spec->horizon = 1;
    spec->initial = {1.0, 0.0};
    spec->turn_based = true;
    spec->transition = TransitionTable::per_joint_action(2, 4);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < 4; ++j) {
            const TransitionEntry e{static_cast<Value>(j % 2), 1.0};
            spec->transition.set_row(s, j, std::span<const TransitionEntry>(&e, 1));
        }
    return spec;
}

inline JointPolicy m2_policy(double p1, double copy) {
    JointPolicy pol;
    pol.agents.emplace_back(2, 2, 1, 1);
    pol.agents.emplace_back(2, 2, 2, 1);
    for (std::size_t s = 0; s < 2; ++s) {
        const double a[2] = {1.0 - p1, p1};
        pol.agents[0].set_all_priors(0, s, a);
        const double after0[2] = {1.0, 0.0};
        const double after1[2] = {1.0 - copy, copy};
        auto r0 = pol.agents[1].row(pol.agents[1].context(0, s, 0));
        std::copy(after0, after0 + 2, r0.begin());
        auto r1 = pol.agents[1].row(pol.agents[1].context(0, s, 1));
        std::copy(after1, after1 + 2, r1.begin());
    }
    return pol;
}

inline MmdpScm m2_scm(double p1 = 0.5, double copy = 0.8) {
    auto spec = m2_spec();
    return build_scm(spec, m2_policy(p1, copy), Orderings::identity(*spec));
}

/// All-zero trajectory of the M2 family.
inline Trajectory m2_zero_trajectory(const MmdpScm& scm) {
    const std::vector<Value> states{0, 0}, actions{0, 0};
    return scm.make_trajectory(states, actions);
}

/// Random probability vector with some zero entries.
inline std::vector<double> random_pmf(std::mt19937_64& gen, std::size_t n, double zero_prob = 0.25) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& x : p) {
        x = U(gen) < zero_prob ? 0.0 : U(gen) + 0.05;
        total += x;
    }
    if (total == 0.0) {
        p[std::uniform_int_distribution<std::size_t>(0, n - 1)(gen)] = 1.0;
        return p;
    }
    for (auto& x : p) x /= total;
    return p;
}

inline TotalOrder random_order(std::mt19937_64& gen, std::size_t n) {
    std::vector<Value> o(n);
    for (std::size_t k = 0; k < n; ++k) o[k] = static_cast<Value>(k);
    std::shuffle(o.begin(), o.end(), gen);
    return TotalOrder(std::move(o));
}

struct RandomModel {
    std::shared_ptr<const MmdpSpec> spec;
    JointPolicy policy;
    Orderings orderings;
};

/// Random MMDP with the given shape, random sparse rows and random orderings.
inline RandomModel random_model(std::mt19937_64& gen, std::size_t states, std::size_t agents, std::size_t actions,
                                std::size_t horizon, bool turn_based, bool time_indexed = false) {
    auto spec = std::make_shared<MmdpSpec>();
    for (std::size_t s = 0; s < states; ++s) spec->states.push_back("s" + std::to_string(s));
    for (std::size_t i = 0; i < agents; ++i) {
        AgentSpec a{"agent" + std::to_string(i), {}};
        for (std::size_t k = 0; k < actions; ++k) a.actions.push_back("x" + std::to_string(k));
        spec->agents.push_back(a);
    }
    spec->horizon = horizon;
    spec->turn_based = turn_based;
    spec->initial = random_pmf(gen, states);
    const std::size_t joint = spec->num_joint_actions();
    spec->transition = TransitionTable::per_joint_action(states, joint);
    for (std::size_t s = 0; s < states; ++s)
        for (std::size_t j = 0; j < joint; ++j) {
            const auto p = random_pmf(gen, states);
            std::vector<TransitionEntry> row;
            for (std::size_t k = 0; k < states; ++k)
                if (p[k] > 0.0) row.push_back({static_cast<Value>(k), p[k]});
            spec->transition.set_row(s, j, row);
        }
    RandomModel m;
    for (std::size_t i = 0; i < agents; ++i) {
        PolicyTable t(states, actions, JointPolicy::prior_joint_size(*spec, i), time_indexed ? horizon : 1);
        for (std::size_t c = 0; c < t.num_contexts(); ++c) {
            const auto p = random_pmf(gen, actions);
            std::copy(p.begin(), p.end(), t.row(c).begin());
        }
        m.policy.agents.push_back(std::move(t));
    }
    m.orderings.states = random_order(gen, states);
    for (std::size_t i = 0; i < agents; ++i) m.orderings.actions.push_back(random_order(gen, actions));
    m.spec = spec;
    return m;
}

inline MmdpScm build(const RandomModel& m) { return build_scm(m.spec, m.policy, m.orderings); }

/// Two agents with three actions, h=2, S_0=0, S_{t+1} = max(A_{0,t}, A_{1,t}).
/// Agent 0 is uniform at t=0 and plays 0 at t=1; agent 1 plays 0 at t=0 and at
/// t=1 plays 1 with probability 1/3, 2/3, 1/3 in states 0, 1, 2 (else 0).
inline std::shared_ptr<const MmdpSpec> witness_spec() {
    auto spec = std::make_shared<MmdpSpec>();
    spec->states = {"s0", "s1", "s2"};
    spec->agents = {{"agent1", {"x0", "x1", "x2"}}, {"agent2", {"y0", "y1", "y2"}}};
    spec->horizon = 2;
    spec->initial = {1.0, 0.0, 0.0};
    spec->transition = TransitionTable::per_joint_action(3, 9);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t j = 0; j < 9; ++j) {
            const TransitionEntry e{static_cast<Value>(std::max(j / 3, j % 3)), 1.0};
            spec->transition.set_row(s, j, std::span<const TransitionEntry>(&e, 1));
        }
    return spec;
}

inline MmdpScm witness_canonical() {
    auto spec = witness_spec();
    JointPolicy pol;
    pol.agents.emplace_back(3, 3, 1, 2);
    pol.agents.emplace_back(3, 3, 1, 2);
    const double uniform[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3}, zero[3] = {1.0, 0.0, 0.0};
    const double low[3] = {2.0 / 3, 1.0 / 3, 0.0}, high[3] = {1.0 / 3, 2.0 / 3, 0.0};
    for (std::size_t s = 0; s < 3; ++s) {
        pol.agents[0].set_all_priors(0, s, uniform);
        pol.agents[0].set_all_priors(1, s, zero);
        pol.agents[1].set_all_priors(0, s, zero);
        pol.agents[1].set_all_priors(1, s, s == 1 ? high : low);
    }
    return build_scm(spec, pol, Orderings::identity(*spec));
}

/// The canonical model with A_{1,1} replaced by a function over thirds of the
/// noise: `rows[s]` gives its outputs in state s.
inline MmdpScm witness_with_function(const std::vector<std::vector<Value>>& rows) {
    auto scm = witness_canonical();
    auto table = std::make_shared<FunctionTable>();
    const std::vector<double> thirds{1.0 / 3, 2.0 / 3, 1.0};
    const std::vector<double> whole{1.0};
    const std::vector<Value> zero{0};
    for (int s = 0; s < 3; ++s) table->add_row(whole, zero);
    for (int s = 0; s < 3; ++s) table->add_row(thirds, rows[s]);
    scm.set_override(scm.layout().action(1, 1), table);
    return scm;
}

/// Monotonic but not noise-monotonic outputs (the three-point counterexample in state 0/1).
inline MmdpScm witness_counterexample() { return witness_with_function({{1, 0, 0}, {1, 0, 1}, {0, 0, 1}}); }

/// Noise-monotonic outputs with the same observational tables as the canonical model.
inline MmdpScm witness_monotone() { return witness_with_function({{0, 0, 1}, {0, 1, 1}, {0, 0, 1}}); }

}  // namespace fixtures
