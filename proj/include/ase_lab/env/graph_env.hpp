#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "ase_lab/effects.hpp"
#include "ase_lab/scm.hpp"

namespace ase_lab::graph {

inline constexpr std::size_t kAgents = 6;
inline constexpr std::size_t kRows = 3;
inline constexpr std::size_t kHorizon = 4;
/// State 0 is the initial node; states 1..729 encode every agent's row in the
/// current column, agent 0 as the most significant base-3 digit.
inline constexpr std::size_t kStates = 1 + 729;
inline constexpr Value kUp = 0, kDown = 1, kStraight = 2;
inline constexpr Value kStart = 0;

using Rows = std::array<int, kAgents>;

struct GraphEnvConfig {
    std::array<double, kAgents> random_prob{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
    /// Action ordering, lowest first; the default is up < down < straight.
    std::array<Value, 3> ordering{kUp, kDown, kStraight};
};

inline Value encode(const Rows& r) {
    std::size_t id = 0;
    for (int x : r) id = id * kRows + static_cast<std::size_t>(x);
    return static_cast<Value>(1 + id);
}

inline Rows decode(Value s) {
    Rows r{};
    std::size_t id = static_cast<std::size_t>(s) - 1;
    for (std::size_t j = kAgents; j-- > 0;) {
        r[j] = static_cast<int>(id % kRows);
        id /= kRows;
    }
    return r;
}

/// Row reached from `row` (the initial node counts as the middle row); moves
/// that would leave the grid go straight.
inline int move(int row, Value a) {
    if (a == kUp) return row > 0 ? row - 1 : row;
    if (a == kDown) return row + 1 < static_cast<int>(kRows) ? row + 1 : row;
    return row;
}

inline Rows positions(Value s) { return s == kStart ? Rows{1, 1, 1, 1, 1, 1} : decode(s); }

/// Goal: two agents on every node of the last column.
inline bool balanced(Value s) {
    if (s == kStart) return false;
    std::array<int, kRows> n{};
    for (int x : decode(s)) ++n[static_cast<std::size_t>(x)];
    return n[0] == 2 && n[1] == 2 && n[2] == 2;
}

inline Outcome success_outcome() {
    Outcome o{kHorizon, std::vector<char>(kStates, 0)};
    for (std::size_t s = 0; s < kStates; ++s) o.accepted[s] = balanced(static_cast<Value>(s));
    return o;
}

inline std::string state_name(Value s) {
    if (s == kStart) return "start";
    std::string n = "r";
    for (int x : decode(s)) n += static_cast<char>('0' + x);
    return n;
}

/// Probabilities of up, down, straight for agent i with random-action probability p.
inline std::array<double, 3> action_probs(Value s, std::size_t i, double p) {
    if (s == kStart) return {1.0 / 3, 1.0 / 3, 1.0 / 3};
    const Rows r = decode(s);
    std::array<int, kRows> n{};
    for (int x : r) ++n[static_cast<std::size_t>(x)];
    std::array<double, 3> pr{p / 3, p / 3, p / 3};
    const int k = r[i];
    const double nk = n[static_cast<std::size_t>(k)];
    if (nk <= 2) {
        pr[kStraight] += 1.0 - p;
        return pr;
    }
    // A direction is open when some row that way holds fewer than two agents.
    bool up_open = false, down_open = false;
    for (int row = 0; row < k; ++row) up_open = up_open || n[static_cast<std::size_t>(row)] < 2;
    for (int row = k + 1; row < static_cast<int>(kRows); ++row) down_open = down_open || n[static_cast<std::size_t>(row)] < 2;
    const double move_mass = (1.0 - p) * (nk - 2.0) / nk;
    pr[kStraight] += (1.0 - p) * 2.0 / nk;
    if (up_open && down_open) {
        pr[kUp] += move_mass / 2;
        pr[kDown] += move_mass / 2;
    } else if (up_open) {
        pr[kUp] += move_mass;
    } else {
        pr[kDown] += move_mass;
    }
    return pr;
}

/// Spec shared by every Graph model: simultaneous moves, deterministic transitions.
inline std::shared_ptr<const MmdpSpec> graph_spec() {
    auto spec = std::make_shared<MmdpSpec>();
    for (std::size_t s = 0; s < kStates; ++s) spec->states.push_back(state_name(static_cast<Value>(s)));
    for (std::size_t i = 0; i < kAgents; ++i)
        spec->agents.push_back({"agent" + std::to_string(i + 1), {"up", "down", "straight"}});
    spec->horizon = kHorizon;
    spec->initial.assign(kStates, 0.0);
    spec->initial[kStart] = 1.0;
    const std::size_t joint = spec->num_joint_actions();
    spec->transition = TransitionTable::per_joint_action(kStates, joint);
    for (std::size_t s = 0; s < kStates; ++s) {
        const Rows from = positions(static_cast<Value>(s));
        for (std::size_t j = 0; j < joint; ++j) {
            Rows to{};
            std::size_t rest = j;
            for (std::size_t i = kAgents; i-- > 0;) {
                to[i] = move(from[i], static_cast<Value>(rest % 3));
                rest /= 3;
            }
            const TransitionEntry e{encode(to), 1.0};
            spec->transition.set_row(s, j, std::span<const TransitionEntry>(&e, 1));
        }
    }
    return spec;
}

inline JointPolicy graph_policy(const GraphEnvConfig& cfg) {
    JointPolicy pol;
    for (std::size_t i = 0; i < kAgents; ++i) {
        PolicyTable t(kStates, 3);
        for (std::size_t s = 0; s < kStates; ++s) {
            const auto pr = action_probs(static_cast<Value>(s), i, cfg.random_prob[i]);
            std::copy(pr.begin(), pr.end(), t.row(s).begin());
        }
        pol.agents.push_back(std::move(t));
    }
    return pol;
}

inline Orderings graph_orderings(const MmdpSpec& spec, const GraphEnvConfig& cfg) {
    Orderings o = Orderings::identity(spec);
    for (auto& a : o.actions) a = TotalOrder(std::vector<Value>(cfg.ordering.begin(), cfg.ordering.end()));
    return o;
}

/// Builds the Graph SCM. Passing a previously built model shares its transition tables.
inline MmdpScm build_graph_env(const GraphEnvConfig& cfg, const MmdpScm* reuse = nullptr) {
    const auto spec = reuse ? reuse->spec_ptr() : graph_spec();
    return build_scm(spec, graph_policy(cfg), graph_orderings(*spec, cfg), reuse);
}

}  // namespace ase_lab::graph
