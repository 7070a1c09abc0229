#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ase_lab/core.hpp"
#include "ase_lab/function_table.hpp"

namespace ase_lab {

struct AgentSpec {
    std::string name;
    std::vector<std::string> actions;
};

struct TransitionEntry {
    Value next;
    double prob;

    bool operator==(const TransitionEntry&) const = default;
};

/// Sparse transition rows T(. | s, key). Joint actions map onto a smaller set of
/// keys (e.g. the treatment actually applied), so equivalent joint actions share a row.
class TransitionTable {
public:
    TransitionTable() = default;

    TransitionTable(std::size_t num_states, std::size_t num_keys, std::vector<std::uint32_t> key_of_joint)
        : num_states_(num_states), num_keys_(num_keys), key_of_joint_(std::move(key_of_joint)),
          offsets_(num_states * num_keys + 1, 0), filled_(num_states * num_keys, false) {
        for (auto k : key_of_joint_)
            if (k >= num_keys_) throw ValidationError("transition key out of range");
    }

    /// Identity key map: one row per (state, joint action).
    static TransitionTable per_joint_action(std::size_t num_states, std::size_t num_joint) {
        std::vector<std::uint32_t> keys(num_joint);
        for (std::size_t j = 0; j < num_joint; ++j) keys[j] = static_cast<std::uint32_t>(j);
        return TransitionTable(num_states, num_joint, std::move(keys));
    }

    /// Rows must be set in increasing (state, key) order; skipped rows stay empty
    /// and are reported by validation.
    void set_row(std::size_t state, std::size_t key, std::span<const TransitionEntry> entries) {
        const std::size_t r = state * num_keys_ + key;
        if (r + 1 < next_row_) throw ValidationError("transition rows must be set in order");
        for (std::size_t q = next_row_; q <= r; ++q) offsets_[q] = static_cast<std::uint32_t>(entries_.size());
        for (const auto& e : entries)
            if (e.prob != 0.0) entries_.push_back(e);
        offsets_[r + 1] = static_cast<std::uint32_t>(entries_.size());
        filled_[r] = true;
        next_row_ = r + 2;
    }

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_keys() const noexcept { return num_keys_; }
    std::size_t num_rows() const noexcept { return num_states_ * num_keys_; }
    const std::vector<std::uint32_t>& key_of_joint() const noexcept { return key_of_joint_; }
    std::size_t key(std::size_t joint) const { return key_of_joint_[joint]; }
    bool has_row(std::size_t row) const { return filled_[row]; }

    /// Rows after the last one set are empty.
    std::span<const TransitionEntry> row(std::size_t r) const {
        if (r + 2 > next_row_) return {};
        return {entries_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
    }
    std::span<const TransitionEntry> row(std::size_t state, std::size_t key) const {
        return row(state * num_keys_ + key);
    }

private:
    std::size_t num_states_ = 0;
    std::size_t num_keys_ = 0;
    std::vector<std::uint32_t> key_of_joint_;
    std::vector<std::uint32_t> offsets_{0};
    std::vector<bool> filled_;
    std::vector<TransitionEntry> entries_;
    std::size_t next_row_ = 0;
};

/// The MMDP tuple: states, agents with action sets, transitions, horizon, initial distribution.
struct MmdpSpec {
    std::vector<std::string> states;
    std::vector<AgentSpec> agents;
    TransitionTable transition;
    std::size_t horizon = 1;
    std::vector<double> initial;
    bool turn_based = false;

    std::size_t num_states() const noexcept { return states.size(); }
    std::size_t num_agents() const noexcept { return agents.size(); }
    std::size_t num_actions(std::size_t agent) const { return agents[agent].actions.size(); }

    std::size_t num_joint_actions() const {
        std::size_t n = 1;
        for (const auto& a : agents) n *= a.actions.size();
        return n;
    }

    /// Mixed-radix index of a joint action, agent 0 most significant.
    std::size_t joint_index(std::span<const Value> actions) const {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < agents.size(); ++i)
            idx = idx * agents[i].actions.size() + static_cast<std::size_t>(actions[i]);
        return idx;
    }

    void validate() const {
        if (states.empty()) throw ValidationError("model has no states");
        if (agents.empty()) throw ValidationError("model has no agents");
        if (agents.size() > 62) throw ValidationError("at most 62 agents are supported");
        if (horizon < 1) throw ValidationError("horizon must be at least 1");
        for (const auto& a : agents)
            if (a.actions.empty()) throw ValidationError("agent '" + a.name + "' has no actions");
        check_distribution(initial, states.size(), "initial distribution");
        if (transition.num_states() != states.size())
            throw ValidationError("transition table covers " + std::to_string(transition.num_states()) +
                                  " states, model has " + std::to_string(states.size()));
        if (transition.key_of_joint().size() != num_joint_actions())
            throw ValidationError("transition key map does not cover every joint action");
        for (std::size_t s = 0; s < states.size(); ++s) {
            for (std::size_t k = 0; k < transition.num_keys(); ++k) {
                const std::size_t r = s * transition.num_keys() + k;
                const auto where = [&] { return "transition row (state '" + states[s] + "', key " + std::to_string(k) + ")"; };
                if (!transition.has_row(r)) throw ValidationError(where() + " is missing");
                double total = 0.0;
                for (const auto& e : transition.row(r)) {
                    if (e.next < 0 || static_cast<std::size_t>(e.next) >= states.size())
                        throw ValidationError(where() + " has an out-of-range next state");
                    if (!(e.prob >= 0.0 && e.prob <= 1.0)) throw ValidationError(where() + " has a probability outside [0,1]");
                    total += e.prob;
                }
                if (std::fabs(total - 1.0) > kNormalizationTolerance)
                    throw ValidationError(where() + " sums to " + std::to_string(total));
            }
        }
    }

    static void check_distribution(std::span<const double> p, std::size_t n, const std::string& what) {
        if (p.size() != n) throw ValidationError(what + " has " + std::to_string(p.size()) + " entries, expected " + std::to_string(n));
        double total = 0.0;
        for (double x : p) {
            if (!(x >= 0.0 && x <= 1.0)) throw ValidationError(what + " has a probability outside [0,1]");
            total += x;
        }
        if (std::fabs(total - 1.0) > kNormalizationTolerance) throw ValidationError(what + " sums to " + std::to_string(total));
    }
};

/// Dense policy table of one agent: pi_i(a | [t,] s [, earlier movers' joint action]).
class PolicyTable {
public:
    PolicyTable() = default;

    /// `prior_joint` is the number of joint actions of earlier movers (1 in simultaneous mode);
    /// `time_slices` is 1 for a stationary policy or the horizon for a time-indexed one.
    PolicyTable(std::size_t num_states, std::size_t num_actions, std::size_t prior_joint = 1, std::size_t time_slices = 1)
        : num_states_(num_states), num_actions_(num_actions), prior_joint_(prior_joint), time_slices_(time_slices),
          probs_(num_states * num_actions * prior_joint * time_slices, 0.0) {}

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    std::size_t prior_joint() const noexcept { return prior_joint_; }
    std::size_t time_slices() const noexcept { return time_slices_; }
    bool time_indexed() const noexcept { return time_slices_ > 1; }
    std::size_t num_contexts() const noexcept { return num_states_ * prior_joint_ * time_slices_; }

    std::size_t context(std::size_t t, std::size_t state, std::size_t prior = 0) const noexcept {
        const std::size_t slice = time_slices_ > 1 ? t : 0;
        return (slice * num_states_ + state) * prior_joint_ + prior;
    }

    std::span<double> row(std::size_t ctx) noexcept { return {probs_.data() + ctx * num_actions_, num_actions_}; }
    std::span<const double> row(std::size_t ctx) const noexcept {
        return {probs_.data() + ctx * num_actions_, num_actions_};
    }

    /// Sets every earlier-mover context of (t, state) to the same distribution.
    void set_all_priors(std::size_t t, std::size_t state, std::span<const double> dist) {
        for (std::size_t p = 0; p < prior_joint_; ++p) {
            auto r = row(context(t, state, p));
            std::copy(dist.begin(), dist.end(), r.begin());
        }
    }

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t prior_joint_ = 1;
    std::size_t time_slices_ = 1;
    std::vector<double> probs_;
};

struct JointPolicy {
    std::vector<PolicyTable> agents;

    /// Number of joint actions of agents 0..i-1 (what agent i may condition on in turn-based mode).
    static std::size_t prior_joint_size(const MmdpSpec& spec, std::size_t agent) {
        if (!spec.turn_based) return 1;
        std::size_t n = 1;
        for (std::size_t j = 0; j < agent; ++j) n *= spec.num_actions(j);
        return n;
    }

    void validate(const MmdpSpec& spec) const {
        if (agents.size() != spec.num_agents()) throw ValidationError("policy count does not match agent count");
        for (std::size_t i = 0; i < agents.size(); ++i) {
            const auto& p = agents[i];
            const std::string who = "policy of agent '" + spec.agents[i].name + "'";
            if (p.num_states() != spec.num_states() || p.num_actions() != spec.num_actions(i))
                throw ValidationError(who + " has the wrong shape");
            if (p.prior_joint() != prior_joint_size(spec, i))
                throw ValidationError(who + " does not match the mover structure");
            if (p.time_slices() != 1 && p.time_slices() != spec.horizon)
                throw ValidationError(who + " must be stationary or indexed by every time step");
            for (std::size_t c = 0; c < p.num_contexts(); ++c) {
                const auto r = p.row(c);
                const std::size_t s = (c / p.prior_joint()) % p.num_states();
                MmdpSpec::check_distribution(r, r.size(), who + " row for state '" + spec.states[s] + "' (context " + std::to_string(c) + ")");
            }
        }
    }
};

/// One total ordering per variable family: all state variables share `states`,
/// agent i's action variables share `actions[i]`.
struct Orderings {
    TotalOrder states;
    std::vector<TotalOrder> actions;

    static Orderings identity(const MmdpSpec& spec) {
        Orderings o;
        o.states = TotalOrder::identity(spec.num_states());
        for (const auto& a : spec.agents) o.actions.push_back(TotalOrder::identity(a.actions.size()));
        return o;
    }

    void validate(const MmdpSpec& spec) const {
        if (states.size() != spec.num_states()) throw ValidationError("state ordering does not cover the state domain");
        if (actions.size() != spec.num_agents()) throw ValidationError("missing action ordering for some agent");
        for (std::size_t i = 0; i < actions.size(); ++i)
            if (actions[i].size() != spec.num_actions(i))
                throw ValidationError("action ordering of agent '" + spec.agents[i].name + "' does not cover its domain");
    }
};

}  // namespace ase_lab
