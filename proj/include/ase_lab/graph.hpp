#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include "ase_lab/scm.hpp"

namespace ase_lab {

/// Edge-subgraph of the SCM's causal graph. Bit k of mask(v) marks the edge from
/// the k-th parent of v (in layout order) into v.
class EdgeSet {
public:
    EdgeSet() = default;
    explicit EdgeSet(std::size_t num_vars) : masks_(num_vars, 0) {}

    static EdgeSet all(const VariableLayout& layout) {
        EdgeSet e(layout.num_vars());
        for (VarId v = 0; v < layout.num_vars(); ++v) e.masks_[v] = full_mask(layout.parents(v).size());
        return e;
    }

    bool contains(VarId child, std::size_t slot) const noexcept { return (masks_[child] >> slot) & 1U; }
    void add(VarId child, std::size_t slot) noexcept { masks_[child] |= std::uint64_t{1} << slot; }
    void remove(VarId child, std::size_t slot) noexcept { masks_[child] &= ~(std::uint64_t{1} << slot); }
    std::uint64_t mask(VarId child) const noexcept { return masks_[child]; }
    std::size_t num_vars() const noexcept { return masks_.size(); }

    std::size_t size() const noexcept {
        std::size_t n = 0;
        for (auto m : masks_) n += static_cast<std::size_t>(std::popcount(m));
        return n;
    }
    bool empty() const noexcept { return size() == 0; }

    bool intersects(const EdgeSet& other) const noexcept {
        for (std::size_t v = 0; v < masks_.size(); ++v)
            if (masks_[v] & other.masks_[v]) return true;
        return false;
    }

    EdgeSet& operator|=(const EdgeSet& other) noexcept {
        for (std::size_t v = 0; v < masks_.size(); ++v) masks_[v] |= other.masks_[v];
        return *this;
    }

    /// The complement within the full graph of `layout`.
    EdgeSet complement(const VariableLayout& layout) const {
        EdgeSet e(masks_.size());
        for (VarId v = 0; v < masks_.size(); ++v) e.masks_[v] = full_mask(layout.parents(v).size()) & ~masks_[v];
        return e;
    }

    /// True iff every edge belongs to the graph of `layout`.
    bool within(const VariableLayout& layout) const noexcept {
        if (masks_.size() != layout.num_vars()) return false;
        for (VarId v = 0; v < masks_.size(); ++v)
            if (masks_[v] & ~full_mask(layout.parents(v).size())) return false;
        return true;
    }

    bool operator==(const EdgeSet&) const = default;

private:
    static std::uint64_t full_mask(std::size_t slots) noexcept {
        return slots >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << slots) - 1;
    }

    std::vector<std::uint64_t> masks_;
};

/// Adds every outgoing edge of `parent` to `edges`.
inline void add_outgoing_edges(const VariableLayout& layout, VarId parent, EdgeSet& edges) {
    const std::size_t t = layout.time(parent);
    const VarId last = std::min(layout.num_vars() - 1, layout.state(t + 1));
    for (VarId child = parent + 1; child <= last; ++child) {
        const auto ps = layout.parents(child);
        for (std::size_t k = 0; k < ps.size(); ++k)
            if (ps[k] == parent) edges.add(child, k);
    }
}

/// Removes every incoming edge of `child`.
inline void remove_incoming_edges(const VariableLayout& layout, VarId child, EdgeSet& edges) {
    for (std::size_t k = 0; k < layout.parents(child).size(); ++k) edges.remove(child, k);
}

/// Action variables causally downstream of A_{i,t}: every action at later steps
/// and, in turn-based mode, the later movers of step t.
inline std::vector<VarId> downstream_actions(const VariableLayout& layout, std::size_t agent, std::size_t t) {
    std::vector<VarId> out;
    if (layout.turn_based())
        for (std::size_t j = agent + 1; j < layout.num_agents(); ++j) out.push_back(layout.action(j, t));
    for (std::size_t tt = t + 1; tt < layout.horizon(); ++tt)
        for (std::size_t j = 0; j < layout.num_agents(); ++j) out.push_back(layout.action(j, tt));
    return out;
}

/// Bitmask of agents; bit i set means agent i is in the set.
using AgentSet = std::uint64_t;

inline bool in_set(AgentSet set, std::size_t agent) noexcept { return (set >> agent) & 1U; }

/// Effect and reference subgraphs that express the N-specific effect of A_{i,t}:
/// g holds the outgoing edges of downstream actions of agents in N, g* those of the others.
inline std::pair<EdgeSet, EdgeSet> agent_specific_subgraphs(const VariableLayout& layout, std::size_t agent,
                                                            std::size_t t, AgentSet effect_agents) {
    EdgeSet g(layout.num_vars()), g_star(layout.num_vars());
    for (VarId a : downstream_actions(layout, agent, t))
        add_outgoing_edges(layout, a, in_set(effect_agents, layout.agent(a)) ? g : g_star);
    return {std::move(g), std::move(g_star)};
}

/// Effect subgraph of the counterfactual path-specific effect through N: all
/// edges except the incoming edges of non-effect agents' downstream actions.
inline EdgeSet cf_pse_subgraph(const VariableLayout& layout, std::size_t agent, std::size_t t, AgentSet effect_agents) {
    EdgeSet g = EdgeSet::all(layout);
    for (VarId a : downstream_actions(layout, agent, t))
        if (!in_set(effect_agents, layout.agent(a))) remove_incoming_edges(layout, a, g);
    return g;
}

}  // namespace ase_lab
