#pragma once

#include <random>

#include "ase_lab/effects.hpp"
#include "fixtures.hpp"

namespace fixtures {

/// Random subset of the causal graph's edges, each kept with probability p.
inline EdgeSet random_edges(std::mt19937_64& gen, const VariableLayout& L, double p, const EdgeSet* exclude = nullptr) {
    std::bernoulli_distribution keep(p);
    EdgeSet e(L.num_vars());
    for (VarId v = 0; v < L.num_vars(); ++v)
        for (std::size_t k = 0; k < L.parents(v).size(); ++k)
            if (keep(gen) && !(exclude && exclude->contains(v, k))) e.add(v, k);
    return e;
}

/// Random well-formed query of the given kind on `scm`. Counterfactual kinds get a
/// trajectory sampled from the model; `explicit_subgraphs` draws random disjoint
/// g, g* for the path-specific kinds instead of deriving them from N.
inline EffectQuery random_query(std::mt19937_64& gen, const MmdpScm& scm, EffectKind kind,
                                bool explicit_subgraphs = false) {
    const auto& spec = scm.spec();
    const auto& L = scm.layout();
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen); };
    EffectQuery q;
    q.agent = pick(spec.num_agents());
    q.time = pick(spec.horizon);
    q.action = static_cast<Value>(pick(spec.num_actions(q.agent)));
    q.reference = static_cast<Value>(pick(spec.num_actions(q.agent)));
    const std::size_t all = (std::size_t{1} << spec.num_agents()) - 1;
    q.effect_agents = 1 + pick(all);
    const std::size_t ty = q.time + 1 + pick(spec.horizon - q.time);
    q.outcome.time = ty;
    q.outcome.accepted.assign(spec.num_states(), 0);
    for (auto& a : q.outcome.accepted) a = std::bernoulli_distribution(0.5)(gen);
    q.outcome.accepted[pick(spec.num_states())] = 1;
    q.seed = gen();
    if (is_counterfactual(kind)) {
        Rng rng(gen());
        q.trajectory = sample_trajectory(scm, rng).first;
    }
    if (explicit_subgraphs && (kind == EffectKind::fpse || kind == EffectKind::cf_fpse || kind == EffectKind::pse)) {
        q.g = random_edges(gen, L, 0.3);
        q.g_star = random_edges(gen, L, 0.3, &*q.g);
    }
    return q;
}

}  // namespace fixtures
