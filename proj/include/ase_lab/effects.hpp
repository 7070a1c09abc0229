#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ase_lab/graph.hpp"
#include "ase_lab/scm.hpp"

namespace ase_lab {

enum class EffectKind { tcfe, cf_ase, cf_pse, ase, fpse, pse, tce, cf_fpse };

inline const char* to_string(EffectKind k) noexcept {
    switch (k) {
        case EffectKind::tcfe: return "tcfe";
        case EffectKind::cf_ase: return "cf_ase";
        case EffectKind::cf_pse: return "cf_pse";
        case EffectKind::ase: return "ase";
        case EffectKind::fpse: return "fpse";
        case EffectKind::pse: return "pse";
        case EffectKind::tce: return "tce";
        case EffectKind::cf_fpse: return "cf_fpse";
    }
    return "?";
}

/// Accepts both "cf-ase" and "cf_ase" spellings.
inline EffectKind parse_effect_kind(std::string s) {
    for (auto& c : s)
        if (c == '-') c = '_';
    for (auto k : {EffectKind::tcfe, EffectKind::cf_ase, EffectKind::cf_pse, EffectKind::ase, EffectKind::fpse,
                   EffectKind::pse, EffectKind::tce, EffectKind::cf_fpse})
        if (s == to_string(k)) return k;
    throw ValidationError("unknown effect kind '" + s + "'");
}

/// Conditions on the trajectory (counterfactual kinds) rather than the prior.
inline bool is_counterfactual(EffectKind k) noexcept {
    return k == EffectKind::tcfe || k == EffectKind::cf_ase || k == EffectKind::cf_pse || k == EffectKind::cf_fpse;
}

inline bool uses_effect_agents(EffectKind k) noexcept {
    return k == EffectKind::cf_ase || k == EffectKind::cf_pse || k == EffectKind::ase;
}

/// Outcome Y = y: the state at `time` lies in the accepted set.
struct Outcome {
    std::size_t time = 0;
    std::vector<char> accepted;

    bool holds(Value s) const noexcept { return accepted[static_cast<std::size_t>(s)] != 0; }

    static Outcome state_equals(std::size_t time, Value s, std::size_t num_states) {
        Outcome o{time, std::vector<char>(num_states, 0)};
        o.accepted.at(static_cast<std::size_t>(s)) = 1;
        return o;
    }
    static Outcome state_not_equals(std::size_t time, Value s, std::size_t num_states) {
        Outcome o{time, std::vector<char>(num_states, 1)};
        o.accepted.at(static_cast<std::size_t>(s)) = 0;
        return o;
    }
};

struct EffectQuery {
    std::optional<Trajectory> trajectory;
    std::size_t agent = 0;
    std::size_t time = 0;
    Value action = 0;
    std::optional<Value> reference;
    AgentSet effect_agents = 0;
    Outcome outcome;
    std::size_t samples = 100;
    std::uint64_t seed = 0;
    /// Effect and reference subgraphs for the path-specific kinds; derived from
    /// `effect_agents` when absent.
    std::optional<EdgeSet> g;
    std::optional<EdgeSet> g_star;
};

struct EffectEstimate {
    double value = 0.0;
    std::size_t successes = 0;
    std::size_t samples = 0;
    double se = 0.0;
    /// 1(tau(Y)=y) for counterfactual kinds, the estimate of P(y_{x*}) otherwise.
    double baseline = 0.0;
};

inline void validate_query(const MmdpScm& scm, const EffectQuery& q, EffectKind kind) {
    const auto& spec = scm.spec();
    if (q.agent >= spec.num_agents()) throw ValidationError("acting agent out of range");
    if (q.time >= spec.horizon) throw ValidationError("acting time must be below the horizon");
    if (q.action < 0 || static_cast<std::size_t>(q.action) >= spec.num_actions(q.agent))
        throw ValidationError("alternative action outside the agent's action set");
    if (q.outcome.time <= q.time || q.outcome.time > spec.horizon)
        throw ValidationError("outcome must be a state after the acting step and within the horizon");
    if (q.outcome.accepted.size() != spec.num_states()) throw ValidationError("outcome predicate does not cover the state set");
    if (q.samples < 1) throw ValidationError("sample budget must be at least 1");
    if (is_counterfactual(kind)) {
        if (!q.trajectory) throw ValidationError(std::string(to_string(kind)) + " needs a trajectory");
        if (q.trajectory->values.size() != scm.num_vars()) throw ValidationError("trajectory does not match the model");
    } else {
        if (!q.reference) throw ValidationError(std::string(to_string(kind)) + " needs a reference action");
        if (*q.reference < 0 || static_cast<std::size_t>(*q.reference) >= spec.num_actions(q.agent))
            throw ValidationError("reference action outside the agent's action set");
    }
    const AgentSet all = spec.num_agents() >= 64 ? ~AgentSet{0} : (AgentSet{1} << spec.num_agents()) - 1;
    if (q.effect_agents & ~all) throw ValidationError("effect agent out of range");
    const bool needs_n = uses_effect_agents(kind) ||
                         ((kind == EffectKind::fpse || kind == EffectKind::cf_fpse) && !(q.g && q.g_star)) ||
                         (kind == EffectKind::pse && !q.g);
    if (needs_n && q.effect_agents == 0) throw ValidationError("effect agent set must be non-empty");
    for (const auto* e : {&q.g, &q.g_star})
        if (*e && !(*e)->within(scm.layout())) throw ValidationError("subgraph has edges outside the causal graph");
    if (q.g && q.g_star && q.g->intersects(*q.g_star)) throw ValidationError("effect and reference subgraphs overlap");
}

/// Effect/reference subgraphs of a path-specific query: explicit ones, or the
/// agent-specific pair derived from the effect agents.
inline std::pair<EdgeSet, EdgeSet> query_subgraphs(const MmdpScm& scm, const EffectQuery& q) {
    if (q.g && q.g_star) return {*q.g, *q.g_star};
    auto [g, gs] = agent_specific_subgraphs(scm.layout(), q.agent, q.time, q.effect_agents);
    return {q.g ? *q.g : g, q.g_star ? *q.g_star : gs};
}

namespace detail {

inline constexpr std::size_t kBlockSize = 1024;

/// Runs `draw(rng)` H times, reseeding every block so any draw can be reproduced
/// from (seed, index) alone.
template <class Draw>
void for_each_draw(std::size_t samples, std::uint64_t seed, Draw&& draw) {
    for (std::size_t start = 0, block = 0; start < samples; start += kBlockSize, ++block) {
        Rng rng(mix_seed(seed, block));
        const std::size_t end = std::min(samples, start + kBlockSize);
        for (std::size_t k = start; k < end; ++k) draw(rng);
    }
}

inline EffectEstimate counterfactual_estimate(std::size_t successes, std::size_t samples, bool factual_hit) {
    EffectEstimate e;
    e.successes = successes;
    e.samples = samples;
    const double p = static_cast<double>(successes) / static_cast<double>(samples);
    e.baseline = factual_hit ? 1.0 : 0.0;
    e.value = p - e.baseline;
    e.se = std::sqrt(p * (1.0 - p) / static_cast<double>(samples));
    return e;
}

/// Difference estimate from per-draw indicator pairs (modified world, reference world).
inline EffectEstimate interventional_estimate(std::size_t hits, std::size_t ref_hits, double sum_sq_diff,
                                              std::size_t samples) {
    EffectEstimate e;
    const double H = static_cast<double>(samples);
    e.successes = hits;
    e.samples = samples;
    e.baseline = static_cast<double>(ref_hits) / H;
    e.value = static_cast<double>(hits) / H - e.baseline;
    const double var = samples > 1 ? std::max(0.0, (sum_sq_diff - H * e.value * e.value) / (H - 1.0)) : 0.0;
    e.se = std::sqrt(var / H);
    return e;
}

/// Evaluates variables [first, stop] of M_q: X fixed to x_value and every edge in g
/// (resp. g_star) reading its parent from `e_world` (resp. `s_world`).
inline void simulate_spliced(const MmdpScm& scm, std::span<const double> noise, VarId x, Value x_value,
                             const EdgeSet& g, const EdgeSet& g_star, const Trajectory& e_world,
                             const Trajectory& s_world, Trajectory& out, VarId first, VarId stop) {
    out.values.resize(scm.num_vars());
    Value buf[64];
    for (VarId v = first; v <= stop; ++v) {
        if (v == x) {
            out[v] = x_value;
            continue;
        }
        const auto ps = scm.layout().parents(v);
        const std::uint64_t ge = g.mask(v), gs = g_star.mask(v);
        for (std::size_t k = 0; k < ps.size(); ++k) {
            const std::uint64_t bit = std::uint64_t{1} << k;
            buf[k] = (ge & bit) ? e_world[ps[k]] : (gs & bit) ? s_world[ps[k]] : out[ps[k]];
        }
        out[v] = scm.table(v).eval(scm.row_index(v, std::span<const Value>(buf, ps.size())), noise[v]);
    }
}

}  // namespace detail

/// TCFE: P(y_a | tau) - 1(tau(Y) = y), by posterior sampling.
inline EffectEstimate estimate_tcfe(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::tcfe);
    const auto& tau = *q.trajectory;
    const auto& L = scm.layout();
    const PosteriorNoise post(scm, tau);
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    InterventionSet doa(scm.num_vars());
    doa.fix(x, q.action);
    NoiseVector u(scm.num_vars());
    Trajectory w = tau;
    std::size_t c = 0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = x; v <= y; ++v) u[v] = post.sample(v, rng);
        simulate_range(scm, u, &doa, w, x, y);
        c += q.outcome.holds(w[y]);
    });
    return detail::counterfactual_estimate(c, q.samples, q.outcome.holds(tau[y]));
}

/// cf-ASE by posterior sampling: per draw, the do(a) world supplies the effect
/// agents' downstream actions, the trajectory supplies everyone else's, and the
/// acting variable keeps its factual value.
inline EffectEstimate estimate_cf_ase(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::cf_ase);
    const auto& tau = *q.trajectory;
    const auto& L = scm.layout();
    const PosteriorNoise post(scm, tau);
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    std::vector<VarId> effect_down, other_down;
    for (VarId d : downstream_actions(L, q.agent, q.time))
        if (d < y) (in_set(q.effect_agents, L.agent(d)) ? effect_down : other_down).push_back(d);
    InterventionSet doa(scm.num_vars()), ivs(scm.num_vars());
    doa.fix(x, q.action);
    NoiseVector u(scm.num_vars());
    Trajectory we = tau, wi = tau;
    std::size_t c = 0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = x; v <= y; ++v) u[v] = post.sample(v, rng);
        simulate_range(scm, u, &doa, we, x, y);
        ivs.clear();
        for (VarId d : other_down) ivs.fix(d, tau[d]);
        for (VarId d : effect_down) ivs.fix(d, we[d]);
        simulate_range(scm, u, &ivs, wi, x, y);
        c += q.outcome.holds(wi[y]);
    });
    return detail::counterfactual_estimate(c, q.samples, q.outcome.holds(tau[y]));
}

/// cf-PSE through N: do(a) with non-effect agents' downstream actions fixed to the trajectory.
inline EffectEstimate estimate_cf_pse(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::cf_pse);
    const auto& tau = *q.trajectory;
    const auto& L = scm.layout();
    const PosteriorNoise post(scm, tau);
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    InterventionSet ivs(scm.num_vars());
    ivs.fix(x, q.action);
    for (VarId d : downstream_actions(L, q.agent, q.time))
        if (d < y && !in_set(q.effect_agents, L.agent(d))) ivs.fix(d, tau[d]);
    NoiseVector u(scm.num_vars());
    Trajectory w = tau;
    std::size_t c = 0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = x; v <= y; ++v) u[v] = post.sample(v, rng);
        simulate_range(scm, u, &ivs, w, x, y);
        c += q.outcome.holds(w[y]);
    });
    return detail::counterfactual_estimate(c, q.samples, q.outcome.holds(tau[y]));
}

/// ASE from prior noise. One noise draw serves the do(a*), do(a) and do(I) worlds.
inline EffectEstimate estimate_ase(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::ase);
    const auto& L = scm.layout();
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    std::vector<VarId> effect_down, other_down;
    for (VarId d : downstream_actions(L, q.agent, q.time))
        if (d < y) (in_set(q.effect_agents, L.agent(d)) ? effect_down : other_down).push_back(d);
    InterventionSet doa(scm.num_vars()), doref(scm.num_vars()), ivs(scm.num_vars());
    doa.fix(x, q.action);
    doref.fix(x, *q.reference);
    NoiseVector u(scm.num_vars());
    Trajectory wa, wr, wi;
    std::size_t hits = 0, ref_hits = 0;
    double sq = 0.0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = 0; v <= y; ++v) u[v] = rng.unit_noise();
        simulate_into(scm, u, &doa, wa, y);
        simulate_into(scm, u, &doref, wr, y);
        ivs.clear();
        ivs.fix(x, *q.reference);
        for (VarId d : other_down) ivs.fix(d, wr[d]);
        for (VarId d : effect_down) ivs.fix(d, wa[d]);
        simulate_into(scm, u, &ivs, wi, y);
        const int hi = q.outcome.holds(wi[y]), hr = q.outcome.holds(wr[y]);
        hits += hi;
        ref_hits += hr;
        sq += (hi - hr) * (hi - hr);
    });
    return detail::interventional_estimate(hits, ref_hits, sq, q.samples);
}

/// FPSE from prior noise: P(y_{x*}) in M_q minus P(y_{x*}) in M.
inline EffectEstimate estimate_fpse(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::fpse);
    const auto [g, gs] = query_subgraphs(scm, q);
    if (g.intersects(gs)) throw ValidationError("effect and reference subgraphs overlap");
    const auto& L = scm.layout();
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    InterventionSet doa(scm.num_vars()), doref(scm.num_vars());
    doa.fix(x, q.action);
    doref.fix(x, *q.reference);
    NoiseVector u(scm.num_vars());
    Trajectory we, ws, wq;
    std::size_t hits = 0, ref_hits = 0;
    double sq = 0.0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = 0; v <= y; ++v) u[v] = rng.unit_noise();
        simulate_into(scm, u, &doa, we, y);
        simulate_into(scm, u, &doref, ws, y);
        detail::simulate_spliced(scm, u, x, *q.reference, g, gs, we, ws, wq, 0, y);
        const int hi = q.outcome.holds(wq[y]), hr = q.outcome.holds(ws[y]);
        hits += hi;
        ref_hits += hr;
        sq += (hi - hr) * (hi - hr);
    });
    return detail::interventional_estimate(hits, ref_hits, sq, q.samples);
}

/// cf-FPSE by posterior sampling; the reference world is the trajectory itself.
inline EffectEstimate estimate_cf_fpse(const MmdpScm& scm, const EffectQuery& q) {
    validate_query(scm, q, EffectKind::cf_fpse);
    const auto [g, gs] = query_subgraphs(scm, q);
    if (g.intersects(gs)) throw ValidationError("effect and reference subgraphs overlap");
    const auto& tau = *q.trajectory;
    const auto& L = scm.layout();
    const PosteriorNoise post(scm, tau);
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    InterventionSet doa(scm.num_vars());
    doa.fix(x, q.action);
    NoiseVector u(scm.num_vars());
    Trajectory we = tau, wq = tau;
    std::size_t c = 0;
    detail::for_each_draw(q.samples, q.seed, [&](Rng& rng) {
        for (VarId v = x; v <= y; ++v) u[v] = post.sample(v, rng);
        simulate_range(scm, u, &doa, we, x, y);
        detail::simulate_spliced(scm, u, x, tau[x], g, gs, we, tau, wq, x, y);
        c += q.outcome.holds(wq[y]);
    });
    return detail::counterfactual_estimate(c, q.samples, q.outcome.holds(tau[y]));
}

inline EffectEstimate estimate(const MmdpScm& scm, const EffectQuery& q, EffectKind kind) {
    switch (kind) {
        case EffectKind::tcfe: return estimate_tcfe(scm, q);
        case EffectKind::cf_ase: return estimate_cf_ase(scm, q);
        case EffectKind::cf_pse: return estimate_cf_pse(scm, q);
        case EffectKind::ase: return estimate_ase(scm, q);
        case EffectKind::fpse: return estimate_fpse(scm, q);
        case EffectKind::cf_fpse: return estimate_cf_fpse(scm, q);
        default: break;
    }
    throw ValidationError(std::string("no Monte Carlo estimator for ") + to_string(kind));
}

}  // namespace ase_lab
