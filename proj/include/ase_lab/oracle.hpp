#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ase_lab/effects.hpp"
#include "ase_lab/graph.hpp"
#include "ase_lab/scm.hpp"

namespace ase_lab {

inline constexpr double kDefaultCellBudget = 1e7;

/// P(X_{pa^1} = x^1 and ... and X_{pa^k} = x^k) for a noise-monotonic variable:
/// max(0, min_i F(x^i | pa^i) - max_i F^-(x^i | pa^i)), with F^- the strict CDF.
/// Each pair is (value, row of `table` selected by the parent configuration).
inline double ctf_factor_prob(const FunctionTable& table, const TotalOrder& order,
                              std::span<const std::pair<Value, std::size_t>> pairs) {
    if (pairs.empty()) throw ValidationError("ctf_factor_prob needs at least one pair");
    double min_le = 1.0, max_lt = 0.0;
    for (const auto& [x, r] : pairs) {
        if (x < 0 || static_cast<std::size_t>(x) >= order.size()) throw ValidationError("value outside the domain");
        if (r >= table.rows()) throw ValidationError("unknown parent configuration");
        const std::size_t rank = order.rank_of(x);
        const auto row = table.row(r);
        double le = 0.0, lt = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k) {
            const std::size_t rk = order.rank_of(row.outputs[k]);
            if (rk <= rank) le += row.length(k);
            if (rk < rank) lt += row.length(k);
        }
        min_le = std::min(min_le, le);
        max_lt = std::max(max_lt, lt);
    }
    return std::max(0.0, min_le - max_lt);
}

/// Per-variable breakpoints (union of every row's cuts); cells are the Cartesian
/// product of the induced intervals.
struct NoiseCellPartition {
    std::vector<std::vector<double>> breakpoints;

    double cell_count() const noexcept {
        double n = 1.0;
        for (const auto& b : breakpoints) n *= static_cast<double>(b.size());
        return n;
    }

    /// Calls f(u, mass) for every cell, with u the cell's upper corner.
    template <class F>
    void for_each_cell(F&& f) const {
        const std::size_t nv = breakpoints.size();
        std::vector<std::size_t> idx(nv, 0);
        std::vector<double> u(nv);
        for (std::size_t v = 0; v < nv; ++v) u[v] = breakpoints[v][0];
        while (true) {
            double mass = 1.0;
            for (std::size_t v = 0; v < nv; ++v) {
                const double lo = idx[v] == 0 ? 0.0 : breakpoints[v][idx[v] - 1];
                mass *= breakpoints[v][idx[v]] - lo;
            }
            f(std::span<const double>(u), mass);
            std::size_t v = nv;
            while (v > 0) {
                --v;
                if (++idx[v] < breakpoints[v].size()) {
                    u[v] = breakpoints[v][idx[v]];
                    break;
                }
                idx[v] = 0;
                u[v] = breakpoints[v][0];
                if (v == 0) return;
            }
            if (nv == 0) return;
        }
    }
};

/// Partition of the noise of variables [0, last] (all variables by default).
inline NoiseCellPartition enumerate_cells(const MmdpScm& scm, std::optional<double> budget = kDefaultCellBudget,
                                          std::optional<VarId> last = std::nullopt) {
    const VarId stop = last ? *last : scm.num_vars() - 1;
    NoiseCellPartition part;
    for (VarId v = 0; v <= stop; ++v) {
        const auto& table = scm.table(v);
        std::vector<double> b;
        for (std::size_t r = 0; r < table.rows(); ++r) {
            const auto row = table.row(r);
            b.insert(b.end(), row.cuts.begin(), row.cuts.end());
        }
        std::sort(b.begin(), b.end());
        b.erase(std::unique(b.begin(), b.end()), b.end());
        part.breakpoints.push_back(std::move(b));
    }
    if (budget && part.cell_count() > *budget) throw BudgetExceeded(part.cell_count(), *budget);
    return part;
}

/// How each world computes every variable: its structural function (natural),
/// a constant (fixed), or the value of the same variable in an earlier world
/// (copy). Natural variables may read individual parents from other worlds.
struct WorldProgram {
    enum class Mode : std::uint8_t { natural, fixed, copy };
    static constexpr std::uint8_t kSelf = 0xFF;

    struct Rule {
        Mode mode = Mode::natural;
        Value value = kNoValue;
        std::uint8_t source = 0;
    };

    std::size_t num_worlds = 0;
    std::size_t num_vars = 0;
    std::size_t slots = 0;
    std::vector<Rule> rules;
    std::vector<std::uint8_t> parent_world;
    /// Payoff of a cell: sum_w coef[w] * 1(Y_w = y), plus `constant` after normalization.
    std::vector<double> coef;
    double constant = 0.0;

    WorldProgram(std::size_t worlds, const VariableLayout& layout)
        : num_worlds(worlds), num_vars(layout.num_vars()), slots(layout.max_parents()),
          rules(worlds * num_vars), parent_world(worlds * num_vars * slots, kSelf), coef(worlds, 0.0) {}

    Rule& rule(std::size_t w, VarId v) { return rules[w * num_vars + v]; }
    const Rule& rule(std::size_t w, VarId v) const { return rules[w * num_vars + v]; }
    std::uint8_t& parent_source(std::size_t w, VarId v, std::size_t k) { return parent_world[(w * num_vars + v) * slots + k]; }
    std::uint8_t parent_source(std::size_t w, VarId v, std::size_t k) const {
        return parent_world[(w * num_vars + v) * slots + k];
    }

    void fix(std::size_t w, VarId v, Value x) { rule(w, v) = {Mode::fixed, x, 0}; }
    void copy(std::size_t w, VarId v, std::size_t from) {
        if (from >= w) throw ValidationError("copy source must be an earlier world");
        rule(w, v) = {Mode::copy, kNoValue, static_cast<std::uint8_t>(from)};
    }
    /// Edges in `edges` into world w read their parent from world `from`.
    void splice(std::size_t w, const EdgeSet& edges, std::size_t from, const VariableLayout& layout) {
        for (VarId v = 0; v < num_vars; ++v)
            for (std::size_t k = 0; k < layout.parents(v).size(); ++k)
                if (edges.contains(v, k)) parent_source(w, v, k) = static_cast<std::uint8_t>(from);
    }
};

/// World program of each effect kind. World 0 is the factual world when the kind
/// conditions on the trajectory.
inline WorldProgram build_world_program(const MmdpScm& scm, const EffectQuery& q, EffectKind kind) {
    const auto& L = scm.layout();
    const VarId x = L.action(q.agent, q.time), y = L.state(q.outcome.time);
    std::vector<VarId> effect_down, other_down;
    for (VarId d : downstream_actions(L, q.agent, q.time))
        if (d < y) (in_set(q.effect_agents, L.agent(d)) ? effect_down : other_down).push_back(d);
    const auto tau_hit = [&] { return q.outcome.holds((*q.trajectory)[y]) ? 1.0 : 0.0; };

    switch (kind) {
        case EffectKind::tcfe: {
            WorldProgram p(2, L);
            p.fix(1, x, q.action);
            p.coef[1] = 1.0;
            p.constant = -tau_hit();
            return p;
        }
        case EffectKind::cf_ase: {
            WorldProgram p(3, L);
            p.fix(1, x, q.action);
            for (VarId d : effect_down) p.copy(2, d, 1);
            for (VarId d : other_down) p.fix(2, d, (*q.trajectory)[d]);
            p.coef[2] = 1.0;
            p.constant = -tau_hit();
            return p;
        }
        case EffectKind::cf_pse: {
            WorldProgram p(2, L);
            p.fix(1, x, q.action);
            for (VarId d : other_down) p.fix(1, d, (*q.trajectory)[d]);
            p.coef[1] = 1.0;
            p.constant = -tau_hit();
            return p;
        }
        case EffectKind::cf_fpse: {
            const auto [g, gs] = query_subgraphs(scm, q);
            WorldProgram p(3, L);
            p.fix(1, x, q.action);
            p.fix(2, x, (*q.trajectory)[x]);
            p.splice(2, g, 1, L);
            p.splice(2, gs, 0, L);
            p.coef[2] = 1.0;
            p.constant = -tau_hit();
            return p;
        }
        case EffectKind::ase: {
            WorldProgram p(3, L);
            p.fix(0, x, *q.reference);
            p.fix(1, x, q.action);
            p.fix(2, x, *q.reference);
            for (VarId d : effect_down) p.copy(2, d, 1);
            for (VarId d : other_down) p.copy(2, d, 0);
            p.coef[2] = 1.0;
            p.coef[0] = -1.0;
            return p;
        }
        case EffectKind::fpse: {
            const auto [g, gs] = query_subgraphs(scm, q);
            WorldProgram p(3, L);
            p.fix(0, x, *q.reference);
            p.fix(1, x, q.action);
            p.fix(2, x, *q.reference);
            p.splice(2, g, 1, L);
            p.splice(2, gs, 0, L);
            p.coef[2] = 1.0;
            p.coef[0] = -1.0;
            return p;
        }
        case EffectKind::pse: {
            const EdgeSet g = q.g ? *q.g : cf_pse_subgraph(L, q.agent, q.time, q.effect_agents);
            const EdgeSet gbar = g.complement(L);
            WorldProgram p(3, L);
            p.fix(0, x, *q.reference);
            p.fix(1, x, q.action);
            p.splice(1, gbar, 0, L);
            p.fix(2, x, *q.reference);
            p.splice(2, gbar, 0, L);
            p.coef[1] = 1.0;
            p.coef[2] = -1.0;
            return p;
        }
        case EffectKind::tce: {
            WorldProgram p(2, L);
            p.fix(0, x, *q.reference);
            p.fix(1, x, q.action);
            p.coef[1] = 1.0;
            p.coef[0] = -1.0;
            return p;
        }
    }
    throw ValidationError("unknown effect kind");
}

struct ExactResult {
    double value = 0.0;
    /// Number of noise cells on which every world's variables are constant.
    double cells = 0.0;
};

namespace detail {

/// Depth-first enumeration of the noise of variables [0, y] shared across worlds.
/// Each variable's interval is split at the cuts of every row the worlds
/// evaluate, pieces with equal outputs are merged, and results are memoized
/// per (t, S_t in every world) since the future depends on the past only through S_t.
class ExactEngine {
public:
    ExactEngine(const MmdpScm& scm, const WorldProgram& prog, const PosteriorNoise* evidence, const Outcome& outcome,
                std::optional<double> budget)
        : scm_(scm), L_(scm.layout()), prog_(prog), evidence_(evidence), outcome_(outcome),
          y_(L_.state(outcome.time)), budget_(budget), vals_(prog.num_worlds, std::vector<Value>(scm.num_vars(), 0)) {
        if (prog.num_worlds > kMaxWorlds) throw ValidationError("too many worlds for exact enumeration");
        const double states = static_cast<double>(scm.spec().num_states());
        if (std::pow(states, static_cast<double>(prog.num_worlds)) * static_cast<double>(L_.horizon() + 1) > 1.8e19)
            throw ValidationError("model too large for exact enumeration");
    }

    ExactResult run() {
        const auto r = rec(0);
        double z = 1.0;
        if (evidence_)
            for (VarId v = 0; v <= y_; ++v) z *= evidence_->mass(v);
        if (budget_ && r.cells > *budget_) throw BudgetExceeded(r.cells, *budget_);
        return {r.value / z + prog_.constant, r.cells};
    }

private:
    struct Partial {
        double value;
        double cells;
    };

    Partial rec(VarId v) {
        if (v > y_) {
            double pay = 0.0;
            for (std::size_t w = 0; w < prog_.num_worlds; ++w)
                if (prog_.coef[w] != 0.0 && outcome_.holds(vals_[w][y_])) pay += prog_.coef[w];
            return {pay, 1.0};
        }
        std::uint64_t key = 0;
        const bool memo_point = v > 0 && L_.is_state(v - 1);
        if (memo_point) {
            key = L_.time(v - 1);
            for (std::size_t w = 0; w < prog_.num_worlds; ++w)
                key = key * scm_.spec().num_states() + static_cast<std::uint64_t>(vals_[w][v - 1]);
            if (const auto it = memo_.find(key); it != memo_.end()) return it->second;
        }
        const Partial r = expand(v);
        if (memo_point) memo_.emplace(key, r);
        return r;
    }

    static constexpr std::size_t kMaxWorlds = 3;

    Partial expand(VarId v) {
        const std::size_t W = prog_.num_worlds;
        const auto ps = L_.parents(v);
        // Rows of the naturally evaluated worlds.
        std::size_t nat_world[kMaxWorlds];
        FunctionTable::Row rows[kMaxWorlds];
        std::size_t nn = 0;
        Value buf[64];
        for (std::size_t w = 0; w < W; ++w) {
            if (prog_.rule(w, v).mode != WorldProgram::Mode::natural) continue;
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const std::uint8_t src = prog_.parent_source(w, v, k);
                buf[k] = vals_[src == WorldProgram::kSelf ? w : src][ps[k]];
            }
            rows[nn] = scm_.table(v).row(scm_.row_index(v, std::span<const Value>(buf, ps.size())));
            nat_world[nn++] = w;
        }

        // Elementary pieces of the allowed noise set, grouped by output tuple.
        groups_scratch_.clear();
        const auto add_interval = [&](double lo, double hi) {
            points_.clear();
            points_.push_back(hi);
            for (std::size_t j = 0; j < nn; ++j)
                for (double c : rows[j].cuts)
                    if (c > lo && c < hi) points_.push_back(c);
            std::sort(points_.begin(), points_.end());
            points_.erase(std::unique(points_.begin(), points_.end()), points_.end());
            double prev = lo;
            for (double b : points_) {
                std::uint64_t tuple = 0;
                for (std::size_t j = 0; j < nn; ++j)
                    tuple = (tuple << 20) | static_cast<std::uint64_t>(rows[j].eval(b));
                const double len = b - prev;
                prev = b;
                auto it = std::find_if(groups_scratch_.begin(), groups_scratch_.end(),
                                       [&](const auto& g) { return g.first == tuple; });
                if (it == groups_scratch_.end())
                    groups_scratch_.emplace_back(tuple, len);
                else
                    it->second += len;
            }
        };
        if (evidence_) {
            for (const auto& iv : evidence_->intervals(v)) add_interval(iv.lo, iv.hi);
        } else {
            add_interval(0.0, 1.0);
        }
        const std::vector<std::pair<std::uint64_t, double>> groups = groups_scratch_;

        Partial acc{0.0, 0.0};
        for (const auto& [tuple, len] : groups) {
            if (len <= 0.0) continue;
            if (budget_ && ++visits_ > *budget_) throw BudgetExceeded(visits_, *budget_);
            for (std::size_t j = 0; j < nn; ++j)
                vals_[nat_world[j]][v] = static_cast<Value>((tuple >> (20 * (nn - 1 - j))) & 0xFFFFF);
            for (std::size_t w = 0; w < W; ++w) {
                const auto& rule = prog_.rule(w, v);
                if (rule.mode == WorldProgram::Mode::fixed) vals_[w][v] = rule.value;
                else if (rule.mode == WorldProgram::Mode::copy) vals_[w][v] = vals_[rule.source][v];
            }
            const Partial child = rec(v + 1);
            acc.value += len * child.value;
            acc.cells += child.cells;
        }
        return acc;
    }

    const MmdpScm& scm_;
    const VariableLayout& L_;
    const WorldProgram& prog_;
    const PosteriorNoise* evidence_;
    const Outcome& outcome_;
    VarId y_;
    std::optional<double> budget_;
    double visits_ = 0.0;
    std::vector<std::vector<Value>> vals_;
    std::unordered_map<std::uint64_t, Partial> memo_;
    std::vector<double> points_;
    std::vector<std::pair<std::uint64_t, double>> groups_scratch_;
};

}  // namespace detail

/// Exact value of an effect query by enumerating the noise cells shared by the
/// worlds the definition compares. Counterfactual kinds restrict the noise to
/// the trajectory's preimage and renormalize. `budget = nullopt` disables the cell limit.
inline ExactResult exact_query_detailed(const MmdpScm& scm, const EffectQuery& q, EffectKind kind,
                                        std::optional<double> budget = kDefaultCellBudget) {
    EffectQuery checked = q;
    checked.samples = std::max<std::size_t>(1, q.samples);
    validate_query(scm, checked, kind);
    auto prog = build_world_program(scm, q, kind);
    Outcome outcome = q.outcome;
    // P(Y in A) - 1 equals -P(Y not in A); summing the complement keeps a zero effect exactly zero.
    if (prog.constant == -1.0 && std::count(prog.coef.begin(), prog.coef.end(), 0.0) + 1 == std::ptrdiff_t(prog.coef.size()) &&
        std::count(prog.coef.begin(), prog.coef.end(), 1.0) == 1) {
        for (auto& c : prog.coef) c = -c;
        for (auto& a : outcome.accepted) a = !a;
        prog.constant = 0.0;
    }
    std::optional<PosteriorNoise> post;
    if (is_counterfactual(kind)) post.emplace(scm, *q.trajectory);
    detail::ExactEngine engine(scm, prog, post ? &*post : nullptr, outcome, budget);
    return engine.run();
}

inline double exact_query(const MmdpScm& scm, const EffectQuery& q, EffectKind kind,
                          std::optional<double> budget = kDefaultCellBudget) {
    return exact_query_detailed(scm, q, kind, budget).value;
}

/// A binary outcome Y with structural function f_Y(x, u): row x of `f_y`.
struct BinaryScm {
    FunctionTable f_y;
};

/// Monotonicity of Y relative to X: for every ordered pair with E[Y|x1] <= E[Y|x2],
/// P(Y_{x1} = 1 and Y_{x2} = 0) = 0, computed on the noise partition.
inline bool check_binary_monotonic(const BinaryScm& m) {
    const auto& f = m.f_y;
    if (f.rows() != 2) throw ValidationError("binary SCM needs exactly two parent values");
    for (std::size_t r = 0; r < 2; ++r)
        for (Value v : f.row(r).outputs)
            if (v != 0 && v != 1) throw ValidationError("binary SCM outputs must be 0 or 1");
    const double e0 = f.prob(0, 1), e1 = f.prob(1, 1);
    std::vector<double> cuts;
    for (std::size_t r = 0; r < 2; ++r) cuts.insert(cuts.end(), f.row(r).cuts.begin(), f.row(r).cuts.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    const auto joint = [&](std::size_t x1, std::size_t x2) {
        double p = 0.0, prev = 0.0;
        for (double c : cuts) {
            if (f.eval(x1, c) == 1 && f.eval(x2, c) == 0) p += c - prev;
            prev = c;
        }
        return p;
    };
    if (e0 <= e1 && joint(0, 1) > 0.0) return false;
    if (e1 <= e0 && joint(1, 0) > 0.0) return false;
    return true;
}

}  // namespace ase_lab
