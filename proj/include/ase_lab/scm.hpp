#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ase_lab/core.hpp"
#include "ase_lab/function_table.hpp"
#include "ase_lab/mmdp.hpp"

namespace ase_lab {

/// Variable indexing of an MMDP-SCM. Step t occupies the block
/// [S_t, A_{0,t}, ..., A_{n-1,t}]; S_h closes the last block.
class VariableLayout {
public:
    VariableLayout() = default;

    VariableLayout(std::size_t num_agents, std::size_t horizon, bool turn_based)
        : n_(num_agents), h_(horizon), turn_based_(turn_based) {
        parent_offsets_.push_back(0);
        for (VarId v = 0; v < num_vars(); ++v) {
            if (is_state(v)) {
                const std::size_t t = time(v);
                if (t > 0) {
                    parent_ids_.push_back(state(t - 1));
                    for (std::size_t i = 0; i < n_; ++i) parent_ids_.push_back(action(i, t - 1));
                }
            } else {
                const std::size_t t = time(v), i = agent(v);
                parent_ids_.push_back(state(t));
                if (turn_based_)
                    for (std::size_t j = 0; j < i; ++j) parent_ids_.push_back(action(j, t));
            }
            parent_offsets_.push_back(parent_ids_.size());
        }
    }

    std::size_t num_agents() const noexcept { return n_; }
    std::size_t horizon() const noexcept { return h_; }
    bool turn_based() const noexcept { return turn_based_; }
    std::size_t num_vars() const noexcept { return h_ * (n_ + 1) + 1; }

    VarId state(std::size_t t) const noexcept { return t * (n_ + 1); }
    VarId action(std::size_t agent, std::size_t t) const noexcept { return t * (n_ + 1) + 1 + agent; }

    bool is_state(VarId v) const noexcept { return v % (n_ + 1) == 0; }
    std::size_t time(VarId v) const noexcept { return v / (n_ + 1); }
    /// Agent of an action variable.
    std::size_t agent(VarId v) const noexcept { return v % (n_ + 1) - 1; }

    std::span<const VarId> parents(VarId v) const noexcept {
        return {parent_ids_.data() + parent_offsets_[v], parent_offsets_[v + 1] - parent_offsets_[v]};
    }
    std::size_t max_parents() const noexcept { return n_ + 1; }

    std::string name(VarId v) const {
        if (is_state(v)) return "S_" + std::to_string(time(v));
        return "A_{" + std::to_string(agent(v)) + "," + std::to_string(time(v)) + "}";
    }

private:
    std::size_t n_ = 0;
    std::size_t h_ = 0;
    bool turn_based_ = false;
    std::vector<VarId> parent_ids_;
    std::vector<std::size_t> parent_offsets_;
};

/// Realized values of every SCM variable, indexed by VarId.
struct Trajectory {
    std::vector<Value> values;

    Value operator[](VarId v) const noexcept { return values[v]; }
    Value& operator[](VarId v) noexcept { return values[v]; }
    bool operator==(const Trajectory&) const = default;
};

/// One noise value u^V in (0,1] per variable.
using NoiseVector = std::vector<double>;

/// Hard interventions, stored densely for O(1) lookup during simulation.
class InterventionSet {
public:
    InterventionSet() = default;
    explicit InterventionSet(std::size_t num_vars) : fixed_(num_vars, kNoValue) {}

    /// Adds do(v := x); a second entry for the same variable is rejected.
    void fix(VarId v, Value x) {
        if (x < 0) throw ValidationError("intervention value must be a domain index");
        if (fixed_[v] != kNoValue) throw ValidationError("variable is already intervened on");
        fixed_[v] = x;
        ids_.push_back(v);
    }

    void clear() noexcept {
        for (VarId v : ids_) fixed_[v] = kNoValue;
        ids_.clear();
    }

    Value value(VarId v) const noexcept { return fixed_[v]; }
    bool contains(VarId v) const noexcept { return fixed_[v] != kNoValue; }
    bool empty() const noexcept { return ids_.empty(); }
    std::size_t num_vars() const noexcept { return fixed_.size(); }
    std::span<const VarId> ids() const noexcept { return ids_; }

private:
    std::vector<Value> fixed_;
    std::vector<VarId> ids_;
};

/// An MMDP coupled with a joint policy as an SCM with Uniform(0,1] noise.
/// Each variable family owns a FunctionTable whose rows are indexed by parent
/// configuration; individual variables may carry a replacement table. Immutable
/// after construction.
class MmdpScm {
public:
    MmdpScm(std::shared_ptr<const MmdpSpec> spec, JointPolicy policy, Orderings orderings,
            std::shared_ptr<const FunctionTable> initial, std::vector<FunctionTable> agent_tables,
            std::shared_ptr<const FunctionTable> transition)
        : spec_(std::move(spec)), policy_(std::move(policy)), orderings_(std::move(orderings)),
          layout_(spec_->num_agents(), spec_->horizon, spec_->turn_based), initial_(std::move(initial)),
          agent_tables_(std::move(agent_tables)), transition_(std::move(transition)),
          overrides_(layout_.num_vars()) {
        radix_.resize(spec_->num_agents());
        for (std::size_t i = 0; i < radix_.size(); ++i) radix_[i] = spec_->num_actions(i);
    }

    const MmdpSpec& spec() const noexcept { return *spec_; }
    const std::shared_ptr<const MmdpSpec>& spec_ptr() const noexcept { return spec_; }
    const JointPolicy& policy() const noexcept { return policy_; }
    const Orderings& orderings() const noexcept { return orderings_; }
    const VariableLayout& layout() const noexcept { return layout_; }
    std::size_t num_vars() const noexcept { return layout_.num_vars(); }

    std::size_t domain_size(VarId v) const {
        return layout_.is_state(v) ? spec_->num_states() : spec_->num_actions(layout_.agent(v));
    }
    const TotalOrder& ordering(VarId v) const {
        return layout_.is_state(v) ? orderings_.states : orderings_.actions[layout_.agent(v)];
    }

    /// Structural function table of variable v (its family table unless overridden).
    const FunctionTable& table(VarId v) const {
        if (overrides_[v]) return *overrides_[v];
        if (layout_.is_state(v)) return layout_.time(v) == 0 ? *initial_ : *transition_;
        return agent_tables_[layout_.agent(v)];
    }
    const FunctionTable& family_table(VarId v) const {
        if (layout_.is_state(v)) return layout_.time(v) == 0 ? *initial_ : *transition_;
        return agent_tables_[layout_.agent(v)];
    }
    bool overridden(VarId v) const noexcept { return overrides_[v] != nullptr; }
    std::shared_ptr<const FunctionTable> initial_table() const noexcept { return initial_; }
    std::shared_ptr<const FunctionTable> transition_table() const noexcept { return transition_; }

    /// Replaces the structural function of one variable. The table must have one
    /// row per parent configuration in the family's row indexing.
    void set_override(VarId v, std::shared_ptr<const FunctionTable> table) {
        if (table && table->rows() != family_table(v).rows())
            throw ValidationError("override for " + layout_.name(v) + " has the wrong number of rows");
        if (table)
            for (std::size_t r = 0; r < table->rows(); ++r)
                for (Value x : table->row(r).outputs)
                    if (x < 0 || static_cast<std::size_t>(x) >= domain_size(v))
                        throw ValidationError("override for " + layout_.name(v) + " outputs a value outside the domain");
        overrides_[v] = std::move(table);
    }

    /// Row of v's table selected by the parent values (in layout().parents(v) order).
    std::size_t row_index(VarId v, std::span<const Value> pv) const noexcept {
        if (layout_.is_state(v)) {
            if (layout_.time(v) == 0) return 0;
            std::size_t joint = 0;
            for (std::size_t i = 0; i < radix_.size(); ++i) joint = joint * radix_[i] + static_cast<std::size_t>(pv[1 + i]);
            const auto& tr = spec_->transition;
            return static_cast<std::size_t>(pv[0]) * tr.num_keys() + tr.key(joint);
        }
        const std::size_t i = layout_.agent(v);
        std::size_t prior = 0;
        for (std::size_t j = 0; j + 1 < pv.size(); ++j) prior = prior * radix_[j] + static_cast<std::size_t>(pv[1 + j]);
        return policy_.agents[i].context(layout_.time(v), static_cast<std::size_t>(pv[0]), prior);
    }

    /// Row index of v using parent values read from a full value vector.
    std::size_t row_index_in(VarId v, std::span<const Value> values) const noexcept {
        Value buf[64];
        const auto ps = layout_.parents(v);
        for (std::size_t k = 0; k < ps.size(); ++k) buf[k] = values[ps[k]];
        return row_index(v, std::span<const Value>(buf, ps.size()));
    }

    /// Rejects parent values outside their domains.
    void check_parent_values(VarId v, std::span<const Value> pv) const {
        const auto ps = layout_.parents(v);
        if (pv.size() != ps.size())
            throw ValidationError(layout_.name(v) + " expects " + std::to_string(ps.size()) + " parent values");
        for (std::size_t k = 0; k < ps.size(); ++k)
            if (pv[k] < 0 || static_cast<std::size_t>(pv[k]) >= domain_size(ps[k]))
                throw ValidationError("unknown parent configuration for " + layout_.name(v) + ": " +
                                      layout_.name(ps[k]) + " = " + std::to_string(pv[k]));
    }

    Trajectory make_trajectory(std::span<const Value> states, std::span<const Value> actions) const;

private:
    std::shared_ptr<const MmdpSpec> spec_;
    JointPolicy policy_;
    Orderings orderings_;
    VariableLayout layout_;
    std::shared_ptr<const FunctionTable> initial_;
    std::vector<FunctionTable> agent_tables_;
    std::shared_ptr<const FunctionTable> transition_;
    std::vector<std::shared_ptr<const FunctionTable>> overrides_;
    std::vector<std::size_t> radix_;
};

/// Builds the quantile transition table of a spec under a state ordering.
inline std::shared_ptr<const FunctionTable> build_transition_table(const MmdpSpec& spec, const TotalOrder& order) {
    auto table = std::make_shared<FunctionTable>();
    const auto& tr = spec.transition;
    table->reserve(tr.num_rows(), tr.num_rows());
    for (std::size_t r = 0; r < tr.num_rows(); ++r) {
        try {
            table->add_quantile_row_sparse(tr.row(r), order);
        } catch (const ValidationError& e) {
            throw ValidationError("transition row (state '" + spec.states[r / tr.num_keys()] + "', key " +
                                  std::to_string(r % tr.num_keys()) + "): " + e.what());
        }
    }
    return table;
}

/// Builds the canonical MMDP-SCM: every structural function is the quantile
/// function of its conditional distribution under the declared ordering.
/// `reuse` may supply an SCM over the same spec whose state tables are shared
/// when the state ordering matches.
inline MmdpScm build_scm(std::shared_ptr<const MmdpSpec> spec, JointPolicy policy, Orderings orderings,
                         const MmdpScm* reuse = nullptr) {
    if (!spec) throw ValidationError("missing model");
    const bool share = reuse && reuse->spec_ptr() == spec && reuse->orderings().states == orderings.states;
    if (!share) spec->validate();
    policy.validate(*spec);
    orderings.validate(*spec);

    std::shared_ptr<const FunctionTable> initial, transition;
    if (share) {
        initial = reuse->initial_table();
        transition = reuse->transition_table();
    } else {
        auto init = std::make_shared<FunctionTable>();
        init->add_quantile_row(spec->initial, orderings.states);
        initial = std::move(init);
        transition = build_transition_table(*spec, orderings.states);
    }
    std::vector<FunctionTable> agent_tables(spec->num_agents());
    for (std::size_t i = 0; i < spec->num_agents(); ++i) {
        const auto& p = policy.agents[i];
        agent_tables[i].reserve(p.num_contexts(), p.num_contexts() * p.num_actions());
        for (std::size_t c = 0; c < p.num_contexts(); ++c) agent_tables[i].add_quantile_row(p.row(c), orderings.actions[i]);
    }
    return MmdpScm(std::move(spec), std::move(policy), std::move(orderings), std::move(initial),
                   std::move(agent_tables), std::move(transition));
}

inline MmdpScm build_scm(const MmdpSpec& spec, JointPolicy policy, Orderings orderings) {
    return build_scm(std::make_shared<const MmdpSpec>(spec), std::move(policy), std::move(orderings));
}

inline Trajectory MmdpScm::make_trajectory(std::span<const Value> states, std::span<const Value> actions) const {
    const std::size_t n = spec_->num_agents(), h = spec_->horizon;
    if (states.size() != h + 1) throw ValidationError("trajectory needs " + std::to_string(h + 1) + " states");
    if (actions.size() != h * n) throw ValidationError("trajectory needs " + std::to_string(h * n) + " actions");
    Trajectory tr{std::vector<Value>(num_vars())};
    for (std::size_t t = 0; t <= h; ++t) tr[layout_.state(t)] = states[t];
    for (std::size_t t = 0; t < h; ++t)
        for (std::size_t i = 0; i < n; ++i) tr[layout_.action(i, t)] = actions[t * n + i];
    for (VarId v = 0; v < num_vars(); ++v)
        if (tr[v] < 0 || static_cast<std::size_t>(tr[v]) >= domain_size(v))
            throw ValidationError("trajectory value of " + layout_.name(v) + " is outside its domain");
    return tr;
}

/// inf{v : F(v | pa) >= u} for the given parent values.
inline Value quantile_eval(const MmdpScm& scm, VarId v, std::span<const Value> parent_values, double u) {
    if (v >= scm.num_vars()) throw ValidationError("unknown variable");
    if (!(u > 0.0 && u <= 1.0)) throw ValidationError("noise value must lie in (0,1]");
    scm.check_parent_values(v, parent_values);
    return scm.table(v).eval(scm.row_index(v, parent_values), u);
}

/// Evaluates variables [first, stop] of M^{do(I)} under fixed noise, writing into
/// `out`; values of variables before `first` are taken as already computed.
inline void simulate_range(const MmdpScm& scm, std::span<const double> noise, const InterventionSet* interventions,
                           Trajectory& out, VarId first, VarId stop) {
    out.values.resize(scm.num_vars());
    for (VarId v = first; v <= stop; ++v) {
        if (interventions && interventions->contains(v)) {
            out[v] = interventions->value(v);
            continue;
        }
        out[v] = scm.table(v).eval(scm.row_index_in(v, out.values), noise[v]);
    }
}

inline void simulate_into(const MmdpScm& scm, std::span<const double> noise, const InterventionSet* interventions,
                          Trajectory& out, VarId stop) {
    simulate_range(scm, noise, interventions, out, 0, stop);
}

inline void check_interventions(const MmdpScm& scm, const InterventionSet& interventions) {
    if (interventions.num_vars() != scm.num_vars()) throw ValidationError("intervention set built for another model");
    for (VarId v : interventions.ids())
        if (static_cast<std::size_t>(interventions.value(v)) >= scm.domain_size(v))
            throw ValidationError("intervention on " + scm.layout().name(v) + " is outside its domain");
}

inline void check_noise(const MmdpScm& scm, std::span<const double> noise) {
    if (noise.size() != scm.num_vars()) throw ValidationError("noise vector has the wrong length");
    for (double u : noise)
        if (!(u > 0.0 && u <= 1.0)) throw ValidationError("noise values must lie in (0,1]");
}

/// Evaluates M^{do(I)} under the given noise.
inline Trajectory simulate_with_noise(const MmdpScm& scm, const NoiseVector& noise, const InterventionSet& interventions) {
    check_noise(scm, noise);
    check_interventions(scm, interventions);
    Trajectory out;
    simulate_into(scm, noise, &interventions, out, scm.num_vars() - 1);
    return out;
}

inline Trajectory simulate_with_noise(const MmdpScm& scm, const NoiseVector& noise) {
    check_noise(scm, noise);
    Trajectory out;
    simulate_into(scm, noise, nullptr, out, scm.num_vars() - 1);
    return out;
}

inline std::pair<Trajectory, NoiseVector> sample_trajectory(const MmdpScm& scm, Rng& rng) {
    NoiseVector noise(scm.num_vars());
    for (double& u : noise) u = rng.unit_noise();
    Trajectory tr;
    simulate_into(scm, noise, nullptr, tr, scm.num_vars() - 1);
    return {std::move(tr), std::move(noise)};
}

/// Posterior of the noise given a full trajectory: for each variable, the union of
/// pieces of its selected row that output the observed value. Variables are
/// independent a posteriori, so each is sampled on its own preimage.
class PosteriorNoise {
public:
    struct Interval {
        double lo;
        double hi;
    };

    PosteriorNoise(const MmdpScm& scm, const Trajectory& tau) {
        const std::size_t nv = scm.num_vars();
        if (tau.values.size() != nv) throw ValidationError("trajectory has the wrong number of variables");
        offsets_.reserve(nv + 1);
        offsets_.push_back(0);
        mass_.resize(nv);
        log_likelihood_ = 0.0;
        for (VarId v = 0; v < nv; ++v) {
            if (tau[v] < 0 || static_cast<std::size_t>(tau[v]) >= scm.domain_size(v))
                throw ValidationError("trajectory value of " + scm.layout().name(v) + " is outside its domain");
            const auto row = scm.table(v).row(scm.row_index_in(v, tau.values));
            double m = 0.0;
            for (std::size_t k = 0; k < row.size(); ++k) {
                if (row.outputs[k] != tau[v] || row.length(k) <= 0.0) continue;
                if (!intervals_.empty() && offsets_.back() < intervals_.size() && intervals_.back().hi == row.lower(k))
                    intervals_.back().hi = row.cuts[k];
                else
                    intervals_.push_back({row.lower(k), row.cuts[k]});
                m += row.length(k);
            }
            if (m <= 0.0)
                throw ZeroProbabilityEvidence("trajectory has probability zero: " + scm.layout().name(v) + " = " +
                                              std::to_string(tau[v]) + " is impossible given its parents");
            mass_[v] = m;
            log_likelihood_ += std::log(m);
            offsets_.push_back(intervals_.size());
        }
    }

    std::size_t num_vars() const noexcept { return mass_.size(); }
    std::span<const Interval> intervals(VarId v) const noexcept {
        return {intervals_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
    }
    /// Likelihood factor P(tau(V) | tau(Pa V)).
    double mass(VarId v) const noexcept { return mass_[v]; }
    double log_likelihood() const noexcept { return log_likelihood_; }

    double sample(VarId v, Rng& rng) const noexcept {
        const auto iv = intervals(v);
        if (iv.size() == 1) return rng.in_interval(iv[0].lo, iv[0].hi);
        double target = rng.uniform() * mass_[v];
        for (std::size_t k = 0; k + 1 < iv.size(); ++k) {
            const double len = iv[k].hi - iv[k].lo;
            if (target < len) return rng.in_interval(iv[k].lo, iv[k].hi);
            target -= len;
        }
        return rng.in_interval(iv.back().lo, iv.back().hi);
    }

    void sample_into(Rng& rng, std::span<double> out) const noexcept {
        for (VarId v = 0; v < num_vars(); ++v) out[v] = sample(v, rng);
    }

private:
    std::vector<std::size_t> offsets_;
    std::vector<Interval> intervals_;
    std::vector<double> mass_;
    double log_likelihood_ = 0.0;
};

inline NoiseVector sample_posterior_noise(const MmdpScm& scm, const Trajectory& tau, Rng& rng) {
    const PosteriorNoise post(scm, tau);
    NoiseVector u(scm.num_vars());
    post.sample_into(rng, u);
    return u;
}

/// P(tau) under the SCM's observational distribution.
inline double trajectory_probability(const MmdpScm& scm, const Trajectory& tau) {
    double p = 1.0;
    for (VarId v = 0; v < scm.num_vars(); ++v) {
        const auto row = scm.table(v).row(scm.row_index_in(v, tau.values));
        double m = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k)
            if (row.outputs[k] == tau[v]) m += row.length(k);
        p *= m;
    }
    return p;
}

}  // namespace ase_lab
