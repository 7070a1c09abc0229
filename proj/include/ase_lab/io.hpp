#pragma once

#include <json.hpp>

#include <fstream>
#include <memory>
#include <regex>
#include <string>
#include <vector>

#include "ase_lab/effects.hpp"
#include "ase_lab/scm.hpp"

namespace ase_lab::io {

using nlohmann::json;

inline constexpr const char* kModelFormat = "ase_lab.model/1";

struct Model {
    std::shared_ptr<const MmdpSpec> spec;
    JointPolicy policy;
    Orderings orderings;

    MmdpScm build() const { return build_scm(spec, policy, orderings); }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json read_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << text;
}

namespace detail {

inline std::size_t index_in(const json& j, std::size_t n, const std::string& what) {
    const auto v = j.get<long long>();
    if (v < 0 || static_cast<std::size_t>(v) >= n) throw ValidationError(what + " index " + std::to_string(v) + " out of range");
    return static_cast<std::size_t>(v);
}

inline TotalOrder order_from(const json& j, std::size_t n, const std::string& what) {
    std::vector<Value> o = j.get<std::vector<Value>>();
    if (o.size() != n) throw ValidationError(what + " ordering must list all " + std::to_string(n) + " values");
    return TotalOrder(std::move(o));
}

inline bool is_identity(const TotalOrder& o) {
    for (std::size_t r = 0; r < o.size(); ++r)
        if (o.at_rank(r) != static_cast<Value>(r)) return false;
    return true;
}

}  // namespace detail

/// Parses a model document: states, agents with actions, horizon, initial distribution,
/// sparse transition rows, dense policy rows and optional orderings.
inline Model parse_model(const json& j) {
    try {
        if (j.value("format", kModelFormat) != std::string(kModelFormat)) throw ValidationError("unknown model format");
        auto spec = std::make_shared<MmdpSpec>();
        spec->states = j.at("states").get<std::vector<std::string>>();
        for (const auto& a : j.at("agents"))
            spec->agents.push_back({a.at("name").get<std::string>(), a.at("actions").get<std::vector<std::string>>()});
        spec->horizon = j.at("horizon").get<std::size_t>();
        spec->turn_based = j.value("turn_based", false);
        spec->initial = j.at("initial").get<std::vector<double>>();
        if (spec->states.empty() || spec->agents.empty()) throw ValidationError("model needs states and agents");
        if (spec->agents.size() > 62) throw ValidationError("at most 62 agents are supported");
        const std::size_t S = spec->num_states(), joint = spec->num_joint_actions();

        const auto& tr = j.at("transition");
        std::vector<std::uint32_t> keys;
        if (tr.contains("key_of_joint")) {
            keys = tr.at("key_of_joint").get<std::vector<std::uint32_t>>();
        } else {
            keys.resize(joint);
            for (std::size_t k = 0; k < joint; ++k) keys[k] = static_cast<std::uint32_t>(k);
        }
        if (keys.size() != joint) throw ValidationError("transition key map must cover every joint action");
        std::uint32_t num_keys = 0;
        for (auto k : keys) num_keys = std::max(num_keys, k + 1);
        std::vector<std::vector<TransitionEntry>> rows(S * num_keys);
        std::vector<char> seen(rows.size(), 0);
        for (const auto& r : tr.at("rows")) {
            const auto s = detail::index_in(r.at("state"), S, "transition state");
            const auto k = detail::index_in(r.at("key"), num_keys, "transition key");
            if (seen[s * num_keys + k]) throw ValidationError("duplicate transition row for state " + std::to_string(s));
            seen[s * num_keys + k] = 1;
            for (const auto& e : r.at("next"))
                rows[s * num_keys + k].push_back(
                    {static_cast<Value>(detail::index_in(e.at(0), S, "next state")), e.at(1).get<double>()});
        }
        spec->transition = TransitionTable(S, num_keys, std::move(keys));
        for (std::size_t r = 0; r < rows.size(); ++r)
            if (seen[r]) spec->transition.set_row(r / num_keys, r % num_keys, rows[r]);

        Model m;
        const auto& pols = j.at("policies");
        if (pols.size() != spec->num_agents()) throw ValidationError("one policy per agent is required");
        for (std::size_t i = 0; i < spec->num_agents(); ++i) {
            const auto& p = pols[i];
            const bool timed = p.value("time_indexed", false);
            const std::size_t slices = timed ? spec->horizon : 1, prior = JointPolicy::prior_joint_size(*spec, i);
            PolicyTable t(S, spec->num_actions(i), prior, slices);
            std::vector<char> covered(t.num_contexts(), 0);
            for (const auto& r : p.at("rows")) {
                const auto s = detail::index_in(r.at("state"), S, "policy state");
                const std::size_t time = timed ? detail::index_in(r.at("time"), spec->horizon, "policy time") : 0;
                const auto probs = r.at("probs").get<std::vector<double>>();
                if (probs.size() != spec->num_actions(i))
                    throw ValidationError("policy row of agent '" + spec->agents[i].name + "' has the wrong length");
                const auto fill = [&](std::size_t q) {
                    std::copy(probs.begin(), probs.end(), t.row(t.context(time, s, q)).begin());
                    covered[t.context(time, s, q)] = 1;
                };
                if (r.contains("prior")) fill(detail::index_in(r.at("prior"), prior, "policy prior"));
                else for (std::size_t q = 0; q < prior; ++q) fill(q);
            }
            for (std::size_t c = 0; c < covered.size(); ++c)
                if (!covered[c])
                    throw ValidationError("policy of agent '" + spec->agents[i].name + "' lacks a row for state '" +
                                          spec->states[(c / prior) % S] + "'");
            m.policy.agents.push_back(std::move(t));
        }

        m.orderings = Orderings::identity(*spec);
        if (j.contains("orderings")) {
            const auto& o = j.at("orderings");
            if (o.contains("states")) m.orderings.states = detail::order_from(o.at("states"), S, "state");
            if (o.contains("actions")) {
                if (o.at("actions").size() != spec->num_agents()) throw ValidationError("one action ordering per agent");
                for (std::size_t i = 0; i < spec->num_agents(); ++i)
                    m.orderings.actions[i] = detail::order_from(o.at("actions")[i], spec->num_actions(i), "action");
            }
        }
        m.spec = std::move(spec);
        m.spec->validate();
        m.policy.validate(*m.spec);
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid model: ") + e.what());
    }
}

inline Model load_model(const std::string& path) { return parse_model(read_json(path)); }

inline json model_to_json(const MmdpSpec& spec, const JointPolicy& policy, const Orderings& orderings) {
    json j{{"format", kModelFormat}, {"states", spec.states}, {"horizon", spec.horizon}, {"turn_based", spec.turn_based},
           {"initial", spec.initial}};
    j["agents"] = json::array();
    for (const auto& a : spec.agents) j["agents"].push_back({{"name", a.name}, {"actions", a.actions}});
    const auto& tr = spec.transition;
    json rows = json::array();
    for (std::size_t s = 0; s < tr.num_states(); ++s)
        for (std::size_t k = 0; k < tr.num_keys(); ++k) {
            json next = json::array();
            for (const auto& e : tr.row(s, k)) next.push_back({e.next, e.prob});
            rows.push_back({{"state", s}, {"key", k}, {"next", next}});
        }
    bool identity_keys = tr.num_keys() == tr.key_of_joint().size();
    for (std::size_t q = 0; identity_keys && q < tr.key_of_joint().size(); ++q) identity_keys = tr.key(q) == q;
    j["transition"] = {{"rows", rows}};
    if (!identity_keys) j["transition"]["key_of_joint"] = tr.key_of_joint();
    j["policies"] = json::array();
    for (const auto& p : policy.agents) {
        json pr = json::array();
        for (std::size_t t = 0; t < p.time_slices(); ++t)
            for (std::size_t s = 0; s < p.num_states(); ++s) {
                const auto first = p.row(p.context(t, s, 0));
                bool uniform = true;
                for (std::size_t q = 1; uniform && q < p.prior_joint(); ++q) {
                    const auto r = p.row(p.context(t, s, q));
                    uniform = std::equal(r.begin(), r.end(), first.begin());
                }
                for (std::size_t q = 0; q < (uniform ? 1 : p.prior_joint()); ++q) {
                    const auto r = p.row(p.context(t, s, q));
                    json row{{"state", s}, {"probs", std::vector<double>(r.begin(), r.end())}};
                    if (p.time_indexed()) row["time"] = t;
                    if (!uniform) row["prior"] = q;
                    pr.push_back(row);
                }
            }
        j["policies"].push_back({{"time_indexed", p.time_indexed()}, {"rows", pr}});
    }
    bool identity = detail::is_identity(orderings.states);
    for (const auto& o : orderings.actions) identity = identity && detail::is_identity(o);
    if (!identity) {
        json acts = json::array();
        for (const auto& o : orderings.actions) acts.push_back(o.order());
        j["orderings"] = {{"states", orderings.states.order()}, {"actions", acts}};
    }
    return j;
}

inline json model_to_json(const MmdpScm& scm) { return model_to_json(scm.spec(), scm.policy(), scm.orderings()); }

/// Trajectory document: {"states": [s_0..s_h], "actions": [[a_{1,0}..a_{n,0}], ...]}.
inline Trajectory parse_trajectory(const MmdpScm& scm, const json& j) {
    try {
        const auto states = j.at("states").get<std::vector<Value>>();
        const auto steps = j.at("actions").get<std::vector<std::vector<Value>>>();
        const auto& spec = scm.spec();
        if (states.size() != spec.horizon + 1) throw ValidationError("trajectory needs horizon+1 states");
        if (steps.size() != spec.horizon) throw ValidationError("trajectory needs one joint action per step");
        std::vector<Value> actions;
        for (const auto& step : steps) {
            if (step.size() != spec.num_agents()) throw ValidationError("joint action must list every agent");
            actions.insert(actions.end(), step.begin(), step.end());
        }
        return scm.make_trajectory(states, actions);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid trajectory: ") + e.what());
    }
}

inline json trajectory_to_json(const MmdpScm& scm, const Trajectory& tr) {
    const auto& L = scm.layout();
    json states = json::array(), actions = json::array();
    for (std::size_t t = 0; t <= L.horizon(); ++t) states.push_back(tr[L.state(t)]);
    for (std::size_t t = 0; t < L.horizon(); ++t) {
        json step = json::array();
        for (std::size_t i = 0; i < L.num_agents(); ++i) step.push_back(tr[L.action(i, t)]);
        actions.push_back(step);
    }
    return {{"states", states}, {"actions", actions}};
}

/// Outcome predicates: `state[t]==id`, `final_state==id`, and the `!=` forms. The id
/// is a state index or a state name.
inline Outcome parse_outcome(const std::string& text, const MmdpSpec& spec) {
    static const std::regex re(R"(^\s*(?:state\[(\d+)\]|(final_state))\s*(==|!=)\s*(\S+)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, re))
        throw ValidationError("outcome must look like state[t]==id, final_state==id or their != forms: '" + text + "'");
    const std::size_t t = m[2].matched ? spec.horizon : std::stoul(m[1].str());
    if (t > spec.horizon) throw ValidationError("outcome time exceeds the horizon");
    const std::string id = m[4].str();
    Value s = -1;
    for (std::size_t k = 0; k < spec.num_states(); ++k)
        if (spec.states[k] == id) s = static_cast<Value>(k);
    if (s < 0) {
        if (id.find_first_not_of("0123456789") != std::string::npos) throw ValidationError("unknown state '" + id + "'");
        const auto v = std::stoull(id);
        if (v >= spec.num_states()) throw ValidationError("state id " + id + " out of range");
        s = static_cast<Value>(v);
    }
    return m[3].str() == "==" ? Outcome::state_equals(t, s, spec.num_states())
                              : Outcome::state_not_equals(t, s, spec.num_states());
}

/// Comma-separated agent indices or names.
inline AgentSet parse_agent_set(const std::string& text, const MmdpSpec& spec) {
    AgentSet out = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find(',', start), text.size());
        std::string tok = text.substr(start, end - start);
        tok.erase(0, tok.find_first_not_of(' '));
        tok.erase(tok.find_last_not_of(' ') + 1);
        if (tok.empty()) throw ValidationError("empty entry in agent list '" + text + "'");
        std::size_t idx = spec.num_agents();
        for (std::size_t i = 0; i < spec.num_agents(); ++i)
            if (spec.agents[i].name == tok) idx = i;
        if (idx == spec.num_agents()) {
            if (tok.find_first_not_of("0123456789") != std::string::npos) throw ValidationError("unknown agent '" + tok + "'");
            idx = std::stoul(tok);
            if (idx >= spec.num_agents()) throw ValidationError("agent " + tok + " out of range");
        }
        out |= AgentSet{1} << idx;
        start = end + 1;
    }
    return out;
}

}  // namespace ase_lab::io
