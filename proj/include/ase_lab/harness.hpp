#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ase_lab/effects.hpp"
#include "ase_lab/env/failures.hpp"
#include "ase_lab/env/graph_env.hpp"
#include "ase_lab/env/sepsis_env.hpp"
#include "ase_lab/parallel.hpp"

namespace ase_lab::harness {

using nlohmann::json;

// ---------------------------------------------------------------- statistics

/// Spearman rank correlation with average ranks for ties; NaN when undefined.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size()) throw ValidationError("spearman needs paired samples");
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double mean = 0.5 * static_cast<double>(n + 1);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

/// E|B/H - p| for B ~ Binomial(H, p).
inline double binomial_mad(std::size_t H, double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    const double h = static_cast<double>(H);
    double out = 0.0;
    for (std::size_t k = 0; k <= H; ++k) {
        const double kk = static_cast<double>(k);
        const double logp = std::lgamma(h + 1) - std::lgamma(kk + 1) - std::lgamma(h - kk + 1) + kk * std::log(p) +
                            (h - kk) * std::log1p(-p);
        out += std::exp(logp) * std::fabs(kk / h - p);
    }
    return out;
}

/// Largest mean absolute error that H-sample estimates of exactly known targets
/// plausibly reach: expected mean plus four standard deviations of the mean.
inline double noise_floor(const std::vector<double>& targets, std::size_t H) {
    if (targets.empty()) return 0.0;
    double mad = 0.0, var = 0.0;
    for (double p : targets) {
        const double q = std::clamp(p, 0.0, 1.0);
        const double m = binomial_mad(H, q);
        mad += m;
        var += std::max(0.0, q * (1 - q) / static_cast<double>(H) - m * m);
    }
    const double k = static_cast<double>(targets.size());
    return mad / k + 4.0 * std::sqrt(var) / k;
}

// ---------------------------------------------------------------- rows and CSV

struct ResultRow {
    std::string experiment;
    std::string param;
    std::string method;
    std::string direction;
    std::size_t trajectory_id = 0;
    std::size_t agent = 0;
    std::size_t time = 0;
    std::string action;
    double effect = 0.0;
    double se = 0.0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    std::optional<double> target;
};

inline const char* kCsvHeader = "experiment,param,method,direction,trajectory_id,agent,time,action,effect,se,H,seed,target";

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Short form for grid parameters (0.2 rather than 0.20000000000000001).
inline std::string format_param(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

inline void write_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows)
        out << csv_field(r.experiment) << ',' << csv_field(r.param) << ',' << r.method << ',' << csv_field(r.direction)
            << ',' << r.trajectory_id << ',' << r.agent << ',' << r.time << ',' << csv_field(r.action) << ','
            << format_double(r.effect) << ',' << format_double(r.se) << ',' << r.samples << ',' << r.seed << ','
            << (r.target ? format_double(*r.target) : std::string()) << '\n';
}

/// Effect-agent set as agent names joined by '+'.
inline std::string direction_name(const MmdpSpec& spec, AgentSet n) {
    std::string out;
    for (std::size_t i = 0; i < spec.num_agents(); ++i)
        if (in_set(n, i)) out += (out.empty() ? "" : "+") + spec.agents[i].name;
    return out;
}

// ---------------------------------------------------------------- selection

struct Candidate {
    std::size_t trajectory = 0;
    std::size_t agent = 0;
    std::size_t time = 0;
    Value action = 0;
};

struct Selected {
    Candidate query;
    EffectEstimate tcfe;
    std::uint64_t seed = 0;
};

struct SelectionConfig {
    double threshold = 0.75;
    std::size_t samples = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 0;

    void validate() const {
        if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("TCFE threshold must lie in (0, 1]");
        if (samples < 1) throw ValidationError("sample budget must be at least 1");
    }
};

/// Every non-factual (agent, step, action) before the outcome step, in
/// (trajectory, step, agent, action) order.
inline std::vector<Candidate> enumerate_candidates(const MmdpScm& scm, const std::vector<Trajectory>& trajectories,
                                                   const std::vector<Outcome>& outcomes) {
    const auto& spec = scm.spec();
    std::vector<Candidate> out;
    for (std::size_t k = 0; k < trajectories.size(); ++k)
        for (std::size_t t = 0; t < outcomes[k].time; ++t)
            for (std::size_t i = 0; i < spec.num_agents(); ++i) {
                const Value factual = trajectories[k][scm.layout().action(i, t)];
                for (std::size_t a = 0; a < spec.num_actions(i); ++a)
                    if (static_cast<Value>(a) != factual) out.push_back({k, i, t, static_cast<Value>(a)});
            }
    return out;
}

inline EffectQuery make_query(const std::vector<Trajectory>& trajectories, const std::vector<Outcome>& outcomes,
                              const Candidate& c, std::size_t samples, std::uint64_t seed) {
    EffectQuery q;
    q.trajectory = trajectories[c.trajectory];
    q.agent = c.agent;
    q.time = c.time;
    q.action = c.action;
    q.outcome = outcomes[c.trajectory];
    q.samples = samples;
    q.seed = seed;
    return q;
}

/// Keeps the alternatives whose estimated TCFE toward the outcome reaches the threshold.
inline std::vector<Selected> select_alternatives(const MmdpScm& scm, const std::vector<Trajectory>& trajectories,
                                                 const std::vector<Outcome>& outcomes, const SelectionConfig& cfg) {
    cfg.validate();
    if (outcomes.size() != trajectories.size()) throw ValidationError("one outcome per trajectory is required");
    const auto cands = enumerate_candidates(scm, trajectories, outcomes);
    std::vector<EffectEstimate> est(cands.size());
    parallel_for(cands.size(), cfg.threads, [&](std::size_t c) {
        est[c] = estimate_tcfe(scm, make_query(trajectories, outcomes, cands[c], cfg.samples, mix_seed(cfg.seed, c)));
    });
    std::vector<Selected> out;
    for (std::size_t c = 0; c < cands.size(); ++c)
        if (est[c].value >= cfg.threshold) out.push_back({cands[c], est[c], mix_seed(cfg.seed, c)});
    return out;
}

// ---------------------------------------------------------------- exact Graph targets

namespace detail {

/// Distribution of v's value when its row is selected by `parents` and its noise
/// follows the posterior of `post`, added into `out` with weight `w`.
inline void add_posterior_pmf(const MmdpScm& scm, const PosteriorNoise& post, VarId v, std::span<const Value> parents,
                              double w, std::vector<double>& out) {
    const auto row = scm.table(v).row(scm.row_index(v, parents));
    const double scale = w / post.mass(v);
    for (const auto& iv : post.intervals(v))
        for (std::size_t k = row.piece_at(std::nextafter(iv.lo, 2.0)); k < row.size() && row.lower(k) < iv.hi; ++k) {
            const double len = std::min(iv.hi, row.cuts[k]) - std::max(iv.lo, row.lower(k));
            if (len > 0.0) out[static_cast<std::size_t>(row.outputs[k])] += scale * len;
        }
}

}  // namespace detail

/// Exact cf-ASE of do(A_{i,t} = a) on Graph success for each effect-agent set, by a
/// forward pass over the posterior distribution of the do(a) world's states. Agents
/// move independently, so the counterfactual final row of an agent is its do(a)
/// row when it is an effect agent and its factual row otherwise.
inline std::vector<double> graph_cf_ase_targets(const MmdpScm& scm, const Trajectory& tau, std::size_t agent,
                                                std::size_t t, Value a, const std::vector<AgentSet>& subsets) {
    const auto& spec = scm.spec();
    const auto& L = scm.layout();
    const std::size_t n = spec.num_agents(), S = spec.num_states(), h = spec.horizon;
    if (spec.turn_based || n != graph::kAgents || S != graph::kStates) throw ValidationError("not a Graph model");
    for (AgentSet m : subsets)
        if (in_set(m, agent)) throw ValidationError("Graph targets expect effect agents other than the acting one");
    const PosteriorNoise post(scm, tau);
    std::vector<double> dist(S, 0.0), next(S, 0.0);
    std::vector<Value> parents(n + 1);
    // Step t: everyone but the acting agent keeps the factual action.
    parents[0] = tau[L.state(t)];
    for (std::size_t j = 0; j < n; ++j) parents[1 + j] = j == agent ? a : tau[L.action(j, t)];
    detail::add_posterior_pmf(scm, post, L.state(t + 1), parents, 1.0, dist);
    std::vector<std::vector<double>> pmf(n, std::vector<double>(3));
    for (std::size_t step = t + 1; step < h; ++step) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t s = 0; s < S; ++s) {
            if (dist[s] == 0.0) continue;
            const Value sv = static_cast<Value>(s);
            for (std::size_t j = 0; j < n; ++j) {
                std::fill(pmf[j].begin(), pmf[j].end(), 0.0);
                detail::add_posterior_pmf(scm, post, L.action(j, step), std::span<const Value>(&sv, 1), 1.0, pmf[j]);
            }
            parents[0] = sv;
            const std::function<void(std::size_t, double)> rec = [&](std::size_t j, double w) {
                if (j == n) {
                    detail::add_posterior_pmf(scm, post, L.state(step + 1), parents, w, next);
                    return;
                }
                for (std::size_t x = 0; x < 3; ++x)
                    if (pmf[j][x] > 0.0) {
                        parents[1 + j] = static_cast<Value>(x);
                        rec(j + 1, w * pmf[j][x]);
                    }
            };
            rec(0, dist[s]);
        }
        dist.swap(next);
    }
    const Value final_tau = tau[L.state(h)];
    const graph::Rows rows_tau = graph::positions(final_tau);
    const double factual = graph::balanced(final_tau) ? 1.0 : 0.0;
    std::vector<double> out(subsets.size(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        if (dist[s] == 0.0) continue;
        const graph::Rows rows_e = graph::positions(static_cast<Value>(s));
        for (std::size_t m = 0; m < subsets.size(); ++m) {
            graph::Rows mixed = rows_tau;
            for (std::size_t j = 0; j < n; ++j)
                if (in_set(subsets[m], j)) mixed[j] = rows_e[j];
            if (graph::balanced(graph::encode(mixed))) out[m] += dist[s];
        }
    }
    for (double& v : out) v -= factual;
    return out;
}

/// All non-empty subsets of the agents other than `agent`, in increasing mask order.
inline std::vector<AgentSet> other_agent_subsets(std::size_t num_agents, std::size_t agent) {
    std::vector<AgentSet> out;
    for (AgentSet m = 1; m < (AgentSet{1} << num_agents); ++m)
        if (!in_set(m, agent)) out.push_back(m);
    return out;
}

// ---------------------------------------------------------------- configuration

enum class ExperimentKind { trust_sweep, policy_perturbation, ordering_misspecification };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::trust_sweep: return "trust_sweep";
        case ExperimentKind::policy_perturbation: return "policy_perturbation";
        case ExperimentKind::ordering_misspecification: return "ordering_misspecification";
    }
    return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
    for (auto k : {ExperimentKind::trust_sweep, ExperimentKind::policy_perturbation,
                   ExperimentKind::ordering_misspecification})
        if (s == to_string(k)) return k;
    throw ValidationError("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::trust_sweep;
    std::size_t trajectories = 20;
    double threshold = 0.8;
    std::size_t samples = 100;
    std::vector<double> mu_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> epsilon_grid{0.0, 0.025, 0.05, 0.1, 0.2};
    /// Action orderings for the misspecification run, lowest first; empty = all six.
    std::vector<std::array<Value, 3>> orderings;
    /// Effect-agent sets for the Graph runs; empty = every non-empty subset of the non-acting agents.
    std::vector<AgentSet> effect_agent_subsets;
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    graph::GraphEnvConfig graph;
    sepsis::SepsisEnvConfig sepsis;
    std::string sepsis_asset = sepsis::default_asset_path();

    static ExperimentConfig defaults(ExperimentKind kind, bool paper_scale = false) {
        ExperimentConfig c;
        c.kind = kind;
        const bool is_graph = kind != ExperimentKind::trust_sweep;
        c.threshold = is_graph ? 0.75 : 0.8;
        c.trajectories = is_graph ? (paper_scale ? 500 : 50) : (paper_scale ? 100 : 20);
        return c;
    }

    void validate() const {
        if (trajectories < 1) throw ValidationError("trajectory count must be at least 1");
        if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("TCFE threshold must lie in (0, 1]");
        if (samples < 1) throw ValidationError("sample budget must be at least 1");
        if (kind == ExperimentKind::trust_sweep) {
            if (mu_grid.empty()) throw ValidationError("mu grid must not be empty");
            for (double mu : mu_grid)
                if (!(mu >= 0.0 && mu <= 1.0)) throw ValidationError("trust mu must lie in [0, 1]");
            sepsis.validate();
        }
        if (kind == ExperimentKind::policy_perturbation) {
            if (epsilon_grid.empty()) throw ValidationError("epsilon grid must not be empty");
            for (double e : epsilon_grid)
                if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("perturbation epsilon must lie in [0, 1]");
        }
        for (const auto& o : orderings) {
            auto sorted = o;
            std::sort(sorted.begin(), sorted.end());
            if (sorted != std::array<Value, 3>{0, 1, 2}) throw ValidationError("ordering must be a permutation of the three moves");
        }
        for (double p : graph.random_prob)
            if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("random-action probability must lie in [0, 1]");
        for (AgentSet m : effect_agent_subsets)
            if (m == 0 || m >= (AgentSet{1} << graph::kAgents)) throw ValidationError("effect agent set out of range");
    }
};

inline std::string ordering_name(const std::array<Value, 3>& o) {
    static const char* names[] = {"up", "down", "straight"};
    return std::string(names[o[0]]) + "<" + names[o[1]] + "<" + names[o[2]];
}

inline std::array<Value, 3> parse_ordering(const json& j) {
    std::array<Value, 3> o{};
    if (!j.is_array() || j.size() != 3) throw ValidationError("ordering must list the three moves");
    for (std::size_t k = 0; k < 3; ++k) {
        const auto name = j[k].get<std::string>();
        if (name == "up") o[k] = graph::kUp;
        else if (name == "down") o[k] = graph::kDown;
        else if (name == "straight") o[k] = graph::kStraight;
        else throw ValidationError("unknown move '" + name + "'");
    }
    return o;
}

/// Parses a config document; absent fields keep the defaults of its experiment.
inline ExperimentConfig parse_experiment_config(const json& j, bool paper_scale = false) {
    try {
        auto c = ExperimentConfig::defaults(parse_experiment_kind(j.at("experiment").get<std::string>()), paper_scale);
        if (j.contains("paper_scale") && j["paper_scale"].get<bool>() && !paper_scale)
            c = ExperimentConfig::defaults(c.kind, true);
        for (const auto& [key, value] : j.items()) {
            if (key == "experiment" || key == "paper_scale") continue;
            else if (key == "trajectories") c.trajectories = value.get<std::size_t>();
            else if (key == "threshold") c.threshold = value.get<double>();
            else if (key == "samples") c.samples = value.get<std::size_t>();
            else if (key == "mu_grid") c.mu_grid = value.get<std::vector<double>>();
            else if (key == "epsilon_grid") c.epsilon_grid = value.get<std::vector<double>>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "threads") c.threads = value.get<std::size_t>();
            else if (key == "orderings") {
                c.orderings.clear();
                for (const auto& o : value) c.orderings.push_back(parse_ordering(o));
            } else if (key == "effect_agent_subsets") {
                c.effect_agent_subsets.clear();
                for (const auto& s : value) {
                    AgentSet m = 0;
                    for (const auto& i : s) {
                        const auto idx = i.get<std::size_t>();
                        if (idx >= graph::kAgents) throw ValidationError("effect agent out of range");
                        m |= AgentSet{1} << idx;
                    }
                    c.effect_agent_subsets.push_back(m);
                }
            } else if (key == "graph") {
                for (const auto& [gk, gv] : value.items()) {
                    if (gk == "random_prob") {
                        const auto p = gv.get<std::vector<double>>();
                        if (p.size() != graph::kAgents) throw ValidationError("random_prob needs one value per agent");
                        std::copy(p.begin(), p.end(), c.graph.random_prob.begin());
                    } else if (gk == "ordering") {
                        c.graph.ordering = parse_ordering(gv);
                    } else {
                        throw ValidationError("unknown graph config key '" + gk + "'");
                    }
                }
            } else if (key == "sepsis") {
                for (const auto& [sk, sv] : value.items()) {
                    if (sk == "horizon") c.sepsis.horizon = sv.get<std::size_t>();
                    else if (sk == "delta") c.sepsis.delta = sv.get<double>();
                    else if (sk == "gamma") c.sepsis.gamma = sv.get<double>();
                    else if (sk == "finite_horizon") c.sepsis.finite_horizon = sv.get<bool>();
                    else if (sk == "asset") c.sepsis_asset = sv.get<std::string>();
                    else throw ValidationError("unknown sepsis config key '" + sk + "'");
                }
            } else {
                throw ValidationError("unknown config key '" + key + "'");
            }
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid experiment config: ") + e.what());
    }
}

inline json config_to_json(const ExperimentConfig& c) {
    json j{{"experiment", to_string(c.kind)}, {"trajectories", c.trajectories}, {"threshold", c.threshold},
           {"samples", c.samples}, {"seed", c.seed}};
    if (c.kind == ExperimentKind::trust_sweep) {
        j["mu_grid"] = c.mu_grid;
        j["sepsis"] = {{"horizon", c.sepsis.horizon}, {"delta", c.sepsis.delta}, {"gamma", c.sepsis.gamma},
                       {"finite_horizon", c.sepsis.finite_horizon}};
    } else {
        j["graph"] = {{"random_prob", c.graph.random_prob}, {"ordering", ordering_name(c.graph.ordering)}};
        if (c.kind == ExperimentKind::policy_perturbation) j["epsilon_grid"] = c.epsilon_grid;
    }
    return j;
}

struct ExperimentOutput {
    std::vector<ResultRow> rows;
    json summary;
};

/// Optional progress sink; receives short human-readable lines.
using Progress = std::function<void(const std::string&)>;

namespace detail {

inline constexpr std::uint64_t kStreamFailures = 1, kStreamSelection = 2, kStreamEffects = 3, kStreamPerturbation = 4,
                               kStreamAudit = 5;

inline std::uint64_t stream(std::uint64_t seed, std::uint64_t s) { return mix_seed(seed, s); }

inline json nan_to_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline ResultRow row_for(const MmdpScm& scm, const std::string& experiment, const std::string& param,
                         const std::string& method, AgentSet n, const Candidate& c, const EffectEstimate& e,
                         std::uint64_t seed, std::optional<double> target = std::nullopt) {
    const auto& spec = scm.spec();
    return {experiment,
            param,
            method,
            n ? direction_name(spec, n) : std::string(),
            c.trajectory,
            c.agent,
            c.time,
            spec.agents[c.agent].actions[static_cast<std::size_t>(c.action)],
            e.value,
            e.se,
            e.samples,
            seed,
            target};
}

/// Zero-at-factual and range audit on the first few queries of a run.
inline json audit(const MmdpScm& scm, const std::vector<Trajectory>& trajectories, const std::vector<Outcome>& outcomes,
                  const std::vector<Selected>& selected, const std::function<AgentSet(const Candidate&)>& effect_agents,
                  std::size_t samples, std::uint64_t seed, const std::vector<ResultRow>& rows) {
    std::size_t checked = 0, zero = 0;
    for (std::size_t k = 0; k < selected.size() && k < 5; ++k) {
        Candidate c = selected[k].query;
        c.action = trajectories[c.trajectory][scm.layout().action(c.agent, c.time)];
        auto q = make_query(trajectories, outcomes, c, samples, mix_seed(seed, k));
        q.effect_agents = effect_agents(c);
        for (auto kind : {EffectKind::tcfe, EffectKind::cf_ase, EffectKind::cf_pse}) {
            ++checked;
            zero += estimate(scm, q, kind).value == 0.0;
        }
    }
    bool in_range = true;
    for (const auto& r : rows) in_range = in_range && r.effect >= -1.0 && r.effect <= 1.0;
    return {{"factual_queries_checked", checked}, {"factual_queries_zero", zero}, {"effects_in_range", in_range}};
}

}  // namespace detail

// ---------------------------------------------------------------- Graph robustness

/// Failures, selected alternatives and their exact cf-ASE targets on the true Graph model.
struct GraphSelection {
    MmdpScm scm;
    std::vector<Trajectory> trajectories;
    std::vector<Outcome> outcomes;
    std::size_t attempts = 0;
    std::vector<Selected> selected;
    std::vector<AgentSet> subsets;
    /// targets[s][m] for selected query s and effect-agent subset m (masks per query in `subset_masks`).
    std::vector<std::vector<double>> targets;
    std::vector<std::vector<AgentSet>> subset_masks;
};

inline GraphSelection prepare_graph(const ExperimentConfig& cfg, const Progress& progress = {}) {
    GraphSelection g{graph::build_graph_env(cfg.graph), {}, {}, 0, {}, cfg.effect_agent_subsets, {}, {}};
    const auto success = graph::success_outcome();
    const auto h = g.scm.layout().state(graph::kHorizon);
    const auto set = generate_failure_set(
        g.scm, cfg.trajectories, detail::stream(cfg.seed, detail::kStreamFailures),
        [&](const Trajectory& tr) { return !success.holds(tr[h]); }, cfg.threads);
    g.trajectories = set.trajectories;
    g.attempts = set.attempts;
    g.outcomes.assign(g.trajectories.size(), success);
    g.selected = select_alternatives(g.scm, g.trajectories, g.outcomes,
                                     {cfg.threshold, cfg.samples, detail::stream(cfg.seed, detail::kStreamSelection),
                                      cfg.threads});
    if (progress)
        progress(std::to_string(g.trajectories.size()) + " failures, " + std::to_string(g.selected.size()) +
                 " selected alternatives");
    g.targets.resize(g.selected.size());
    g.subset_masks.resize(g.selected.size());
    parallel_for(g.selected.size(), cfg.threads, [&](std::size_t s) {
        const auto& c = g.selected[s].query;
        std::vector<AgentSet> masks;
        if (g.subsets.empty()) {
            masks = other_agent_subsets(graph::kAgents, c.agent);
        } else {
            for (AgentSet m : g.subsets)
                if (!in_set(m, c.agent)) masks.push_back(m);
        }
        g.targets[s] = graph_cf_ase_targets(g.scm, g.trajectories[c.trajectory], c.agent, c.time, c.action, masks);
        g.subset_masks[s] = std::move(masks);
    });
    return g;
}

namespace detail {

/// Seed of the estimate for (selected query s, subset m); shared across model variants.
inline std::uint64_t graph_query_seed(std::uint64_t seed, std::size_t s, std::size_t m) {
    return mix_seed(mix_seed(stream(seed, kStreamEffects), s), m);
}

inline std::vector<ResultRow> selection_rows(const GraphSelection& g, const std::string& experiment) {
    std::vector<ResultRow> rows;
    for (const auto& s : g.selected) rows.push_back(row_for(g.scm, experiment, "selection", "tcfe", 0, s.query, s.tcfe, s.seed));
    return rows;
}

inline json target_bins(const std::vector<double>& targets, const std::vector<double>& errors) {
    static const double edges[] = {0.0, 0.25, 0.5, 0.75};
    static const char* names[] = {"[0,0.25)", "[0.25,0.5)", "[0.5,0.75)", "[0.75,1]"};
    std::array<std::size_t, 4> count{};
    std::array<double, 4> sum{};
    for (std::size_t k = 0; k < targets.size(); ++k) {
        std::size_t b = 0;
        while (b + 1 < 4 && targets[k] >= edges[b + 1]) ++b;
        ++count[b];
        sum[b] += errors[k];
    }
    json out = json::array();
    for (std::size_t b = 0; b < 4; ++b)
        out.push_back({{"bin", names[b]},
                       {"count", count[b]},
                       {"mean_abs_error", nan_to_null(count[b] ? sum[b] / double(count[b]) : std::nan(""))}});
    return out;
}

inline double mean(const std::vector<double>& v) {
    return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

inline double sd_of_mean(const std::vector<double>& v) {
    if (v.size() < 2) return std::nan("");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1) / double(v.size()));
}

inline json graph_header(const GraphSelection& g, const ExperimentConfig& cfg, std::vector<double>& flat_targets) {
    flat_targets.clear();
    for (const auto& t : g.targets) flat_targets.insert(flat_targets.end(), t.begin(), t.end());
    return {{"failures", g.trajectories.size()},
            {"draws", g.attempts},
            {"selected", g.selected.size()},
            {"queries", flat_targets.size()},
            {"noise_floor", noise_floor(flat_targets, cfg.samples)}};
}

}  // namespace detail

/// cf-ASE under models whose random-action probabilities are resampled within +-epsilon,
/// scored against exact targets of the true model.
inline ExperimentOutput run_policy_perturbation(const ExperimentConfig& cfg, const Progress& progress = {}) {
    cfg.validate();
    const auto g = prepare_graph(cfg, progress);
    const std::string name = "policy_perturbation";
    const std::size_t S = g.selected.size(), E = cfg.epsilon_grid.size();
    // results[s][e] holds one estimate per subset.
    std::vector<std::vector<std::vector<EffectEstimate>>> results(S, std::vector<std::vector<EffectEstimate>>(E));
    std::vector<std::vector<graph::GraphEnvConfig>> models(S, std::vector<graph::GraphEnvConfig>(E, cfg.graph));
    parallel_for(S, cfg.threads, [&](std::size_t s) {
        const auto& c = g.selected[s].query;
        Rng rng(mix_seed(detail::stream(cfg.seed, detail::kStreamPerturbation), s));
        std::array<double, graph::kAgents> v{};
        for (double& x : v) x = rng.unit_noise();
        for (std::size_t e = 0; e < E; ++e) {
            auto& m = models[s][e];
            const double eps = cfg.epsilon_grid[e];
            for (std::size_t j = 0; j < graph::kAgents; ++j) {
                const double p = cfg.graph.random_prob[j];
                const double lo = std::max(0.0, p - eps), hi = std::min(1.0, p + eps);
                m.random_prob[j] = eps == 0.0 ? p : lo + (hi - lo) * v[j];
            }
            const auto scm = graph::build_graph_env(m, &g.scm);
            for (std::size_t k = 0; k < g.subset_masks[s].size(); ++k) {
                auto q = make_query(g.trajectories, g.outcomes, c, cfg.samples, detail::graph_query_seed(cfg.seed, s, k));
                q.effect_agents = g.subset_masks[s][k];
                results[s][e].push_back(estimate_cf_ase(scm, q));
            }
        }
    });
    ExperimentOutput out;
    out.rows = detail::selection_rows(g, name);
    std::vector<double> flat_targets;
    out.summary = {{"experiment", name}, {"config", config_to_json(cfg)}};
    out.summary.update(detail::graph_header(g, cfg, flat_targets));
    json per = json::array();
    for (std::size_t e = 0; e < E; ++e) {
        const auto param = format_param(cfg.epsilon_grid[e]);
        std::vector<double> errors;
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < g.subset_masks[s].size(); ++k) {
                const auto& est = results[s][e][k];
                errors.push_back(std::fabs(est.value - g.targets[s][k]));
                out.rows.push_back(detail::row_for(g.scm, name, param, "cf_ase", g.subset_masks[s][k], g.selected[s].query,
                                                   est, detail::graph_query_seed(cfg.seed, s, k), g.targets[s][k]));
            }
        per.push_back({{"epsilon", cfg.epsilon_grid[e]},
                       {"mean_abs_error", detail::nan_to_null(detail::mean(errors))},
                       {"se", detail::nan_to_null(detail::sd_of_mean(errors))},
                       {"by_target", detail::target_bins(flat_targets, errors)}});
    }
    out.summary["per_epsilon"] = per;
    out.summary["audit"] = detail::audit(
        g.scm, g.trajectories, g.outcomes, g.selected,
        [](const Candidate& c) { return AgentSet{(AgentSet{1} << graph::kAgents) - 1} & ~(AgentSet{1} << c.agent); },
        cfg.samples, detail::stream(cfg.seed, detail::kStreamAudit), out.rows);
    return out;
}

/// cf-ASE under each ordering of the three moves, scored against exact targets of the correct ordering.
inline ExperimentOutput run_ordering_misspecification(const ExperimentConfig& cfg, const Progress& progress = {}) {
    cfg.validate();
    const auto g = prepare_graph(cfg, progress);
    const std::string name = "ordering_misspecification";
    auto orderings = cfg.orderings;
    if (orderings.empty()) {
        std::array<Value, 3> o{0, 1, 2};
        do orderings.push_back(o);
        while (std::next_permutation(o.begin(), o.end()));
    }
    const auto correct = cfg.graph.ordering;
    const std::array<Value, 3> reversed{correct[2], correct[1], correct[0]};
    const std::size_t S = g.selected.size(), O = orderings.size();
    std::vector<MmdpScm> models;
    for (const auto& o : orderings) {
        auto m = cfg.graph;
        m.ordering = o;
        models.push_back(graph::build_graph_env(m, &g.scm));
    }
    std::vector<std::vector<std::vector<EffectEstimate>>> results(S, std::vector<std::vector<EffectEstimate>>(O));
    parallel_for(S, cfg.threads, [&](std::size_t s) {
        const auto& c = g.selected[s].query;
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t k = 0; k < g.subset_masks[s].size(); ++k) {
                auto q = make_query(g.trajectories, g.outcomes, c, cfg.samples, detail::graph_query_seed(cfg.seed, s, k));
                q.effect_agents = g.subset_masks[s][k];
                results[s][o].push_back(estimate_cf_ase(models[o], q));
            }
    });
    ExperimentOutput out;
    out.rows = detail::selection_rows(g, name);
    std::vector<double> flat_targets;
    out.summary = {{"experiment", name}, {"config", config_to_json(cfg)}};
    out.summary.update(detail::graph_header(g, cfg, flat_targets));
    json per = json::array();
    for (std::size_t o = 0; o < O; ++o) {
        const auto param = ordering_name(orderings[o]);
        std::vector<double> errors;
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < g.subset_masks[s].size(); ++k) {
                const auto& est = results[s][o][k];
                errors.push_back(std::fabs(est.value - g.targets[s][k]));
                out.rows.push_back(detail::row_for(g.scm, name, param, "cf_ase", g.subset_masks[s][k], g.selected[s].query,
                                                   est, detail::graph_query_seed(cfg.seed, s, k), g.targets[s][k]));
            }
        per.push_back({{"ordering", param},
                       {"correct", orderings[o] == correct},
                       {"reversed", orderings[o] == reversed},
                       {"mean_abs_error", detail::nan_to_null(detail::mean(errors))},
                       {"se", detail::nan_to_null(detail::sd_of_mean(errors))},
                       {"by_target", detail::target_bins(flat_targets, errors)}});
    }
    out.summary["per_ordering"] = per;
    out.summary["audit"] = detail::audit(
        g.scm, g.trajectories, g.outcomes, g.selected,
        [](const Candidate& c) { return AgentSet{(AgentSet{1} << graph::kAgents) - 1} & ~(AgentSet{1} << c.agent); },
        cfg.samples, detail::stream(cfg.seed, detail::kStreamAudit), out.rows);
    return out;
}

// ---------------------------------------------------------------- Sepsis trust sweep

inline constexpr std::array<double, 2> kHistogramEdges{0.25, 0.75};

/// Counts over [0,0.25), [0.25,0.75), [0.75,1]; negative values fall in the first bin.
inline std::array<std::size_t, 3> histogram(const std::vector<double>& v) {
    std::array<std::size_t, 3> h{};
    for (double x : v) ++h[x < kHistogramEdges[0] ? 0 : x < kHistogramEdges[1] ? 1 : 2];
    return h;
}

/// For each trust level: Sepsis failures, selected alternatives, and cf-ASE / cf-PSE of
/// AI actions through the clinician and of clinician actions through the AI.
inline ExperimentOutput run_trust_sweep(const ExperimentConfig& cfg, const Progress& progress = {}) {
    cfg.validate();
    const std::string name = "trust_sweep";
    const auto asset = sepsis::load_asset(cfg.sepsis_asset);
    const auto policies = sepsis::train_policies(asset, cfg.sepsis);
    const AgentSet through_clinician = AgentSet{1} << sepsis::kClinician, through_ai = AgentSet{1} << sepsis::kAi;
    const auto effect_agents = [&](const Candidate& c) {
        return c.agent == sepsis::kAi ? through_clinician : through_ai;
    };
    ExperimentOutput out;
    out.summary = {{"experiment", name}, {"config", config_to_json(cfg)}};
    json per = json::array();
    std::optional<MmdpScm> base;
    struct Series {
        std::vector<double> mu, ase, pse;
    };
    std::array<Series, 2> series;  // indexed by effect agent: 0 = through AI, 1 = through clinician
    json audits = json::array();
    for (std::size_t m = 0; m < cfg.mu_grid.size(); ++m) {
        auto env = cfg.sepsis;
        env.mu = cfg.mu_grid[m];
        const auto scm = sepsis::build_sepsis_env(env, asset, policies, base ? &*base : nullptr);
        if (!base) base = scm;
        const std::uint64_t seed = mix_seed(cfg.seed, 100 + m);
        const auto set = generate_failure_set(
            scm, cfg.trajectories, detail::stream(seed, detail::kStreamFailures),
            [&](const Trajectory& tr) { return sepsis::death_step(scm, tr).has_value(); }, cfg.threads);
        std::vector<Outcome> outcomes;
        for (const auto& tr : set.trajectories) outcomes.push_back(sepsis::survival_at(*sepsis::death_step(scm, tr)));
        const auto selected = select_alternatives(
            scm, set.trajectories, outcomes,
            {cfg.threshold, cfg.samples, detail::stream(seed, detail::kStreamSelection), cfg.threads});
        std::vector<std::array<EffectEstimate, 2>> est(selected.size());
        const auto effect_seed = [&](std::size_t s) { return mix_seed(detail::stream(seed, detail::kStreamEffects), s); };
        parallel_for(selected.size(), cfg.threads, [&](std::size_t s) {
            auto q = make_query(set.trajectories, outcomes, selected[s].query, cfg.samples, effect_seed(s));
            q.effect_agents = effect_agents(selected[s].query);
            est[s] = {estimate_cf_ase(scm, q), estimate_cf_pse(scm, q)};
        });
        const auto param = format_param(env.mu);
        std::array<std::vector<double>, 2> ase, pse;
        std::vector<ResultRow> rows;
        for (std::size_t s = 0; s < selected.size(); ++s) {
            const auto& c = selected[s].query;
            const AgentSet n = effect_agents(c);
            rows.push_back(detail::row_for(scm, name, param, "tcfe", 0, c, selected[s].tcfe, selected[s].seed));
            rows.push_back(detail::row_for(scm, name, param, "cf_ase", n, c, est[s][0], effect_seed(s)));
            rows.push_back(detail::row_for(scm, name, param, "cf_pse", n, c, est[s][1], effect_seed(s)));
            const std::size_t d = n == through_clinician ? 1 : 0;
            ase[d].push_back(est[s][0].value);
            pse[d].push_back(est[s][1].value);
        }
        json dirs = json::object();
        for (std::size_t d = 0; d < 2; ++d) {
            const std::string dname = scm.spec().agents[d].name;
            const auto ha = histogram(ase[d]), hp = histogram(pse[d]);
            dirs[dname] = {{"count", ase[d].size()},
                           {"cf_ase_mean", detail::nan_to_null(detail::mean(ase[d]))},
                           {"cf_pse_mean", detail::nan_to_null(detail::mean(pse[d]))},
                           {"cf_ase_histogram", ha},
                           {"cf_pse_histogram", hp}};
            if (!ase[d].empty()) {
                series[d].mu.push_back(env.mu);
                series[d].ase.push_back(detail::mean(ase[d]));
                series[d].pse.push_back(detail::mean(pse[d]));
            }
        }
        per.push_back({{"mu", env.mu},
                       {"failures", set.trajectories.size()},
                       {"draws", set.attempts},
                       {"selected", selected.size()},
                       {"directions", dirs}});
        auto audit = detail::audit(scm, set.trajectories, outcomes, selected, effect_agents, cfg.samples,
                                   detail::stream(seed, detail::kStreamAudit), rows);
        audit["mu"] = env.mu;
        audits.push_back(audit);
        out.rows.insert(out.rows.end(), rows.begin(), rows.end());
        if (progress)
            progress("mu=" + param + ": " + std::to_string(set.trajectories.size()) + " failures, " +
                     std::to_string(selected.size()) + " selected");
    }
    out.summary["per_mu"] = per;
    json sp = json::object();
    for (std::size_t d = 0; d < 2; ++d)
        sp[base->spec().agents[d].name] = {{"points", series[d].mu.size()},
                                           {"cf_ase", detail::nan_to_null(spearman(series[d].mu, series[d].ase))},
                                           {"cf_pse", detail::nan_to_null(spearman(series[d].mu, series[d].pse))}};
    out.summary["spearman"] = sp;
    out.summary["audit"] = audits;
    return out;
}

// ---------------------------------------------------------------- driver

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, const Progress& progress = {}) {
    switch (cfg.kind) {
        case ExperimentKind::trust_sweep: return run_trust_sweep(cfg, progress);
        case ExperimentKind::policy_perturbation: return run_policy_perturbation(cfg, progress);
        case ExperimentKind::ordering_misspecification: return run_ordering_misspecification(cfg, progress);
    }
    throw ValidationError("unknown experiment");
}

/// Writes `<kind>.csv` and `summary.json` into `dir` (created if needed); returns the summary path.
inline std::string write_outputs(const std::string& dir, const ExperimentConfig& cfg, const ExperimentOutput& out) {
    std::filesystem::create_directories(dir);
    const auto csv_path = std::filesystem::path(dir) / (std::string(to_string(cfg.kind)) + ".csv");
    const auto summary_path = std::filesystem::path(dir) / "summary.json";
    {
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) throw ValidationError("cannot write " + csv_path.string());
        write_csv(csv, out.rows);
    }
    std::ofstream js(summary_path, std::ios::binary);
    if (!js) throw ValidationError("cannot write " + summary_path.string());
    js << out.summary.dump(2) << '\n';
    return summary_path.string();
}

}  // namespace ase_lab::harness
