#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "ase_lab/env/failures.hpp"
#include "ase_lab/env/graph_env.hpp"
#include "ase_lab/env/sepsis_env.hpp"
#include "ase_lab/harness.hpp"
#include "ase_lab/io.hpp"
#include "ase_lab/oracle.hpp"

using namespace ase_lab;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kError = 1, kValidation = 2, kZeroProbability = 3, kBudget = 4 };

struct ModelArgs {
    std::string model;
    std::string env;
    double mu = 0.5;
    std::string asset = sepsis::default_asset_path();
};

struct QueryArgs {
    std::string kind;
    std::string trajectory;
    std::size_t trajectory_index = 0;
    std::size_t agent = 0;
    std::size_t time = 0;
    Value action = 0;
    std::optional<Value> reference;
    std::string effect_agents;
    std::string outcome;
    std::size_t samples = 1000;
    std::optional<std::uint64_t> seed;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("ASE_LAB_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ValidationError("ASE_LAB_SEED must be an unsigned integer");
    }
    return 0;
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("--model", m.model, "Model JSON file");
    cmd->add_option("--env", m.env, "Built-in environment instead of a model file")->check(CLI::IsMember({"graph", "sepsis"}));
    cmd->add_option("--mu", m.mu, "Sepsis trust level");
    cmd->add_option("--sepsis-asset", m.asset, "Sepsis transition asset");
}

MmdpScm load_scm(const ModelArgs& m) {
    if (m.model.empty() == m.env.empty()) throw ValidationError("give exactly one of --model and --env");
    if (!m.model.empty()) return io::load_model(m.model).build();
    if (m.env == "graph") return graph::build_graph_env({});
    sepsis::SepsisEnvConfig cfg;
    cfg.mu = m.mu;
    const auto asset = sepsis::load_asset(m.asset);
    return sepsis::build_sepsis_env(cfg, asset, sepsis::train_policies(asset, cfg));
}

void add_query_flags(CLI::App* cmd, QueryArgs& q) {
    cmd->add_option("--kind", q.kind, "tcfe, cf-ase, cf-pse, cf-fpse, ase, fpse, pse or tce")->required();
    cmd->add_option("--trajectory", q.trajectory, "Trajectory JSON (object, or array with --trajectory-index)");
    cmd->add_option("--trajectory-index", q.trajectory_index, "Entry of a trajectory array");
    cmd->add_option("--agent", q.agent, "Acting agent index")->required();
    cmd->add_option("--time", q.time, "Acting step")->required();
    cmd->add_option("--action", q.action, "Alternative action index")->required();
    cmd->add_option("--reference", q.reference, "Reference action for ase, fpse, pse and tce");
    cmd->add_option("--effect-agents", q.effect_agents, "Comma-separated effect agents (indices or names)");
    cmd->add_option("--outcome", q.outcome, "state[t]==id, final_state==id or the != forms")->required();
    cmd->add_option("--samples", q.samples, "Monte Carlo draws H");
    cmd->add_option("--seed", q.seed, "Seed (falls back to ASE_LAB_SEED, then 0)");
}

EffectQuery build_query(const MmdpScm& scm, const QueryArgs& a, EffectKind kind) {
    EffectQuery q;
    if (!a.trajectory.empty()) {
        auto j = io::read_json(a.trajectory);
        if (j.is_array()) {
            if (a.trajectory_index >= j.size()) throw ValidationError("trajectory index out of range");
            j = j[a.trajectory_index];
        }
        q.trajectory = io::parse_trajectory(scm, j);
    }
    q.agent = a.agent;
    q.time = a.time;
    q.action = a.action;
    q.reference = a.reference;
    if (!a.effect_agents.empty()) q.effect_agents = io::parse_agent_set(a.effect_agents, scm.spec());
    q.outcome = io::parse_outcome(a.outcome, scm.spec());
    q.samples = a.samples;
    q.seed = resolve_seed(a.seed);
    validate_query(scm, q, kind);
    if (is_counterfactual(kind)) PosteriorNoise(scm, *q.trajectory);
    return q;
}

int cmd_effect(const ModelArgs& m, const QueryArgs& a) {
    const auto scm = load_scm(m);
    const auto kind = parse_effect_kind(a.kind);
    const auto q = build_query(scm, a, kind);
    const auto e = estimate(scm, q, kind);
    std::cout << json{{"kind", to_string(kind)}, {"value", e.value}, {"se", e.se}, {"H", e.samples},
                      {"seed", q.seed}, {"successes", e.successes}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_oracle(const ModelArgs& m, const QueryArgs& a, std::optional<double> budget, bool unlimited, bool check_pse) {
    const auto scm = load_scm(m);
    const auto kind = parse_effect_kind(a.kind);
    const std::optional<double> limit = unlimited ? std::nullopt : std::optional<double>(budget.value_or(kDefaultCellBudget));
    if (check_pse) {
        if (kind != EffectKind::pse) throw ValidationError("--check-prop-fpse-pse needs --kind pse");
        auto q = build_query(scm, a, kind);
        const auto& L = scm.layout();
        const EdgeSet g = cf_pse_subgraph(L, q.agent, q.time, q.effect_agents);
        auto f = q;
        f.action = *q.reference;
        f.reference = q.action;
        f.g = g.complement(L);
        f.g_star = EdgeSet(L.num_vars());
        const double pse = exact_query(scm, q, EffectKind::pse, limit);
        const double fpse = exact_query(scm, f, EffectKind::fpse, limit);
        const double tce = exact_query(scm, q, EffectKind::tce, limit);
        std::cout << json{{"pse", pse}, {"fpse", fpse}, {"tce", tce}, {"fpse_plus_tce", fpse + tce},
                          {"difference", pse - (fpse + tce)}}
                         .dump()
                  << '\n';
        return kOk;
    }
    const auto q = build_query(scm, a, kind);
    const auto r = exact_query_detailed(scm, q, kind, limit);
    std::cout << json{{"kind", to_string(kind)}, {"value", r.value}, {"cells", r.cells}}.dump() << '\n';
    return kOk;
}

int cmd_experiment(const std::string& config, const std::string& out, bool paper_scale,
                   const std::optional<std::uint64_t>& seed, std::optional<std::size_t> threads) {
    auto j = io::read_json(config);
    if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
    if (seed || (!j.contains("seed") && std::getenv("ASE_LAB_SEED"))) j["seed"] = resolve_seed(seed);
    if (threads) j["threads"] = *threads;
    const auto cfg = harness::parse_experiment_config(j, paper_scale);
    if (paper_scale)
        std::cerr << "warning: full-scale profile (" << cfg.trajectories
                  << " failure trajectories per setting); expect a long run\n";
    const auto start = std::chrono::steady_clock::now();
    const auto result = harness::run_experiment(cfg, [](const std::string& s) { std::cerr << s << '\n'; });
    const auto path = harness::write_outputs(out, cfg, result);
    std::cerr << "done in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
    std::cout << path << '\n';
    return kOk;
}

int cmd_env(const ModelArgs& m, const std::string& out, std::size_t failures, const std::string& failures_out,
            const std::optional<std::uint64_t>& seed) {
    if (m.env.empty()) throw ValidationError("env needs --env graph or --env sepsis");
    const auto scm = load_scm(m);
    if (!out.empty()) io::write_text(out, io::model_to_json(scm).dump() + "\n");
    if (failures > 0) {
        const auto& L = scm.layout();
        std::function<bool(const Trajectory&)> failed;
        if (m.env == "graph") {
            const auto success = graph::success_outcome();
            failed = [&, success](const Trajectory& tr) { return !success.holds(tr[L.state(graph::kHorizon)]); };
        } else {
            failed = [&](const Trajectory& tr) { return sepsis::death_step(scm, tr).has_value(); };
        }
        const auto set = generate_failure_set(scm, failures, resolve_seed(seed), failed);
        json arr = json::array();
        for (const auto& tr : set.trajectories) arr.push_back(io::trajectory_to_json(scm, tr));
        if (failures_out.empty()) std::cout << arr.dump() << '\n';
        else io::write_text(failures_out, arr.dump() + "\n");
    }
    json info{{"states", scm.spec().num_states()}, {"agents", scm.spec().num_agents()}, {"horizon", scm.spec().horizon}};
    std::cerr << info.dump() << '\n';
    return kOk;
}

int cmd_policy(const std::string& asset_path, const std::string& which, double delta, bool finite, const std::string& out) {
    const auto asset = sepsis::load_asset(asset_path);
    sepsis::SepsisEnvConfig cfg;
    cfg.delta = delta;
    cfg.finite_horizon = finite;
    const auto pol = sepsis::train_policies(asset, cfg);
    const auto& p = which == "ai" ? pol.ai : pol.clinician;
    json j{{"agent", which}, {"iterations", p.iterations}, {"time_indexed", p.slices > 1}};
    json table = json::array();
    for (std::size_t t = 0; t < p.slices; ++t) {
        json slice = json::object();
        for (std::size_t s = 0; s < sepsis::kStates; ++s) slice[std::to_string(s)] = p.at(t, s, sepsis::kStates);
        table.push_back(slice);
    }
    j["policy"] = p.slices > 1 ? table : table[0];
    if (out.empty()) std::cout << j.dump() << '\n';
    else io::write_text(out, j.dump(2) + "\n");
    return kOk;
}

int cmd_sepsis_asset(const std::string& out, bool check) {
    const auto text = sepsis::render_asset(sepsis::SepsisDynamics{});
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    if (check) {
        const auto on_disk = io::read_file(out.empty() ? sepsis::default_asset_path() : out);
        const bool same = on_disk == text;
        std::cout << json{{"checksum", hex}, {"matches", same}}.dump() << '\n';
        return same ? kOk : kValidation;
    }
    if (out.empty()) throw ValidationError("sepsis-asset needs --out or --check");
    io::write_text(out, text);
    std::cout << json{{"path", out}, {"checksum", hex}}.dump() << '\n';
    return kOk;
}

void report(const std::string& kind, const std::string& message, json extra = json::object()) {
    extra["error"] = kind;
    extra["message"] = message;
    std::cerr << extra.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual agent-specific effects in multi-agent MDPs"};
    app.require_subcommand(1);

    ModelArgs model;
    QueryArgs query;

    auto* effect = app.add_subcommand("effect", "Monte Carlo estimate of one effect query");
    add_model_flags(effect, model);
    add_query_flags(effect, query);

    auto* oracle = app.add_subcommand("oracle", "Exact value of one effect query by enumeration");
    add_model_flags(oracle, model);
    add_query_flags(oracle, query);
    std::optional<double> budget;
    bool unlimited = false, check_pse = false;
    oracle->add_option("--budget", budget, "Noise-cell limit");
    oracle->add_flag("--no-budget", unlimited, "Disable the cell limit");
    oracle->add_flag("--check-prop-fpse-pse", check_pse, "Print PSE and FPSE + TCE for the same query");

    auto* experiment = app.add_subcommand("experiment", "Run a harness experiment");
    std::string config, out_dir = "results";
    bool paper_scale = false;
    std::optional<std::uint64_t> exp_seed;
    std::optional<std::size_t> threads;
    experiment->add_option("--config", config, "Experiment config JSON")->required();
    experiment->add_option("--out", out_dir, "Output directory");
    experiment->add_flag("--paper-scale", paper_scale, "Use the full-size trajectory counts");
    experiment->add_option("--seed", exp_seed, "Override the config seed");
    experiment->add_option("--threads", threads, "Worker threads (default: all cores)");

    auto* env = app.add_subcommand("env", "Export a built-in environment and sample failures");
    std::string env_out, failures_out;
    std::size_t failures = 0;
    std::optional<std::uint64_t> env_seed;
    add_model_flags(env, model);
    env->add_option("--out", env_out, "Write the model JSON here");
    env->add_option("--failures", failures, "Number of failure trajectories to sample");
    env->add_option("--failures-out", failures_out, "Write sampled failures here (default: stdout)");
    env->add_option("--seed", env_seed, "Seed (falls back to ASE_LAB_SEED, then 0)");

    auto* policy = app.add_subcommand("policy", "Solve a Sepsis treatment policy");
    std::string policy_asset = sepsis::default_asset_path(), which = "clinician", policy_out;
    double delta = 0.1;
    bool finite = false;
    policy->add_option("--sepsis-asset", policy_asset, "Sepsis transition asset");
    policy->add_option("--agent", which, "clinician or ai")->check(CLI::IsMember({"clinician", "ai"}));
    policy->add_option("--delta", delta, "Effectiveness shift of the AI's training dynamics");
    policy->add_flag("--finite-horizon", finite, "Backward induction instead of discounted policy iteration");
    policy->add_option("--out", policy_out, "Write the policy JSON here (default: stdout)");

    auto* asset = app.add_subcommand("sepsis-asset", "Regenerate or check the Sepsis transition asset");
    std::string asset_out;
    bool asset_check = false;
    asset->add_option("--out", asset_out, "Destination (or the file to check)");
    asset->add_flag("--check", asset_check, "Compare a file with the generator output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report("usage", e.what());
        return kValidation;
    }

    try {
        if (*effect) return cmd_effect(model, query);
        if (*oracle) return cmd_oracle(model, query, budget, unlimited, check_pse);
        if (*experiment) return cmd_experiment(config, out_dir, paper_scale, exp_seed, threads);
        if (*env) return cmd_env(model, env_out, failures, failures_out, env_seed);
        if (*policy) return cmd_policy(policy_asset, which, delta, finite, policy_out);
        if (*asset) return cmd_sepsis_asset(asset_out, asset_check);
    } catch (const ValidationError& e) {
        report("validation", e.what());
        return kValidation;
    } catch (const ZeroProbabilityEvidence& e) {
        report("zero_probability_evidence", e.what());
        return kZeroProbability;
    } catch (const BudgetExceeded& e) {
        report("budget_exceeded", e.what(), {{"required_cells", e.required()}, {"budget", e.budget()}});
        return kBudget;
    } catch (const std::exception& e) {
        report("internal", e.what());
        return kError;
    }
    return kError;
}
