#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "ase_lab/env/failures.hpp"
#include "ase_lab/env/graph_env.hpp"
#include "ase_lab/env/sepsis_env.hpp"

using namespace ase_lab;

namespace {

/// PMF of a variable's selected row, read off the piece lengths.
std::vector<double> row_pmf(const MmdpScm& scm, VarId v, const std::vector<Value>& parents) {
    const auto row = scm.table(v).row(scm.row_index(v, parents));
    std::vector<double> p(scm.domain_size(v), 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) p[static_cast<std::size_t>(row.outputs[k])] += row.length(k);
    return p;
}

const sepsis::SepsisAsset& asset() {
    static const auto a = sepsis::load_asset();
    return a;
}

const sepsis::SepsisPolicies& policies() {
    static const auto p = sepsis::train_policies(asset(), {});
    return p;
}

}  // namespace

TEST(GraphEnv, Config) {
    const graph::GraphEnvConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.random_prob[5], 0.30);
    for (std::size_t i = 0; i < graph::kAgents; ++i) EXPECT_NEAR(cfg.random_prob[i], 0.05 * double(i + 1), 1e-15);
    EXPECT_EQ(graph::decode(graph::encode({0, 1, 2, 2, 1, 0})), (graph::Rows{0, 1, 2, 2, 1, 0}));
    EXPECT_TRUE(graph::balanced(graph::encode({0, 1, 2, 2, 1, 0})));
    EXPECT_FALSE(graph::balanced(graph::encode({0, 0, 0, 2, 1, 1})));
    EXPECT_FALSE(graph::balanced(graph::kStart));
}

TEST(GraphEnv, TwoPerRowGoesStraight) {
    const graph::GraphEnvConfig cfg;
    const auto scm = graph::build_graph_env(cfg);
    const Value s = graph::encode({0, 0, 1, 1, 2, 2});
    for (std::size_t i = 0; i < graph::kAgents; ++i) {
        const auto p = row_pmf(scm, scm.layout().action(i, 1), {s});
        const double pi = cfg.random_prob[i];
        EXPECT_NEAR(p[graph::kStraight], 1 - pi + pi / 3, 1e-12);
        EXPECT_NEAR(p[graph::kUp], pi / 3, 1e-12);
    }
}

TEST(GraphEnv, CrowdedRowMovesTowardOpenRows) {
    // Four agents in the middle row, one above, one below: both directions open.
    const Value s = graph::encode({1, 1, 1, 1, 0, 2});
    const auto p = graph::action_probs(s, 0, 0.05);
    EXPECT_NEAR(p[graph::kStraight], 0.05 / 3 + 0.95 * 2 / 4, 1e-12);
    EXPECT_NEAR(p[graph::kUp], 0.05 / 3 + 0.95 * 2 / 4 / 2, 1e-12);
    EXPECT_NEAR(p[graph::kDown], p[graph::kUp], 1e-15);
    // Three agents in the top row: only moving down helps.
    const auto q = graph::action_probs(graph::encode({0, 0, 0, 1, 1, 2}), 1, 0.1);
    EXPECT_NEAR(q[graph::kDown], 0.1 / 3 + 0.9 / 3, 1e-12);
    EXPECT_NEAR(q[graph::kUp], 0.1 / 3, 1e-12);
}

TEST(GraphEnv, OutOfBoundsGoesStraight) {
    EXPECT_EQ(graph::move(0, graph::kUp), 0);
    EXPECT_EQ(graph::move(2, graph::kDown), 2);
    EXPECT_EQ(graph::move(1, graph::kUp), 0);
    const auto scm = graph::build_graph_env({});
    const auto& tr = scm.spec().transition;
    const Value top = graph::encode({0, 1, 1, 2, 2, 0});
    std::vector<Value> up_all(graph::kAgents, graph::kUp);
    const auto row = tr.row(static_cast<std::size_t>(top), tr.key(scm.spec().joint_index(up_all)));
    ASSERT_EQ(row.size(), 1u);
    EXPECT_EQ(graph::decode(row[0].next), (graph::Rows{0, 0, 0, 1, 1, 0}));
}

TEST(GraphEnv, PolicyRowsNormalize) {
    const graph::GraphEnvConfig cfg;
    for (std::size_t s = 0; s < graph::kStates; ++s)
        for (std::size_t i = 0; i < graph::kAgents; ++i) {
            const auto p = graph::action_probs(static_cast<Value>(s), i, cfg.random_prob[i]);
            EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
            for (double x : p) EXPECT_GE(x, 0.0);
        }
    const auto start = graph::action_probs(graph::kStart, 3, 0.2);
    for (double x : start) EXPECT_DOUBLE_EQ(x, 1.0 / 3);
}

TEST(GraphEnv, ScmReproducesPolicyAndIsNoiseMonotonic) {
    const graph::GraphEnvConfig cfg;
    const auto scm = graph::build_graph_env(cfg);
    EXPECT_FALSE(scm.spec().turn_based);
    for (std::size_t t = 0; t < graph::kHorizon; ++t)
        for (std::size_t i = 0; i < graph::kAgents; ++i) {
            const VarId v = scm.layout().action(i, t);
            EXPECT_TRUE(check_noise_monotonic(scm.table(v), scm.ordering(v)));
            for (std::size_t s = 0; s < graph::kStates; s += 7) {
                const auto p = row_pmf(scm, v, {static_cast<Value>(s)});
                const auto q = graph::action_probs(static_cast<Value>(s), i, cfg.random_prob[i]);
                for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(p[a], q[a], 1e-12);
            }
        }
}

TEST(GraphEnv, FailureSet) {
    const auto scm = graph::build_graph_env({});
    const auto outcome = graph::success_outcome();
    const auto failed = [&](const Trajectory& tr) { return !outcome.holds(tr[scm.layout().state(graph::kHorizon)]); };
    const auto set = generate_failure_set(scm, 50, 11, failed, 2);
    ASSERT_EQ(set.trajectories.size(), 50u);
    EXPECT_GT(set.attempts, 50u);
    for (const auto& tr : set.trajectories) {
        EXPECT_FALSE(graph::balanced(tr[scm.layout().state(graph::kHorizon)]));
        EXPECT_NO_THROW(PosteriorNoise(scm, tr));
    }
    const auto again = generate_failure_set(scm, 50, 11, failed, 5);
    EXPECT_EQ(again.draws, set.draws);
    EXPECT_THROW(generate_failure_set(scm, 1, 1, [](const Trajectory&) { return false; }), FailureRateTooLow);
}

TEST(SepsisEnv, StateEncoding) {
    std::size_t counted = 0;
    for (std::size_t s = 0; s < sepsis::kAlive; ++s) {
        const auto v = sepsis::decode(static_cast<Value>(s));
        EXPECT_EQ(sepsis::encode(v), static_cast<Value>(s));
        ++counted;
    }
    EXPECT_EQ(counted, 180u);
    EXPECT_EQ(sepsis::treatment_name(0), "none");
    EXPECT_EQ(sepsis::treatment_name(7), "AVE");
    EXPECT_EQ(sepsis::treatment_name(8), "no-op");
}

TEST(SepsisEnv, AssetMatchesGenerator) {
    std::ifstream in(sepsis::default_asset_path(), std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(sepsis::render_asset(sepsis::SepsisDynamics{}), text);
    EXPECT_EQ(fnv1a64(text), sepsis::kAssetChecksum);
    EXPECT_EQ(asset().transitions, sepsis::generate_transitions(asset().parameters));
    EXPECT_THROW(sepsis::load_asset("/nonexistent/sepsis.json"), ValidationError);
}

TEST(SepsisEnv, TransitionsAreValid) {
    const auto& a = asset();
    for (std::size_t s = 0; s < sepsis::kStates; ++s)
        for (std::size_t k = 0; k < sepsis::kTreatments; ++k) {
            const auto& row = a.transitions[s * sepsis::kTreatments + k];
            double total = 0.0;
            for (const auto& e : row) total += e.prob;
            EXPECT_NEAR(total, 1.0, 1e-12);
            if (s >= sepsis::kAlive) {
                ASSERT_EQ(row.size(), 1u);
                EXPECT_EQ(row[0].next, static_cast<Value>(s));
            }
        }
    double diabetic = 0.0;
    for (std::size_t s = 0; s < sepsis::kAlive; ++s)
        if (sepsis::decode(static_cast<Value>(s)).diabetic) diabetic += a.initial[s];
    EXPECT_NEAR(diabetic, 0.2, 1e-12);
}

TEST(SepsisEnv, TrustControlsNoop) {
    const auto& a = asset();
    for (double mu : {0.0, 0.6, 1.0}) {
        sepsis::SepsisEnvConfig cfg;
        cfg.mu = mu;
        const auto scm = sepsis::build_sepsis_env(cfg, a, policies());
        EXPECT_TRUE(scm.spec().turn_based);
        EXPECT_EQ(scm.spec().num_actions(sepsis::kAi), 8u);
        EXPECT_EQ(scm.spec().num_actions(sepsis::kClinician), 9u);
        for (std::size_t s = 0; s < sepsis::kStates; s += 5)
            for (Value ai : {0, 4, 7}) {
                const auto p = row_pmf(scm, scm.layout().action(sepsis::kClinician, 3), {static_cast<Value>(s), ai});
                EXPECT_DOUBLE_EQ(p[sepsis::kNoop], mu);
                const auto own = policies().clinician.at(0, s, sepsis::kStates);
                EXPECT_DOUBLE_EQ(p[own], 1.0 - mu);
            }
    }
}

TEST(SepsisEnv, AppliedTreatment) {
    const auto& a = asset();
    const auto scm = sepsis::build_sepsis_env({}, a, policies());
    const auto& tr = scm.spec().transition;
    const Value s = 17;
    // Clinician no-op applies the AI's treatment; otherwise the clinician's own.
    const std::vector<Value> noop{5, sepsis::kNoop}, override_{5, 2};
    EXPECT_EQ(tr.key(scm.spec().joint_index(noop)), 5u);
    EXPECT_EQ(tr.key(scm.spec().joint_index(override_)), 2u);
    const auto row = tr.row(static_cast<std::size_t>(s), 5);
    EXPECT_EQ(std::vector<TransitionEntry>(row.begin(), row.end()), a.transitions[s * sepsis::kTreatments + 5]);
}

TEST(SepsisEnv, FailuresEndInDeath) {
    sepsis::SepsisEnvConfig cfg;
    cfg.mu = 0.2;
    const auto scm = sepsis::build_sepsis_env(cfg, asset(), policies());
    const auto set = generate_failure_set(
        scm, 20, 5, [&](const Trajectory& tr) { return sepsis::death_step(scm, tr).has_value(); }, 2);
    ASSERT_EQ(set.trajectories.size(), 20u);
    for (const auto& tr : set.trajectories) {
        EXPECT_EQ(tr[scm.layout().state(cfg.horizon)], sepsis::kDeath);
        EXPECT_NO_THROW(PosteriorNoise(scm, tr));
    }
}

TEST(SepsisEnv, RejectsBadConfig) {
    sepsis::SepsisEnvConfig cfg;
    cfg.mu = 1.5;
    EXPECT_THROW(sepsis::build_sepsis_env(cfg, asset(), policies()), ValidationError);
    cfg.mu = 0.5;
    cfg.horizon = 0;
    EXPECT_THROW(sepsis::build_sepsis_env(cfg, asset(), policies()), ValidationError);
}
