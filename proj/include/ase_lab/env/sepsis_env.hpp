#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ase_lab/effects.hpp"
#include "ase_lab/policy_solver.hpp"
#include "ase_lab/scm.hpp"

#ifndef ASE_LAB_ASSET_DIR
#define ASE_LAB_ASSET_DIR "assets"
#endif

namespace ase_lab::sepsis {

// Vital-sign levels: heart rate and systolic blood pressure {low, normal, high},
// oxygen saturation {low, normal}, glucose {very low, low, normal, high, very high}.
inline constexpr int kHrLevels = 3, kBpLevels = 3, kO2Levels = 2, kGluLevels = 5;
inline constexpr std::size_t kAlive = 2 * kHrLevels * kBpLevels * kO2Levels * kGluLevels;
inline constexpr Value kDeath = static_cast<Value>(kAlive);
inline constexpr Value kDischarge = static_cast<Value>(kAlive + 1);
inline constexpr std::size_t kStates = kAlive + 2;
inline constexpr std::size_t kTreatments = 8;
inline constexpr Value kNoop = 8;
inline constexpr std::size_t kDefaultHorizon = 20;
inline constexpr std::size_t kAi = 0, kClinician = 1;

/// Treatment id bits: antibiotics 4, vasopressors 2, ventilation 1.
inline bool antibiotics(std::size_t k) { return (k & 4) != 0; }
inline bool vasopressors(std::size_t k) { return (k & 2) != 0; }
inline bool ventilation(std::size_t k) { return (k & 1) != 0; }

struct Vitals {
    int hr = 1, bp = 1, o2 = 1, glu = 2;
    bool diabetic = false;

    int abnormal() const { return (hr != 1) + (bp != 1) + (o2 != 1) + (glu != 2); }
};

inline Value encode(const Vitals& v) {
    const int id = ((((v.diabetic ? 1 : 0) * kHrLevels + v.hr) * kBpLevels + v.bp) * kO2Levels + v.o2) * kGluLevels + v.glu;
    return static_cast<Value>(id);
}

inline Vitals decode(Value s) {
    int id = s;
    Vitals v;
    v.glu = id % kGluLevels;
    id /= kGluLevels;
    v.o2 = id % kO2Levels;
    id /= kO2Levels;
    v.bp = id % kBpLevels;
    id /= kBpLevels;
    v.hr = id % kHrLevels;
    v.diabetic = id / kHrLevels != 0;
    return v;
}

inline std::string state_name(Value s) {
    if (s == kDeath) return "death";
    if (s == kDischarge) return "discharge";
    static const char* lh[] = {"L", "N", "H"};
    static const char* glu[] = {"VL", "L", "N", "H", "VH"};
    const Vitals v = decode(s);
    return std::string("hr") + lh[v.hr] + "-bp" + lh[v.bp] + "-o2" + (v.o2 ? "N" : "L") + "-glu" + glu[v.glu] +
           (v.diabetic ? "-d1" : "-d0");
}

inline std::string treatment_name(std::size_t k) {
    if (k == static_cast<std::size_t>(kNoop)) return "no-op";
    std::string n;
    if (antibiotics(k)) n += 'A';
    if (vasopressors(k)) n += 'V';
    if (ventilation(k)) n += 'E';
    return n.empty() ? "none" : n;
}

/// Knobs of the discrete-level sepsis dynamics. Effects of a treatment apply while
/// it is given; the "withdraw" probabilities apply on steps where it is not.
struct SepsisDynamics {
    double abx_hr_fix = 0.5;
    double abx_bp_fix = 0.5;
    double abx_withdraw = 0.1;
    double vent_fix = 0.7;
    double vent_withdraw = 0.1;
    double vaso_fix = 0.7;
    double vaso_raise = 0.7;
    double vaso_diabetic_fix = 0.5;
    double vaso_diabetic_overshoot = 0.4;
    double vaso_diabetic_raise = 0.9;
    double vaso_glucose_raise = 0.5;
    double vaso_withdraw = 0.1;
    double fluctuation = 0.1;
    double diabetic_glucose_fluctuation = 0.3;
    double diabetes_prevalence = 0.2;

    /// Antibiotics made more effective and vasopressors less, by `delta` (clipped to [0,1]).
    SepsisDynamics perturbed(double delta) const {
        const auto clip = [](double p) { return std::clamp(p, 0.0, 1.0); };
        SepsisDynamics d = *this;
        d.abx_hr_fix = clip(abx_hr_fix + delta);
        d.abx_bp_fix = clip(abx_bp_fix + delta);
        d.vaso_fix = clip(vaso_fix - delta);
        d.vaso_diabetic_fix = clip(vaso_diabetic_fix - delta);
        return d;
    }

    nlohmann::json to_json() const {
        return {{"abx_hr_fix", abx_hr_fix},
                {"abx_bp_fix", abx_bp_fix},
                {"abx_withdraw", abx_withdraw},
                {"vent_fix", vent_fix},
                {"vent_withdraw", vent_withdraw},
                {"vaso_fix", vaso_fix},
                {"vaso_raise", vaso_raise},
                {"vaso_diabetic_fix", vaso_diabetic_fix},
                {"vaso_diabetic_overshoot", vaso_diabetic_overshoot},
                {"vaso_diabetic_raise", vaso_diabetic_raise},
                {"vaso_glucose_raise", vaso_glucose_raise},
                {"vaso_withdraw", vaso_withdraw},
                {"fluctuation", fluctuation},
                {"diabetic_glucose_fluctuation", diabetic_glucose_fluctuation},
                {"diabetes_prevalence", diabetes_prevalence}};
    }

    static SepsisDynamics from_json(const nlohmann::json& j) {
        SepsisDynamics d;
        const auto get = [&](const char* k, double& x) {
            if (!j.contains(k)) throw ValidationError(std::string("sepsis parameters lack '") + k + "'");
            x = j.at(k).get<double>();
        };
        get("abx_hr_fix", d.abx_hr_fix);
        get("abx_bp_fix", d.abx_bp_fix);
        get("abx_withdraw", d.abx_withdraw);
        get("vent_fix", d.vent_fix);
        get("vent_withdraw", d.vent_withdraw);
        get("vaso_fix", d.vaso_fix);
        get("vaso_raise", d.vaso_raise);
        get("vaso_diabetic_fix", d.vaso_diabetic_fix);
        get("vaso_diabetic_overshoot", d.vaso_diabetic_overshoot);
        get("vaso_diabetic_raise", d.vaso_diabetic_raise);
        get("vaso_glucose_raise", d.vaso_glucose_raise);
        get("vaso_withdraw", d.vaso_withdraw);
        get("fluctuation", d.fluctuation);
        get("diabetic_glucose_fluctuation", d.diabetic_glucose_fluctuation);
        get("diabetes_prevalence", d.diabetes_prevalence);
        return d;
    }
};

namespace detail {

template <std::size_t N>
using Dist = std::array<double, N>;

template <std::size_t N>
Dist<N> point(int level) {
    Dist<N> d{};
    d[static_cast<std::size_t>(level)] = 1.0;
    return d;
}

/// Moves mass from level `from` to level `to` with probability p.
template <std::size_t N>
void shift(Dist<N>& d, int from, int to, double p) {
    const double m = d[static_cast<std::size_t>(from)] * p;
    d[static_cast<std::size_t>(from)] -= m;
    d[static_cast<std::size_t>(to)] += m;
}

/// One level up or down with probability f/2 each; moves past either end stay put.
template <std::size_t N>
Dist<N> fluctuate(const Dist<N>& d, double f) {
    Dist<N> out{};
    for (std::size_t k = 0; k < N; ++k) {
        out[k] += d[k] * (1.0 - f);
        out[k > 0 ? k - 1 : k] += d[k] * f / 2;
        out[k + 1 < N ? k + 1 : k] += d[k] * f / 2;
    }
    return out;
}

}  // namespace detail

/// Next-state distribution of an alive patient under treatment k. At least three
/// abnormal vitals mean death; all-normal vitals without treatment mean discharge.
inline std::vector<TransitionEntry> transition_row(const SepsisDynamics& p, Value s, std::size_t k) {
    if (s == kDeath || s == kDischarge) return {{s, 1.0}};
    using detail::shift;
    const Vitals v = decode(s);
    auto hr = detail::point<3>(v.hr);
    auto bp = detail::point<3>(v.bp);
    auto o2 = detail::point<2>(v.o2);
    auto glu = detail::point<5>(v.glu);
    if (antibiotics(k)) {
        shift(hr, 2, 1, p.abx_hr_fix);
        shift(bp, 2, 1, p.abx_bp_fix);
    } else {
        shift(hr, 1, 2, p.abx_withdraw);
        shift(bp, 1, 2, p.abx_withdraw);
    }
    if (vasopressors(k)) {
        if (v.diabetic) {
            const double low = bp[0];
            bp[0] = low * (1.0 - p.vaso_diabetic_fix - p.vaso_diabetic_overshoot);
            shift(bp, 1, 2, p.vaso_diabetic_raise);
            bp[1] += low * p.vaso_diabetic_fix;
            bp[2] += low * p.vaso_diabetic_overshoot;
            for (int g = 3; g >= 0; --g) shift(glu, g, g + 1, p.vaso_glucose_raise);
        } else {
            const double low = bp[0];
            shift(bp, 1, 2, p.vaso_raise);
            bp[0] -= low * p.vaso_fix;
            bp[1] += low * p.vaso_fix;
        }
    } else {
        const double normal = bp[1], high = bp[2];
        bp[1] += high * p.vaso_withdraw - normal * p.vaso_withdraw;
        bp[0] += normal * p.vaso_withdraw;
        bp[2] -= high * p.vaso_withdraw;
    }
    if (ventilation(k))
        shift(o2, 0, 1, p.vent_fix);
    else
        shift(o2, 1, 0, p.vent_withdraw);
    hr = detail::fluctuate(hr, p.fluctuation);
    bp = detail::fluctuate(bp, p.fluctuation);
    o2 = detail::fluctuate(o2, p.fluctuation);
    glu = detail::fluctuate(glu, v.diabetic ? p.diabetic_glucose_fluctuation : p.fluctuation);

    std::vector<double> next(kStates, 0.0);
    for (int a = 0; a < kHrLevels; ++a)
        for (int b = 0; b < kBpLevels; ++b)
            for (int c = 0; c < kO2Levels; ++c)
                for (int g = 0; g < kGluLevels; ++g) {
                    const double m = hr[a] * bp[b] * o2[c] * glu[g];
                    if (m == 0.0) continue;
                    const Vitals w{a, b, c, g, v.diabetic};
                    const int bad = w.abnormal();
                    const Value to = bad >= 3 ? kDeath : (bad == 0 && k == 0) ? kDischarge : encode(w);
                    next[static_cast<std::size_t>(to)] += m;
                }
    std::vector<TransitionEntry> row;
    double total = 0.0;
    for (double m : next) total += m;
    for (std::size_t n = 0; n < kStates; ++n)
        if (next[n] > 0.0) row.push_back({static_cast<Value>(n), next[n] / total});
    return row;
}

/// Diabetes with its prevalence; vitals uniform over the alive profiles with one
/// or two abnormal readings.
inline std::vector<double> initial_distribution(const SepsisDynamics& p) {
    std::vector<double> init(kStates, 0.0);
    std::size_t profiles = 0;
    for (std::size_t s = 0; s < kAlive / 2; ++s) {
        const int bad = decode(static_cast<Value>(s)).abnormal();
        profiles += bad == 1 || bad == 2;
    }
    for (std::size_t s = 0; s < kAlive; ++s) {
        const Vitals v = decode(static_cast<Value>(s));
        if (v.abnormal() != 1 && v.abnormal() != 2) continue;
        init[s] = (v.diabetic ? p.diabetes_prevalence : 1.0 - p.diabetes_prevalence) / static_cast<double>(profiles);
    }
    return init;
}

/// Transition rows indexed [state * kTreatments + treatment].
using SepsisTransitions = std::vector<std::vector<TransitionEntry>>;

inline SepsisTransitions generate_transitions(const SepsisDynamics& p) {
    SepsisTransitions t;
    t.reserve(kStates * kTreatments);
    for (std::size_t s = 0; s < kStates; ++s)
        for (std::size_t k = 0; k < kTreatments; ++k) t.push_back(transition_row(p, static_cast<Value>(s), k));
    return t;
}

/// Serialized transition asset: parameters, names, initial distribution, and
/// one sparse next-state list per (state id, treatment id).
inline std::string render_asset(const SepsisDynamics& p) {
    nlohmann::json j;
    j["format"] = "ase_lab.sepsis_transitions/1";
    j["parameters"] = p.to_json();
    nlohmann::json states = nlohmann::json::array(), treatments = nlohmann::json::array();
    for (std::size_t s = 0; s < kStates; ++s) states.push_back(state_name(static_cast<Value>(s)));
    for (std::size_t k = 0; k < kTreatments; ++k) treatments.push_back(treatment_name(k));
    j["states"] = states;
    j["treatments"] = treatments;
    nlohmann::json init = nlohmann::json::array();
    const auto dist = initial_distribution(p);
    for (std::size_t s = 0; s < kStates; ++s)
        if (dist[s] > 0.0) init.push_back({s, dist[s]});
    j["initial"] = init;
    nlohmann::json rows = nlohmann::json::array();
    const auto table = generate_transitions(p);
    for (std::size_t s = 0; s < kStates; ++s)
        for (std::size_t k = 0; k < kTreatments; ++k) {
            nlohmann::json next = nlohmann::json::array();
            for (const auto& e : table[s * kTreatments + k]) next.push_back({e.next, e.prob});
            rows.push_back({{"state", s}, {"treatment", k}, {"next", next}});
        }
    j["transitions"] = rows;
    return j.dump() + "\n";
}

/// FNV-1a checksum of the shipped assets/sepsis_transitions.json.
inline constexpr std::uint64_t kAssetChecksum = 0xa2663245b0e364c2ULL;

inline std::string default_asset_path() { return std::string(ASE_LAB_ASSET_DIR) + "/sepsis_transitions.json"; }

struct SepsisAsset {
    SepsisDynamics parameters;
    std::vector<double> initial;
    SepsisTransitions transitions;
    std::uint64_t checksum = 0;
};

inline SepsisAsset parse_asset(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "ase_lab.sepsis_transitions/1") throw ValidationError("unknown sepsis asset format");
    SepsisAsset a;
    a.parameters = SepsisDynamics::from_json(j.at("parameters"));
    if (j.at("states").size() != kStates || j.at("treatments").size() != kTreatments)
        throw ValidationError("sepsis asset has unexpected dimensions");
    a.initial.assign(kStates, 0.0);
    for (const auto& e : j.at("initial")) a.initial.at(e.at(0).get<std::size_t>()) = e.at(1).get<double>();
    MmdpSpec::check_distribution(a.initial, kStates, "sepsis initial distribution");
    a.transitions.assign(kStates * kTreatments, {});
    std::vector<char> seen(kStates * kTreatments, 0);
    for (const auto& r : j.at("transitions")) {
        const auto s = r.at("state").get<std::size_t>(), k = r.at("treatment").get<std::size_t>();
        if (s >= kStates || k >= kTreatments) throw ValidationError("sepsis asset row out of range");
        auto& row = a.transitions[s * kTreatments + k];
        for (const auto& e : r.at("next")) row.push_back({e.at(0).get<Value>(), e.at(1).get<double>()});
        seen[s * kTreatments + k] = 1;
    }
    for (std::size_t r = 0; r < seen.size(); ++r)
        if (!seen[r])
            throw ValidationError("sepsis asset lacks the row for state '" + state_name(static_cast<Value>(r / kTreatments)) +
                                  "', treatment " + treatment_name(r % kTreatments));
    a.checksum = fnv1a64(text);
    return a;
}

/// Loads the transition asset; with `verify`, the file must match the pinned checksum.
inline SepsisAsset load_asset(const std::string& path = default_asset_path(), bool verify = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("sepsis transition asset not found: " + path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (verify && fnv1a64(text) != kAssetChecksum) throw ValidationError("sepsis transition asset checksum mismatch: " + path);
    return parse_asset(text);
}

struct SepsisEnvConfig {
    double mu = 0.5;
    std::size_t horizon = kDefaultHorizon;
    /// Shift of antibiotics/vasopressors effectiveness in the AI's training dynamics.
    double delta = 0.1;
    double gamma = 0.99;
    /// Train time-indexed policies by backward induction instead of discounted policy iteration.
    bool finite_horizon = false;

    void validate() const {
        if (!(mu >= 0.0 && mu <= 1.0)) throw ValidationError("trust mu must lie in [0, 1]");
        if (horizon < 1) throw ValidationError("horizon must be at least 1");
        if (!(gamma > 0.0 && gamma < 1.0) && !finite_horizon) throw ValidationError("discount must lie in (0, 1)");
    }
};

/// Treatment MDP with reward +1 on discharge and -1 on death.
inline MdpView treatment_mdp(const SepsisTransitions& t, double gamma) {
    MdpView m;
    m.num_states = kStates;
    m.num_actions = kTreatments;
    m.gamma = gamma;
    m.rows = t;
    m.reward.assign(kStates * kTreatments, 0.0);
    for (std::size_t s = 0; s < kAlive; ++s)
        for (std::size_t k = 0; k < kTreatments; ++k)
            for (const auto& e : t[s * kTreatments + k])
                m.reward[s * kTreatments + k] += e.prob * (e.next == kDeath ? -1.0 : e.next == kDischarge ? 1.0 : 0.0);
    return m;
}

struct SepsisPolicies {
    SolvedPolicy clinician;
    SolvedPolicy ai;
};

/// Clinician trained on the asset's dynamics, AI on the perturbed dynamics.
inline SepsisPolicies train_policies(const SepsisAsset& asset, const SepsisEnvConfig& cfg) {
    const auto perturbed = generate_transitions(asset.parameters.perturbed(cfg.delta));
    const auto solve = [&](const SepsisTransitions& t) {
        const auto m = treatment_mdp(t, cfg.finite_horizon ? 1.0 : cfg.gamma);
        return cfg.finite_horizon ? backward_induction(m, cfg.horizon) : policy_iteration(m);
    };
    return {solve(asset.transitions), solve(perturbed)};
}

/// Death first, alive profiles by id, discharge last.
inline TotalOrder default_state_order() {
    std::vector<Value> o{kDeath};
    for (std::size_t s = 0; s < kAlive; ++s) o.push_back(static_cast<Value>(s));
    o.push_back(kDischarge);
    return TotalOrder(std::move(o));
}

inline std::shared_ptr<const MmdpSpec> sepsis_spec(const SepsisAsset& asset, std::size_t horizon) {
    auto spec = std::make_shared<MmdpSpec>();
    for (std::size_t s = 0; s < kStates; ++s) spec->states.push_back(state_name(static_cast<Value>(s)));
    AgentSpec ai{"ai", {}}, clin{"clinician", {}};
    for (std::size_t k = 0; k < kTreatments; ++k) ai.actions.push_back(treatment_name(k));
    clin.actions = ai.actions;
    clin.actions.push_back(treatment_name(kNoop));
    spec->agents = {ai, clin};
    spec->horizon = horizon;
    spec->initial = asset.initial;
    spec->turn_based = true;
    std::vector<std::uint32_t> keys;
    for (std::size_t a = 0; a < kTreatments; ++a)
        for (std::size_t c = 0; c <= kTreatments; ++c)
            keys.push_back(static_cast<std::uint32_t>(c == static_cast<std::size_t>(kNoop) ? a : c));
    spec->transition = TransitionTable(kStates, kTreatments, std::move(keys));
    for (std::size_t s = 0; s < kStates; ++s)
        for (std::size_t k = 0; k < kTreatments; ++k) spec->transition.set_row(s, k, asset.transitions[s * kTreatments + k]);
    return spec;
}

/// AI recommends first; the clinician takes the no-op with probability mu and
/// otherwise its own treatment, which then replaces the AI's.
inline JointPolicy sepsis_policy(const SepsisPolicies& pol, double mu, std::size_t horizon) {
    const std::size_t slices = pol.ai.slices > 1 ? horizon : 1;
    JointPolicy jp;
    PolicyTable ai(kStates, kTreatments, 1, slices), clin(kStates, kTreatments + 1, kTreatments, slices);
    for (std::size_t t = 0; t < slices; ++t)
        for (std::size_t s = 0; s < kStates; ++s) {
            std::vector<double> a(kTreatments, 0.0), c(kTreatments + 1, 0.0);
            a[pol.ai.at(t, s, kStates)] = 1.0;
            c[pol.clinician.at(t, s, kStates)] += 1.0 - mu;
            c[static_cast<std::size_t>(kNoop)] += mu;
            ai.set_all_priors(t, s, a);
            clin.set_all_priors(t, s, c);
        }
    jp.agents.push_back(std::move(ai));
    jp.agents.push_back(std::move(clin));
    return jp;
}

inline Orderings default_orderings(const MmdpSpec& spec) {
    Orderings o = Orderings::identity(spec);
    o.states = default_state_order();
    return o;
}

/// Builds the Sepsis SCM at trust `cfg.mu`; `reuse` shares the spec and transition tables.
inline MmdpScm build_sepsis_env(const SepsisEnvConfig& cfg, const SepsisAsset& asset, const SepsisPolicies& pol,
                                const MmdpScm* reuse = nullptr, const Orderings* orderings = nullptr) {
    cfg.validate();
    const auto spec = reuse && reuse->spec().horizon == cfg.horizon ? reuse->spec_ptr() : sepsis_spec(asset, cfg.horizon);
    return build_scm(spec, sepsis_policy(pol, cfg.mu, cfg.horizon), orderings ? *orderings : default_orderings(*spec),
                     reuse && reuse->spec_ptr() == spec ? reuse : nullptr);
}

/// First step at which the trajectory is in the death state, if any.
inline std::optional<std::size_t> death_step(const MmdpScm& scm, const Trajectory& tau) {
    for (std::size_t t = 0; t <= scm.spec().horizon; ++t)
        if (tau[scm.layout().state(t)] == kDeath) return t;
    return std::nullopt;
}

/// Outcome "the patient is not dead at step t".
inline Outcome survival_at(std::size_t t) { return Outcome::state_not_equals(t, kDeath, kStates); }

}  // namespace ase_lab::sepsis
