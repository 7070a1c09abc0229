#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "ase_lab/mmdp.hpp"

namespace ase_lab {

/// Single-agent MDP: rows[s * num_actions + a] is T(. | s, a) and reward[s * num_actions + a]
/// the expected immediate reward. Absorbing states are self-loops with reward 0.
struct MdpView {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    std::vector<std::vector<TransitionEntry>> rows;
    std::vector<double> reward;
    double gamma = 0.99;

    std::span<const TransitionEntry> row(std::size_t s, std::size_t a) const { return rows[s * num_actions + a]; }

    void validate() const {
        if (num_states == 0 || num_actions == 0) throw ValidationError("MDP needs states and actions");
        if (rows.size() != num_states * num_actions || reward.size() != rows.size())
            throw ValidationError("MDP tables do not match its dimensions");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("discount must lie in (0, 1]");
        for (std::size_t r = 0; r < rows.size(); ++r) {
            double total = 0.0;
            for (const auto& e : rows[r]) total += e.prob;
            if (std::fabs(total - 1.0) > kNormalizationTolerance)
                throw ValidationError("MDP row " + std::to_string(r) + " sums to " + std::to_string(total));
        }
    }
};

struct SolvedPolicy {
    /// action[(t * num_states) + s]; a single slice for stationary policies.
    std::vector<std::size_t> action;
    std::vector<double> value;
    std::size_t iterations = 0;
    std::size_t slices = 1;
    /// Value of the policy evaluated at each iteration.
    std::vector<std::vector<double>> trace;

    std::size_t at(std::size_t t, std::size_t s, std::size_t num_states) const {
        return action[(slices > 1 ? t : 0) * num_states + s];
    }
};

namespace detail {

inline double q_value(const MdpView& m, std::span<const double> v, std::size_t s, std::size_t a, double gamma) {
    double q = m.reward[s * m.num_actions + a];
    for (const auto& e : m.row(s, a)) q += gamma * e.prob * v[static_cast<std::size_t>(e.next)];
    return q;
}

/// Lowest action index whose value is within `tol` of the best.
inline std::size_t greedy(const MdpView& m, std::span<const double> v, std::size_t s, double gamma, double tol) {
    std::vector<double> q(m.num_actions);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m.num_actions; ++a) best = std::max(best, q[a] = q_value(m, v, s, a, gamma));
    for (std::size_t a = 0; a < m.num_actions; ++a)
        if (q[a] >= best - tol) return a;
    return 0;
}

}  // namespace detail

/// Value of a stationary deterministic policy: solves (I - gamma P) v = r exactly.
inline std::vector<double> evaluate_policy(const MdpView& m, const std::vector<std::size_t>& pi) {
    const auto n = static_cast<Eigen::Index>(m.num_states);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (std::size_t s = 0; s < m.num_states; ++s) {
        const auto i = static_cast<Eigen::Index>(s);
        b(i) = m.reward[s * m.num_actions + pi[s]];
        for (const auto& e : m.row(s, pi[s])) A(i, static_cast<Eigen::Index>(e.next)) -= m.gamma * e.prob;
    }
    const Eigen::VectorXd v = A.partialPivLu().solve(b);
    return {v.data(), v.data() + n};
}

/// Discounted policy iteration. Ties go to the lowest action index.
inline SolvedPolicy policy_iteration(const MdpView& m, double tol = 1e-10, std::size_t max_iters = 1000) {
    m.validate();
    if (!(m.gamma < 1.0)) throw ValidationError("policy iteration needs a discount below 1");
    SolvedPolicy out;
    out.action.assign(m.num_states, 0);
    for (std::size_t it = 1; it <= max_iters; ++it) {
        out.value = evaluate_policy(m, out.action);
        out.trace.push_back(out.value);
        bool stable = true;
        for (std::size_t s = 0; s < m.num_states; ++s) {
            const double current = detail::q_value(m, out.value, s, out.action[s], m.gamma);
            const std::size_t a = detail::greedy(m, out.value, s, m.gamma, tol);
            if (a != out.action[s] && detail::q_value(m, out.value, s, a, m.gamma) > current + tol) {
                out.action[s] = a;
                stable = false;
            }
        }
        out.iterations = it;
        if (stable) return out;
    }
    throw ValidationError("policy iteration did not converge within " + std::to_string(max_iters) + " iterations");
}

/// Finite-horizon backward induction; returns a time-indexed policy.
inline SolvedPolicy backward_induction(const MdpView& m, std::size_t horizon) {
    m.validate();
    SolvedPolicy out;
    out.slices = horizon;
    out.action.assign(horizon * m.num_states, 0);
    std::vector<double> v(m.num_states, 0.0), next(m.num_states);
    for (std::size_t t = horizon; t-- > 0;) {
        for (std::size_t s = 0; s < m.num_states; ++s) {
            const std::size_t a = detail::greedy(m, v, s, m.gamma, 1e-12);
            out.action[t * m.num_states + s] = a;
            next[s] = detail::q_value(m, v, s, a, m.gamma);
        }
        v.swap(next);
    }
    out.value = v;
    out.iterations = horizon;
    return out;
}

/// Value iteration to tolerance `tol` on the sup-norm change.
inline std::vector<double> value_iteration(const MdpView& m, double tol = 1e-12, std::size_t max_iters = 1000000) {
    m.validate();
    std::vector<double> v(m.num_states, 0.0), next(m.num_states);
    for (std::size_t it = 0; it < max_iters; ++it) {
        double delta = 0.0;
        for (std::size_t s = 0; s < m.num_states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < m.num_actions; ++a) best = std::max(best, detail::q_value(m, v, s, a, m.gamma));
            next[s] = best;
            delta = std::max(delta, std::fabs(next[s] - v[s]));
        }
        v.swap(next);
        if (delta < tol) return v;
    }
    throw ValidationError("value iteration did not converge");
}

}  // namespace ase_lab
