#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ase_lab/parallel.hpp"
#include "ase_lab/scm.hpp"

namespace ase_lab {

class FailureRateTooLow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FailureSet {
    std::vector<Trajectory> trajectories;
    /// Draw index of each kept trajectory; draw k uses Rng(mix_seed(seed, k)).
    std::vector<std::uint64_t> draws;
    std::size_t attempts = 0;
};

inline constexpr double kMinFailureRate = 1e-4;
inline constexpr std::size_t kMinAttemptsBeforeAbort = 100000;

/// Samples trajectories until `count` satisfy `is_failure`. Draws are evaluated in
/// parallel batches but kept in draw order, so the set depends only on the seed.
inline FailureSet generate_failure_set(const MmdpScm& scm, std::size_t count, std::uint64_t seed,
                                       const std::function<bool(const Trajectory&)>& is_failure,
                                       std::size_t threads = 0) {
    if (count < 1) throw ValidationError("failure count must be at least 1");
    FailureSet out;
    const std::size_t batch = 4096;
    std::vector<Trajectory> drawn(batch);
    std::vector<char> hit(batch);
    while (out.trajectories.size() < count) {
        const std::size_t base = out.attempts;
        parallel_for(batch, threads, [&](std::size_t k) {
            Rng rng(mix_seed(seed, base + k));
            drawn[k] = sample_trajectory(scm, rng).first;
            hit[k] = is_failure(drawn[k]);
        });
        for (std::size_t k = 0; k < batch && out.trajectories.size() < count; ++k) {
            ++out.attempts;
            if (!hit[k]) continue;
            out.trajectories.push_back(std::move(drawn[k]));
            out.draws.push_back(base + k);
        }
        if (out.trajectories.size() < count && out.attempts >= kMinAttemptsBeforeAbort &&
            static_cast<double>(out.trajectories.size()) < kMinFailureRate * static_cast<double>(out.attempts))
            throw FailureRateTooLow("failure rate below 1e-4: " + std::to_string(out.trajectories.size()) +
                                    " failures in " + std::to_string(out.attempts) + " draws");
    }
    return out;
}

}  // namespace ase_lab
