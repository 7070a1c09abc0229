#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ase_lab {

/// Value of a state or action variable: an index into that variable's domain.
using Value = std::int32_t;
inline constexpr Value kNoValue = -1;

/// Index of a variable in the topological order S_0, A_{0,0}..A_{n-1,0}, S_1, ...
using VarId = std::size_t;

/// Malformed model, query, or configuration.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evidence (an observed trajectory) has probability zero under the model.
class ZeroProbabilityEvidence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact enumeration would need more noise cells than the configured budget.
class BudgetExceeded : public std::runtime_error {
public:
    BudgetExceeded(double required, double budget)
        : std::runtime_error("cell budget exceeded: enumeration requires " + format_count(required) +
                             " cells, budget is " + format_count(budget)),
          required_(required), budget_(budget) {}

    double required() const noexcept { return required_; }
    double budget() const noexcept { return budget_; }

private:
    static std::string format_count(double n) {
        if (n < 1e15) return std::to_string(static_cast<long long>(n));
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3e", n);
        return buf;
    }

    double required_;
    double budget_;
};

/// SplitMix64 finalizer; derives independent substream seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// mt19937_64 with a fixed bits-to-double mapping, so draws are identical across
/// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1], the noise domain.
    double unit_noise() noexcept { return 1.0 - uniform(); }

    /// Uniform on (lo, hi]; the result never leaves the half-open interval.
    double in_interval(double lo, double hi) noexcept {
        double u = lo + (hi - lo) * unit_noise();
        if (u > hi) u = hi;
        if (!(u > lo)) u = std::nextafter(lo, 2.0);
        return u;
    }

    std::uint64_t next() noexcept { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    CompensatedSum& operator+=(double x) noexcept {
        add(x);
        return *this;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline constexpr double kNormalizationTolerance = 1e-9;

/// 64-bit FNV-1a hash, used for asset and output checksums.
inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ase_lab
