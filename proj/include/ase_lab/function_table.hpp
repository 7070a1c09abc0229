#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ase_lab/core.hpp"

namespace ase_lab {

/// A total ordering of a finite domain {0..n-1}: `order()[rank]` is the value at that rank.
class TotalOrder {
public:
    TotalOrder() = default;

    explicit TotalOrder(std::vector<Value> order) : order_(std::move(order)), rank_(order_.size(), -1) {
        for (std::size_t r = 0; r < order_.size(); ++r) {
            const Value v = order_[r];
            if (v < 0 || static_cast<std::size_t>(v) >= order_.size() || rank_[v] != -1)
                throw ValidationError("ordering is not a permutation of its domain");
            rank_[v] = static_cast<Value>(r);
        }
    }

    static TotalOrder identity(std::size_t n) {
        std::vector<Value> order(n);
        std::iota(order.begin(), order.end(), 0);
        return TotalOrder(std::move(order));
    }

    std::size_t size() const noexcept { return order_.size(); }
    Value at_rank(std::size_t r) const { return order_[r]; }
    std::size_t rank_of(Value v) const { return static_cast<std::size_t>(rank_[v]); }
    const std::vector<Value>& order() const noexcept { return order_; }

    bool operator==(const TotalOrder&) const = default;

private:
    std::vector<Value> order_;
    std::vector<Value> rank_;
};

/// Piecewise-constant structural functions of the noise, one row per parent
/// configuration. A row with cuts c_1 < ... < c_m = 1 maps u in (c_{k-1}, c_k]
/// to outputs[k] (c_0 = 0). Quantile rows built from a PMF and an ordering are
/// the special case where outputs increase along the ordering.
class FunctionTable {
public:
    struct Row {
        std::span<const double> cuts;
        std::span<const Value> outputs;

        std::size_t size() const noexcept { return cuts.size(); }
        double lower(std::size_t k) const noexcept { return k == 0 ? 0.0 : cuts[k - 1]; }
        double length(std::size_t k) const noexcept { return cuts[k] - lower(k); }

        /// Index of the piece containing u in (0,1].
        std::size_t piece_at(double u) const noexcept {
            const auto it = std::lower_bound(cuts.begin(), cuts.end(), u);
            const auto k = static_cast<std::size_t>(it - cuts.begin());
            return k < cuts.size() ? k : cuts.size() - 1;
        }

        Value eval(double u) const noexcept { return outputs[piece_at(u)]; }
    };

    FunctionTable() = default;

    /// Appends a row; cuts must be strictly increasing in (0,1] and end at 1.
    void add_row(std::span<const double> cuts, std::span<const Value> outputs) {
        if (cuts.empty() || cuts.size() != outputs.size())
            throw ValidationError("function row needs matching, non-empty cuts and outputs");
        double prev = 0.0;
        for (double c : cuts) {
            if (!(c > prev) || c > 1.0) throw ValidationError("function row cuts must increase within (0,1]");
            prev = c;
        }
        if (cuts.back() != 1.0) throw ValidationError("function row cuts must end at 1");
        cuts_.insert(cuts_.end(), cuts.begin(), cuts.end());
        outputs_.insert(outputs_.end(), outputs.begin(), outputs.end());
        offsets_.push_back(static_cast<std::uint32_t>(cuts_.size()));
    }

    /// Quantile row of a sparse distribution given as (value, probability) pairs.
    template <class Entries>
    void add_quantile_row_sparse(const Entries& entries, const TotalOrder& order) {
        std::vector<std::pair<std::size_t, double>> ranked;
        ranked.reserve(entries.size());
        double total = 0.0;
        for (const auto& e : entries) {
            if (e.prob <= 0.0) continue;
            ranked.emplace_back(order.rank_of(e.next), e.prob);
            total += e.prob;
        }
        if (std::fabs(total - 1.0) > kNormalizationTolerance)
            throw ValidationError("distribution sums to " + std::to_string(total));
        std::sort(ranked.begin(), ranked.end());
        std::vector<double> pmf_ranked;
        std::vector<Value> values;
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            if (k > 0 && ranked[k].first == ranked[k - 1].first) {
                pmf_ranked.back() += ranked[k].second;
                continue;
            }
            pmf_ranked.push_back(ranked[k].second);
            values.push_back(order.at_rank(ranked[k].first));
        }
        append_cumulative(pmf_ranked, values, total);
    }

    /// Appends the quantile row u -> inf{v : P(V <= v) >= u} of `pmf` under `order`.
    /// Zero-probability values get no piece. `pmf` must sum to 1 within tolerance.
    void add_quantile_row(std::span<const double> pmf, const TotalOrder& order) {
        if (pmf.size() != order.size()) throw ValidationError("distribution and ordering cover different domains");
        double total = 0.0;
        for (double p : pmf) total += p;
        if (std::fabs(total - 1.0) > kNormalizationTolerance)
            throw ValidationError("distribution sums to " + std::to_string(total));
        std::vector<double> probs;
        std::vector<Value> values;
        for (std::size_t r = 0; r < order.size(); ++r) {
            const Value v = order.at_rank(r);
            const double p = pmf[static_cast<std::size_t>(v)];
            if (p <= 0.0) continue;
            probs.push_back(p);
            values.push_back(v);
        }
        append_cumulative(probs, values, total);
    }

private:
    /// Appends the row whose pieces have the given lengths (in rank order) scaled by 1/total.
    void append_cumulative(const std::vector<double>& probs, const std::vector<Value>& values, double total) {
        std::vector<double> cuts;
        std::vector<Value> outputs(values);
        cuts.reserve(probs.size());
        double cum = 0.0;
        for (double p : probs) {
            cum += p;
            cuts.push_back(std::min(1.0, cum / total));
        }
        cuts.back() = 1.0;
        // Rounding can make neighbouring cumulative values collide; keep the later value.
        std::size_t w = 0;
        for (std::size_t k = 0; k < cuts.size(); ++k) {
            if (w > 0 && !(cuts[k] > cuts[w - 1])) {
                outputs[w - 1] = outputs[k];
                cuts[w - 1] = cuts[k];
                continue;
            }
            cuts[w] = cuts[k];
            outputs[w] = outputs[k];
            ++w;
        }
        cuts.resize(w);
        outputs.resize(w);
        add_row(cuts, outputs);
    }

public:
    std::size_t rows() const noexcept { return offsets_.size() - 1; }

    Row row(std::size_t r) const noexcept {
        const std::size_t b = offsets_[r], e = offsets_[r + 1];
        return Row{std::span<const double>(cuts_.data() + b, e - b),
                   std::span<const Value>(outputs_.data() + b, e - b)};
    }

    Value eval(std::size_t r, double u) const noexcept { return row(r).eval(u); }

    /// Implied conditional PMF of row r over a domain of the given size.
    std::vector<double> pmf(std::size_t r, std::size_t domain) const {
        std::vector<double> out(domain, 0.0);
        const Row rw = row(r);
        for (std::size_t k = 0; k < rw.size(); ++k) out[static_cast<std::size_t>(rw.outputs[k])] += rw.length(k);
        return out;
    }

    /// Probability that row r outputs v.
    double prob(std::size_t r, Value v) const noexcept {
        const Row rw = row(r);
        double p = 0.0;
        for (std::size_t k = 0; k < rw.size(); ++k)
            if (rw.outputs[k] == v) p += rw.length(k);
        return p;
    }

    void reserve(std::size_t rows, std::size_t pieces) {
        offsets_.reserve(rows + 1);
        cuts_.reserve(pieces);
        outputs_.reserve(pieces);
    }

private:
    std::vector<std::uint32_t> offsets_{0};
    std::vector<double> cuts_;
    std::vector<Value> outputs_;
};

/// True iff every row's outputs are nondecreasing in the noise under `order`.
inline bool check_noise_monotonic(const FunctionTable& table, const TotalOrder& order) {
    for (std::size_t r = 0; r < table.rows(); ++r) {
        const auto row = table.row(r);
        std::size_t prev = 0;
        bool first = true;
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (row.length(k) <= 0.0) continue;
            const auto v = row.outputs[k];
            if (v < 0 || static_cast<std::size_t>(v) >= order.size()) return false;
            const std::size_t rank = order.rank_of(v);
            if (!first && rank < prev) return false;
            prev = rank;
            first = false;
        }
    }
    return true;
}

}  // namespace ase_lab
