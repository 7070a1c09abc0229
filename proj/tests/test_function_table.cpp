#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "ase_lab/function_table.hpp"
#include "fixtures.hpp"

using namespace ase_lab;

namespace {

/// Independent quantile: scan values in rank order, return the first whose
/// cumulative probability reaches u.
Value scan_quantile(const std::vector<double>& pmf, const TotalOrder& order, double u) {
    double cum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const Value v = order.at_rank(r);
        cum += pmf[v];
        if (pmf[v] > 0.0 && cum >= u) return v;
    }
    for (std::size_t r = order.size(); r-- > 0;)
        if (pmf[order.at_rank(r)] > 0.0) return order.at_rank(r);
    return kNoValue;
}

}  // namespace

TEST(TotalOrder, RejectsNonPermutation) {
    EXPECT_THROW(TotalOrder({0, 0, 1}), ValidationError);
    EXPECT_THROW(TotalOrder({0, 3, 1}), ValidationError);
    const TotalOrder o({2, 0, 1});
    EXPECT_EQ(o.rank_of(2), 0u);
    EXPECT_EQ(o.at_rank(2), 1);
}

TEST(FunctionTable, QuantileRowUpDownStraight) {
    FunctionTable t;
    const std::vector<double> pmf{0.2, 0.5, 0.3};
    t.add_quantile_row(pmf, TotalOrder::identity(3));
    const auto row = t.row(0);
    ASSERT_EQ(row.size(), 3u);
    EXPECT_EQ(t.eval(0, 0.1), 0);
    EXPECT_EQ(t.eval(0, 0.2), 0);
    EXPECT_EQ(t.eval(0, 0.200001), 1);
    EXPECT_EQ(t.eval(0, 0.7), 1);
    EXPECT_EQ(t.eval(0, 0.700001), 2);
    EXPECT_EQ(t.eval(0, 1.0), 2);
}

TEST(FunctionTable, DeterministicRowIsConstant) {
    FunctionTable t;
    const std::vector<double> pmf{0.0, 1.0, 0.0};
    t.add_quantile_row(pmf, TotalOrder({2, 1, 0}));
    ASSERT_EQ(t.row(0).size(), 1u);
    for (double u : {1e-12, 0.3, 0.999, 1.0}) EXPECT_EQ(t.eval(0, u), 1);
}

TEST(FunctionTable, BinaryQuantileMatchesScan) {
    FunctionTable t;
    const std::vector<double> pmf{0.3, 0.7};
    const auto order = TotalOrder::identity(2);
    t.add_quantile_row(pmf, order);
    EXPECT_EQ(t.eval(0, 0.95), scan_quantile(pmf, order, 0.95));
    EXPECT_EQ(t.eval(0, 0.95), 1);
}

TEST(FunctionTable, RandomRowsMatchScanAndReproducePmf) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t n = 1 + rep % 6;
        const auto pmf = fixtures::random_pmf(gen, n);
        const auto order = fixtures::random_order(gen, n);
        FunctionTable t;
        t.add_quantile_row(pmf, order);
        const auto implied = t.pmf(0, n);
        for (std::size_t v = 0; v < n; ++v) EXPECT_NEAR(implied[v], pmf[v], 1e-12);
        EXPECT_TRUE(check_noise_monotonic(t, order));
        for (int k = 0; k < 50; ++k) {
            const double u = 1.0 - U(gen);
            EXPECT_EQ(t.eval(0, u), scan_quantile(pmf, order, u)) << "u=" << u;
        }
    }
}

TEST(FunctionTable, SparseAndDenseRowsAgree) {
    struct Entry {
        Value next;
        double prob;
    };
    const std::vector<Entry> sparse{{2, 0.5}, {0, 0.25}, {1, 0.25}};
    const std::vector<double> dense{0.25, 0.25, 0.5};
    const TotalOrder order({1, 2, 0});
    FunctionTable a, b;
    a.add_quantile_row_sparse(sparse, order);
    b.add_quantile_row(dense, order);
    ASSERT_EQ(a.row(0).size(), b.row(0).size());
    for (std::size_t k = 0; k < a.row(0).size(); ++k) {
        EXPECT_EQ(a.row(0).cuts[k], b.row(0).cuts[k]);
        EXPECT_EQ(a.row(0).outputs[k], b.row(0).outputs[k]);
    }
}

TEST(FunctionTable, RejectsBadRows) {
    FunctionTable t;
    const std::vector<double> short_pmf{0.2, 0.5};
    EXPECT_THROW(t.add_quantile_row(short_pmf, TotalOrder::identity(2)), ValidationError);
    const std::vector<double> cuts{0.5, 0.4, 1.0};
    const std::vector<Value> outs{0, 1, 2};
    EXPECT_THROW(t.add_row(cuts, outs), ValidationError);
    const std::vector<double> open_end{0.5, 0.9};
    const std::vector<Value> outs2{0, 1};
    EXPECT_THROW(t.add_row(open_end, outs2), ValidationError);
}

TEST(NoiseMonotonic, ReversedOrderingFails) {
    FunctionTable t;
    const std::vector<double> pmf{0.2, 0.5, 0.3};
    t.add_quantile_row(pmf, TotalOrder::identity(3));
    EXPECT_TRUE(check_noise_monotonic(t, TotalOrder::identity(3)));
    EXPECT_FALSE(check_noise_monotonic(t, TotalOrder({2, 1, 0})));
}

TEST(NoiseMonotonic, CounterexampleFailsBothOrderings) {
    // f(X=0) = (1,0,0), f(X=1) = (1,0,1) over three equiprobable noise values.
    FunctionTable t;
    const std::vector<double> cuts{1.0 / 3, 2.0 / 3, 1.0};
    const std::vector<Value> x0{1, 0, 0}, x1{1, 0, 1};
    t.add_row(cuts, x0);
    t.add_row(cuts, x1);
    EXPECT_FALSE(check_noise_monotonic(t, TotalOrder({0, 1})));
    EXPECT_FALSE(check_noise_monotonic(t, TotalOrder({1, 0})));
}
