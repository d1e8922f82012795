#include "cass/errors.hpp"
#include "cass/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace cass;

namespace {

struct Oracle {
    double f1 = 0.0;
    double balanced = 0.0;
};

// Brute force over an explicit confusion matrix.
Oracle confusion_oracle(const std::vector<int64_t>& pred, const std::vector<int64_t>& truth)
{
    std::map<std::pair<int64_t, int64_t>, int64_t> cm;
    std::set<int64_t> classes, truth_classes;
    for (size_t i = 0; i < pred.size(); ++i) {
        cm[{truth[i], pred[i]}] += 1;
        classes.insert(pred[i]);
        classes.insert(truth[i]);
        truth_classes.insert(truth[i]);
    }
    Oracle o;
    double f1_sum = 0.0, recall_sum = 0.0;
    for (auto c : classes) {
        int64_t tp = cm[{c, c}], fp = 0, fn = 0;
        for (auto k : classes) {
            if (k == c) continue;
            fp += cm[{k, c}];
            fn += cm[{c, k}];
        }
        f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        if (truth_classes.count(c)) recall_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    o.f1 = f1_sum / static_cast<double>(classes.size());
    o.balanced = recall_sum / static_cast<double>(truth_classes.size());
    return o;
}

}  // namespace

TEST(F1Macro, PerfectIsOne)
{
    std::vector<int64_t> y{0, 1, 2, 1, 0};
    EXPECT_DOUBLE_EQ(f1_macro(y, y).value, 1.0);
}

TEST(F1Macro, AllWrongBinaryIsZero)
{
    std::vector<int64_t> y{0, 1, 1, 0}, p{1, 0, 0, 1};
    EXPECT_DOUBLE_EQ(f1_macro(p, y).value, 0.0);
}

TEST(F1Macro, ThreeClassConfusionMatrix)
{
    // Rows are true classes, columns predictions: [[2,1,0],[0,2,0],[1,0,1]].
    std::vector<int64_t> truth{0, 0, 0, 1, 1, 2, 2};
    std::vector<int64_t> pred{0, 0, 1, 1, 1, 0, 2};
    const double expected = (4.0 / 6.0 + 4.0 / 5.0 + 2.0 / 3.0) / 3.0;
    auto r = f1_macro(pred, truth);
    EXPECT_NEAR(r.value, expected, 1e-15);
    EXPECT_NEAR(r.value, confusion_oracle(pred, truth).f1, 1e-15);
    ASSERT_EQ(r.per_class.size(), 3u);
    EXPECT_NEAR(r.per_class[1], 0.8, 1e-15);
    EXPECT_EQ(r.n_samples, 7);
}

TEST(F1Macro, EmptyOrMismatchedIsContractError)
{
    std::vector<int64_t> none, one{1};
    EXPECT_THROW(f1_macro(none, none), ContractError);
    EXPECT_THROW(f1_macro(one, none), ContractError);
}

TEST(F1Macro, MultilabelPerClassIndicators)
{
    std::vector<std::vector<uint8_t>> truth{{1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    std::vector<std::vector<uint8_t>> pred{{1, 0, 0}, {0, 1, 0}, {0, 1, 0}};
    auto r = f1_macro_multilabel(pred, truth);
    // class 0: tp1 fn1 -> 2/3; class 1: tp2 -> 1; class 2 has no positives and is excluded.
    EXPECT_NEAR(r.value, (2.0 / 3.0 + 1.0) / 2.0, 1e-15);
    EXPECT_EQ(r.excluded_classes, (std::vector<int64_t>{2}));
}

TEST(BalancedAccuracy, PerfectIsOne)
{
    std::vector<int64_t> y{0, 1, 2, 3};
    EXPECT_DOUBLE_EQ(balanced_accuracy(y, y).value, 1.0);
}

TEST(BalancedAccuracy, MajorityClassOnNinetyTenIsHalf)
{
    std::vector<int64_t> truth(100, 0);
    for (int i = 90; i < 100; ++i) truth[static_cast<size_t>(i)] = 1;
    std::vector<int64_t> pred(100, 0);
    EXPECT_DOUBLE_EQ(balanced_accuracy(pred, truth).value, 0.5);
}

TEST(BalancedAccuracy, PredictionOnlyClassExcludedAndFlagged)
{
    std::vector<int64_t> truth{0, 0, 1, 1}, pred{0, 2, 1, 1};
    auto r = balanced_accuracy(pred, truth);
    EXPECT_DOUBLE_EQ(r.value, (0.5 + 1.0) / 2.0);
    EXPECT_EQ(r.excluded_classes, (std::vector<int64_t>{2}));
}

TEST(MetricsProperty, MatchBruteForceOnRandomInstances)
{
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const auto n = std::uniform_int_distribution<int64_t>(1, 50)(rng);
        const auto k = std::uniform_int_distribution<int64_t>(2, 5)(rng);
        std::uniform_int_distribution<int64_t> cls(0, k - 1);
        std::vector<int64_t> pred, truth;
        for (int64_t i = 0; i < n; ++i) {
            pred.push_back(cls(rng));
            truth.push_back(cls(rng));
        }
        const auto oracle = confusion_oracle(pred, truth);
        const auto f1 = f1_macro(pred, truth).value;
        const auto ba = balanced_accuracy(pred, truth).value;
        EXPECT_NEAR(f1, oracle.f1, 1e-15);
        EXPECT_NEAR(ba, oracle.balanced, 1e-15);
        EXPECT_GE(f1, 0.0);
        EXPECT_LE(f1, 1.0);
        EXPECT_GE(ba, 0.0);
        EXPECT_LE(ba, 1.0);
    }
}

TEST(MetricsProperty, BinaryBalancedDataBalancedAccuracyEqualsAccuracy)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t half = std::uniform_int_distribution<int64_t>(1, 20)(rng);
        std::vector<int64_t> truth, pred;
        for (int64_t i = 0; i < 2 * half; ++i) {
            truth.push_back(i < half ? 0 : 1);
            pred.push_back(std::uniform_int_distribution<int64_t>(0, 1)(rng));
        }
        double correct = 0;
        for (size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i] ? 1 : 0;
        EXPECT_NEAR(balanced_accuracy(pred, truth).value, correct / static_cast<double>(truth.size()), 1e-15);
    }
}

TEST(Ci95, IdenticalValuesHaveZeroHalfwidth)
{
    std::vector<double> v{0.7, 0.7, 0.7};
    auto ci = ci95(v);
    EXPECT_DOUBLE_EQ(ci.mean, 0.7);
    EXPECT_DOUBLE_EQ(ci.halfwidth, 0.0);
}

TEST(Ci95, ZeroOneUsesOneDegreeOfFreedom)
{
    // t(0.975, 1) * s / sqrt(n) with s = 0.7071, n = 2.
    std::vector<double> v{0.0, 1.0};
    auto ci = ci95(v);
    EXPECT_DOUBLE_EQ(ci.mean, 0.5);
    EXPECT_NEAR(ci.halfwidth, 12.706204736432095 * std::sqrt(0.5) / std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(ci.halfwidth, 6.353, 1e-3);
}

TEST(Ci95, MatchesReferenceStatisticsPackage)
{
    // Frozen from scipy.stats.t.interval(0.95, 4, loc=mean, scale=sem).
    std::vector<double> v{0.8123, 0.7904, 0.8411, 0.8275, 0.8032};
    auto ci = ci95(v);
    EXPECT_NEAR(ci.mean, 0.8149000000000001, 1e-12);
    EXPECT_NEAR(ci.halfwidth, 0.024748547046827985, 1e-9);
}

TEST(Ci95, TooFewValuesIsContractError)
{
    std::vector<double> v{0.5};
    EXPECT_THROW(ci95(v), ContractError);
}

TEST(StudentT, QuantilesMatchReferenceTable)
{
    const std::map<int, double> table{{1, 12.706204736432095}, {2, 4.302652729696142}, {3, 3.182446305284263},
                                      {4, 2.7764451051977987}, {5, 2.570581835636314}, {9, 2.2621571628540993},
                                      {29, 2.045229642132703}};
    for (const auto& [dof, q] : table) EXPECT_NEAR(student_t_quantile(0.975, dof), q, 1e-9) << dof;
}
