#include "cass/core_loss.hpp"
#include "cass/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cass;

namespace {

// Independent scalar oracle: per-row 2 - 2 cos with the eps guard, averaged.
double loss_oracle(const std::vector<std::vector<double>>& r, const std::vector<std::vector<double>>& t, double eps)
{
    double total = 0.0;
    for (size_t i = 0; i < r.size(); ++i) {
        double dot = 0.0, nr = 0.0, nt = 0.0;
        for (size_t k = 0; k < r[i].size(); ++k) {
            dot += r[i][k] * t[i][k];
            nr += r[i][k] * r[i][k];
            nt += t[i][k] * t[i][k];
        }
        total += 2.0 - 2.0 * dot / (std::max(std::sqrt(nr), eps) * std::max(std::sqrt(nt), eps));
    }
    return total / static_cast<double>(r.size());
}

std::vector<std::vector<double>> rows_of(const torch::Tensor& t)
{
    auto a = t.accessor<double, 2>();
    std::vector<std::vector<double>> out(static_cast<size_t>(t.size(0)));
    for (int64_t i = 0; i < t.size(0); ++i) {
        for (int64_t k = 0; k < t.size(1); ++k) out[static_cast<size_t>(i)].push_back(a[i][k]);
    }
    return out;
}

torch::Tensor dvec(std::initializer_list<double> v)
{
    return torch::tensor(std::vector<double>(v), torch::kFloat64);
}

}  // namespace

TEST(NormalizeEmbedding, UnitVectorUnchanged)
{
    EXPECT_TRUE(torch::allclose(normalize_embedding(dvec({1, 0, 0})), dvec({1, 0, 0})));
}

TEST(NormalizeEmbedding, ThreeFourFive)
{
    auto out = normalize_embedding(dvec({3, 4}));
    EXPECT_NEAR(out[0].item<double>(), 0.6, 1e-15);
    EXPECT_NEAR(out[1].item<double>(), 0.8, 1e-15);
}

TEST(NormalizeEmbedding, ZeroStaysZero)
{
    auto out = normalize_embedding(dvec({0, 0}));
    EXPECT_EQ(out[0].item<double>(), 0.0);
    EXPECT_EQ(out[1].item<double>(), 0.0);
}

TEST(NormalizeEmbedding, BelowEpsDividesByEps)
{
    auto out = normalize_embedding(dvec({1e-13, 0}), 1e-12);
    EXPECT_NEAR(out[0].item<double>(), 0.1, 1e-15);
}

TEST(NormalizeEmbedding, NonFiniteRejected)
{
    EXPECT_THROW(normalize_embedding(dvec({1, NAN})), InvalidInput);
    EXPECT_THROW(normalize_embedding(dvec({INFINITY, 0})), InvalidInput);
}

TEST(CassLoss, IdenticalUnitVectorsGiveZero)
{
    auto r = normalize_embedding(torch::randn({4, 8}, torch::kFloat64));
    EXPECT_NEAR(cass_loss(r, r).item<double>(), 0.0, 1e-12);
}

TEST(CassLoss, OppositeVectorsGiveFour)
{
    auto r = normalize_embedding(torch::randn({4, 8}, torch::kFloat64));
    EXPECT_NEAR(cass_loss(r, -r).item<double>(), 4.0, 1e-12);
}

TEST(CassLoss, OrthogonalPairGivesTwo)
{
    auto r = dvec({1, 0}).view({1, 2});
    auto t = dvec({0, 1}).view({1, 2});
    EXPECT_DOUBLE_EQ(cass_loss(r, t).item<double>(), 2.0);
}

TEST(CassLoss, MatchesScalarOracleOnRandomBatch)
{
    torch::manual_seed(3);
    auto r = torch::randn({4, 8}, torch::kFloat64);
    auto t = torch::randn({4, 8}, torch::kFloat64);
    EXPECT_NEAR(cass_loss(r, t).item<double>(), loss_oracle(rows_of(r), rows_of(t), kDefaultNormEps), 1e-10);
}

TEST(CassLoss, ShapeMismatchIsContractError)
{
    EXPECT_THROW(cass_loss(torch::randn({4, 8}), torch::randn({4, 7})), ContractError);
    EXPECT_THROW(cass_loss(torch::randn({3, 8}), torch::randn({4, 8})), ContractError);
}

TEST(CassLoss, EmbeddingBatchOverload)
{
    auto r = torch::randn({2, 5}, torch::kFloat64);
    auto t = torch::randn({2, 5}, torch::kFloat64);
    EmbeddingBatch er{r, ArmTag::cnn}, et{t, ArmTag::transformer};
    EXPECT_DOUBLE_EQ(cass_loss(er, et).item<double>(), cass_loss(r, t).item<double>());
}

TEST(CassLossProperty, BoundsSymmetryAndScaleInvariance)
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int64_t> bdist(1, 12), ddist(1, 32);
    std::uniform_real_distribution<double> scale(1e-3, 1e3);
    torch::manual_seed(11);
    for (int trial = 0; trial < 300; ++trial) {
        const auto b = bdist(rng), d = ddist(rng);
        auto r = torch::randn({b, d}, torch::kFloat64);
        auto t = torch::randn({b, d}, torch::kFloat64);
        const double l = cass_loss(r, t).item<double>();
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 4.0);
        EXPECT_EQ(l, cass_loss(t, r).item<double>());
        EXPECT_NEAR(cass_loss(r * scale(rng), t * scale(rng)).item<double>(), l, 1e-8);
    }
}

TEST(CassLossProperty, GradientMatchesCentralDifferences)
{
    torch::manual_seed(5);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
        auto r = torch::randn({3, 4}, torch::kFloat64).requires_grad_(true);
        auto t = torch::randn({3, 4}, torch::kFloat64).requires_grad_(true);
        cass_loss(r, t).backward();
        for (auto* which : {&r, &t}) {
            auto grad = which->grad().clone();
            auto base = which->detach().clone();
            for (int64_t i = 0; i < base.numel(); ++i) {
                auto plus = base.clone(), minus = base.clone();
                plus.view(-1)[i] += h;
                minus.view(-1)[i] -= h;
                const bool is_r = which == &r;
                const double lp = (is_r ? cass_loss(plus, t.detach()) : cass_loss(r.detach(), plus)).item<double>();
                const double lm = (is_r ? cass_loss(minus, t.detach()) : cass_loss(r.detach(), minus)).item<double>();
                const double fd = (lp - lm) / (2 * h);
                const double an = grad.view(-1)[i].item<double>();
                EXPECT_LE(std::abs(fd - an), 1e-4 * std::max(1e-6, std::abs(fd)) + 1e-9) << "entry " << i;
            }
        }
    }
}

TEST(ApplyHead, NoneIsIdentity)
{
    auto x = torch::randn({3, 4});
    EXPECT_TRUE(torch::equal(apply_head(x, HeadVariant::none), x));
}

TEST(ApplyHead, SoftmaxOfEqualLogitsIsUniform)
{
    auto out = apply_head(torch::zeros({1, 2}, torch::kFloat64), HeadVariant::softmax);
    EXPECT_DOUBLE_EQ(out[0][0].item<double>(), 0.5);
    EXPECT_DOUBLE_EQ(out[0][1].item<double>(), 0.5);
}

TEST(ApplyHead, SoftmaxRowsSumToOne)
{
    auto out = apply_head(torch::randn({6, 9}, torch::kFloat64) * 10, HeadVariant::softmax);
    EXPECT_TRUE(torch::allclose(out.sum(1), torch::ones({6}, torch::kFloat64), 0.0, 1e-9));
    EXPECT_TRUE((out > 0).all().item<bool>());
    EXPECT_TRUE((out < 1).all().item<bool>());
}

TEST(ApplyHead, SigmoidOfZeroIsHalf)
{
    auto out = apply_head(torch::zeros({1, 1}, torch::kFloat64), HeadVariant::sigmoid);
    EXPECT_DOUBLE_EQ(out[0][0].item<double>(), 0.5);
}

TEST(ApplyHead, BatchOverloadKeepsTag)
{
    EmbeddingBatch e{torch::randn({2, 3}), ArmTag::transformer};
    auto out = apply_head(e, HeadVariant::sigmoid);
    EXPECT_EQ(out.arm_tag, ArmTag::transformer);
    EXPECT_TRUE(((out.values > 0) & (out.values < 1)).all().item<bool>());
}

TEST(HeadVariantNames, RoundTripAndReject)
{
    for (auto h : {HeadVariant::none, HeadVariant::softmax, HeadVariant::sigmoid}) {
        EXPECT_EQ(parse_head_variant(to_string(h)), h);
    }
    EXPECT_THROW(parse_head_variant("tanh"), ConfigError);
}
