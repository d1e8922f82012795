#include "cass/analysis.hpp"
#include "cass/errors.hpp"
#include "cass/models.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <random>

using namespace cass;
using cass::testing::cnn_spec;
using cass::testing::same_parameters;
using cass::testing::TempDir;
using cass::testing::vit_spec;

namespace {

std::shared_ptr<VisionTransformer> flat_attention_vit()
{
    VitOptions o;
    o.patch = 8;
    o.width = 16;
    o.depth = 1;
    o.heads = 1;
    auto vit = std::make_shared<VisionTransformer>(vit_spec(8), o);
    torch::NoGradGuard no_grad;
    for (auto& b : vit->blocks) {
        b->qkv->weight.zero_();
        b->qkv->bias.zero_();
    }
    return vit;
}

using Mat = std::array<std::array<double, 4>, 4>;

Mat residual_rownorm(const Mat& a)
{
    Mat m{};
    for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 4; ++j) {
            m[i][j] = 0.5 * a[i][j] + (i == j ? 0.5 : 0.0);
            row += m[i][j];
        }
        for (int j = 0; j < 4; ++j) m[i][j] /= row;
    }
    return m;
}

Mat matmul(const Mat& a, const Mat& b)
{
    Mat c{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

torch::Tensor to_tensor(const Mat& m)
{
    auto t = torch::empty({4, 4}, torch::kFloat64);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) t[i][j] = m[i][j];
    return t;
}

}  // namespace

TEST(FeatureMaps, ShapeOfFirstConvolution)
{
    auto arm = build_arm(cnn_spec(), 0);
    auto dumps = extract_feature_maps(*arm, torch::rand({3, 32, 32}), {"conv1"}, "ckpt.pt", "img0");
    ASSERT_EQ(dumps.size(), 1u);
    EXPECT_EQ(dumps[0].tensor.sizes(), (std::vector<int64_t>{16, 32, 32}));
    EXPECT_EQ(dumps[0].layer_id, "conv1");
    EXPECT_EQ(dumps[0].source_checkpoint, "ckpt.pt");
    EXPECT_EQ(dumps[0].image_id, "img0");
}

TEST(FeatureMaps, ZeroImageAndZeroBiasGiveZeros)
{
    auto arm = build_arm(cnn_spec(), 0);
    {
        torch::NoGradGuard no_grad;
        arm->named_parameters()["conv1.bias"].zero_();
    }
    auto dumps = extract_feature_maps(*arm, torch::zeros({3, 32, 32}), {"conv1"});
    EXPECT_EQ(dumps[0].tensor.abs().max().item<float>(), 0.0F);
}

TEST(FeatureMaps, DeterministicAndObservationOnly)
{
    auto arm = build_arm(cnn_spec(), 3);
    arm->train(true);
    auto before = clone_arm(*arm);
    auto image = torch::rand({3, 32, 32});
    auto a = extract_feature_maps(*arm, image, {"conv1", "block2", "block4"});
    auto b = extract_feature_maps(*arm, image, {"conv1", "block2", "block4"});
    ASSERT_EQ(a.size(), 3u);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i].tensor, b[i].tensor));
    EXPECT_TRUE(arm->is_training());
    EXPECT_TRUE(same_parameters(*arm, *before));
    auto ba = arm->buffers();
    auto bb = before->buffers();
    ASSERT_EQ(ba.size(), bb.size());
    for (size_t i = 0; i < ba.size(); ++i) EXPECT_TRUE(torch::equal(ba[i], bb[i]));
}

TEST(FeatureMaps, UnknownLayerAndTransformerAreContractErrors)
{
    auto cnn = build_arm(cnn_spec(), 0);
    EXPECT_THROW(extract_feature_maps(*cnn, torch::rand({3, 32, 32}), {"nope"}), ContractError);
    EXPECT_THROW(extract_feature_maps(*cnn, torch::rand({3, 32, 32}), {}), ContractError);
    auto vit = build_arm(vit_spec(), 0);
    EXPECT_THROW(extract_feature_maps(*vit, torch::rand({3, 32, 32}), {"block1"}), ContractError);
}

TEST(Attention, RowsSumToOne)
{
    auto vit = build_arm(vit_spec(), 1);
    auto layers = head_mean_attention(*vit, torch::rand({3, 32, 32}));
    ASSERT_FALSE(layers.empty());
    for (const auto& a : layers) {
        EXPECT_LT((a.sum(-1) - 1.0).abs().max().item<double>(), 1e-6);
    }
}

TEST(Attention, CnnArmIsContractError)
{
    auto cnn = build_arm(cnn_spec(), 0);
    EXPECT_THROW(attention_map(*cnn, torch::rand({3, 32, 32})), ContractError);
}

TEST(Attention, UniformAttentionGivesFlatMap)
{
    auto vit = flat_attention_vit();
    auto layers = head_mean_attention(*vit, torch::rand({3, 32, 32}));
    ASSERT_EQ(layers.size(), 1u);
    EXPECT_LT((layers[0] - 1.0 / 17.0).abs().max().item<double>(), 1e-6);
    for (auto agg : {AttentionAggregation::last_layer_cls, AttentionAggregation::rollout}) {
        auto map = attention_map(*vit, torch::rand({3, 32, 32}), agg);
        EXPECT_EQ(map.sizes(), (std::vector<int64_t>{32, 32}));
        EXPECT_LT(map.max().item<float>() - map.min().item<float>(), 1e-6F);
    }
}

TEST(Attention, MapIsNormalizedToUnitRange)
{
    auto vit = build_arm(vit_spec(), 4);
    auto map = attention_map(*vit, torch::rand({3, 32, 32}), AttentionAggregation::rollout);
    EXPECT_EQ(map.sizes(), (std::vector<int64_t>{32, 32}));
    EXPECT_NEAR(map.min().item<float>(), 0.0F, 1e-6F);
    EXPECT_NEAR(map.max().item<float>(), 1.0F, 1e-6F);
}

TEST(Attention, RolloutMatchesHandProduct)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Mat a1{}, a2{};
    for (auto* a : {&a1, &a2}) {
        for (auto& row : *a) {
            double s = 0.0;
            for (auto& v : row) s += (v = u(rng));
            for (auto& v : row) v /= s;
        }
    }
    const Mat expected = matmul(residual_rownorm(a2), residual_rownorm(a1));
    auto got = attention_rollout({to_tensor(a1), to_tensor(a2)});
    EXPECT_LT((got - to_tensor(expected)).abs().max().item<double>(), 1e-12);
    EXPECT_LT((got.sum(-1) - 1.0).abs().max().item<double>(), 1e-12);
}

TEST(Attention, RolloutOfIdentityIsIdentity)
{
    auto eye = torch::eye(5, torch::kFloat64);
    EXPECT_TRUE(torch::allclose(attention_rollout({eye, eye, eye}), eye));
}

TEST(MinMax, ConstantGridIsZero)
{
    EXPECT_EQ(minmax_normalize(torch::full({4, 4}, 0.3)).abs().max().item<float>(), 0.0F);
}

TEST(AverageMaps, ElementwiseMeanAndCount)
{
    auto a = torch::zeros({2, 2}, torch::kFloat64);
    auto b = torch::tensor({0.0, 1.0, 2.0, 4.0}, torch::kFloat64).view({2, 2});
    auto avg = average_maps({a, b}, "rollout");
    EXPECT_EQ(avg.n_samples, 2);
    EXPECT_EQ(avg.aggregation, "rollout");
    EXPECT_TRUE(torch::allclose(avg.mean, b / 2));
    EXPECT_TRUE(torch::allclose(avg.map, b / 4));
    EXPECT_THROW(average_maps({a, torch::zeros({3, 3})}), ContractError);
    EXPECT_THROW(average_maps({}), ContractError);
}

TEST(AverageMaps, IdenticalMapsAreFixedPoint)
{
    auto m = minmax_normalize(torch::rand({8, 8}, torch::kFloat64));
    EXPECT_TRUE(torch::allclose(average_maps({m, m, m}).map, m));
}

TEST(Robustness, ConstantMetricHasZeroVariance)
{
    std::vector<GridCell> grid;
    for (std::string arch : {"cnn", "vit"})
        for (std::string v : {"16", "32", "64"}) grid.push_back({"cass", arch, v, 0.8});
    EXPECT_EQ(robustness_variance(grid).at("cass").mean_variance, 0.0);
}

TEST(Robustness, PopulationAndSampleVariance)
{
    std::vector<GridCell> grid{{"cass", "cnn", "a", 0.8}, {"cass", "cnn", "b", 0.9}};
    EXPECT_NEAR(robustness_variance(grid, VarianceKind::population).at("cass").mean_variance, 0.0025, 1e-15);
    EXPECT_NEAR(robustness_variance(grid, VarianceKind::sample).at("cass").mean_variance, 0.005, 1e-15);
}

TEST(Robustness, MeanOverArchitecturesAndPermutationInvariance)
{
    std::vector<GridCell> grid{{"cass", "cnn", "50", 0.8521},  {"cass", "cnn", "100", 0.8650},
                               {"cass", "cnn", "200", 0.8766}, {"cass", "vit", "50", 0.8765},
                               {"cass", "vit", "100", 0.8894}, {"cass", "vit", "200", 0.9053},
                               {"dino", "cnn", "50", 0.7},     {"dino", "cnn", "100", 0.71},
                               {"dino", "cnn", "200", 0.72},   {"dino", "vit", "50", 0.6},
                               {"dino", "vit", "100", 0.6},    {"dino", "vit", "200", 0.6}};
    auto res = robustness_variance(grid);
    const double cnn = variance({0.8521, 0.8650, 0.8766}, VarianceKind::sample);
    const double vit = variance({0.8765, 0.8894, 0.9053}, VarianceKind::sample);
    EXPECT_NEAR(res.at("cass").mean_variance, 0.5 * (cnn + vit), 1e-15);
    EXPECT_NEAR(res.at("cass").per_arch_variance.at("cnn"), cnn, 1e-15);
    EXPECT_NEAR(res.at("dino").mean_variance, 0.5 * 1e-4, 1e-15);
    std::mt19937_64 rng(0);
    for (int k = 0; k < 10; ++k) {
        std::shuffle(grid.begin(), grid.end(), rng);
        EXPECT_NEAR(robustness_variance(grid).at("cass").mean_variance, res.at("cass").mean_variance, 1e-15);
    }
}

TEST(Robustness, MissingCellIsNamed)
{
    std::vector<GridCell> grid{{"cass", "cnn", "a", 0.8}, {"cass", "cnn", "b", 0.9}, {"cass", "vit", "a", 0.7}};
    try {
        robustness_variance(grid);
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("(cass, vit, b)"), std::string::npos) << e.what();
    }
}

TEST(Robustness, SingleSweepValueAndDuplicatesAreErrors)
{
    EXPECT_THROW(robustness_variance({{"cass", "cnn", "a", 0.8}}), ContractError);
    EXPECT_THROW(robustness_variance({{"cass", "cnn", "a", 0.8}, {"cass", "cnn", "a", 0.9}}), ContractError);
}

TEST(Npy, RoundTrip)
{
    TempDir dir("npy");
    auto t = torch::rand({16, 8, 8});
    write_npy(dir / "x.npy", t);
    auto back = read_npy(dir / "x.npy");
    EXPECT_TRUE(torch::equal(back, t));
}

TEST(Heatmap, WritesImageFiles)
{
    TempDir dir("heat");
    render_heatmap(dir / "h.png", torch::rand({8, 8}), 4);
    EXPECT_GT(std::filesystem::file_size(dir / "h.png"), 0u);
    auto arm = build_arm(cnn_spec(), 0);
    auto paths = save_feature_dumps(extract_feature_maps(*arm, torch::rand({3, 32, 32}), {"conv1"}, "", "img"), dir.path());
    EXPECT_EQ(paths.size(), 2u);
    for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p));
}
