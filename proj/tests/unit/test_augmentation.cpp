#include "cass/augmentation.hpp"
#include "cass/errors.hpp"

#include <gtest/gtest.h>

using namespace cass;

namespace {

AugmentConfig quiet_config()
{
    AugmentConfig cfg;
    cfg.jitter_or_perspective_p = 0.0;
    cfg.jitter_or_affine_p = 0.0;
    cfg.hflip_p = 0.0;
    cfg.vflip_p = 0.0;
    return cfg;
}

}  // namespace

TEST(Augment, AllProbabilitiesZeroIsResizeThenNormalize)
{
    torch::manual_seed(0);
    auto image = torch::rand({3, 48, 48});
    auto cfg = quiet_config();
    Rng rng(1);
    auto out = apply_augmentations(image, cfg, rng);
    auto expected = normalize_channels(resize_bilinear(image, 32, 32), cfg.norm_mean, cfg.norm_std);
    EXPECT_TRUE(torch::allclose(out, expected, 0.0, 1e-6));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 32, 32}));
}

TEST(Augment, MidGrayRedChannel)
{
    auto cfg = quiet_config();
    cfg.target_size = {8, 8};
    Rng rng(0);
    auto out = apply_augmentations(torch::full({3, 8, 8}, 0.5), cfg, rng);
    EXPECT_NEAR(out[0][0][0].item<double>(), (0.5 - 0.485) / 0.229, 1e-6);
    EXPECT_NEAR(out[0][0][0].item<double>(), 0.0655, 1e-4);
}

TEST(Augment, SameSeedBitIdentical)
{
    auto image = torch::rand({3, 40, 40});
    AugmentConfig cfg;
    cfg.extra = {ExtraAugment::solarize, ExtraAugment::gaussian_blur};
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng a(seed), b(seed);
        EXPECT_TRUE(torch::equal(apply_augmentations(image, cfg, a), apply_augmentations(image, cfg, b)));
    }
}

TEST(Augment, DifferentSeedsUsuallyDiffer)
{
    auto image = torch::rand({3, 32, 32});
    AugmentConfig cfg;
    cfg.hflip_p = 1.0;
    int differing = 0;
    Rng base(0);
    auto ref = apply_augmentations(image, cfg, base);
    for (uint64_t seed = 1; seed < 10; ++seed) {
        Rng r(seed);
        differing += torch::equal(apply_augmentations(image, cfg, r), ref) ? 0 : 1;
    }
    EXPECT_GT(differing, 0);
}

TEST(Augment, CounterIncrementsOncePerCall)
{
    AugmentConfig cfg;
    AugmentCounter counter;
    Rng rng(2);
    auto image = torch::rand({3, 32, 32});
    for (int i = 0; i < 7; ++i) apply_augmentations(image, cfg, rng, &counter);
    EXPECT_EQ(counter.applications(), 7);
    prepare_image(image, cfg);
    EXPECT_EQ(counter.applications(), 7);
}

TEST(Augment, NonRgbIsInvalidInput)
{
    AugmentConfig cfg;
    Rng rng(0);
    EXPECT_THROW(apply_augmentations(torch::rand({1, 32, 32}), cfg, rng), InvalidInput);
    EXPECT_THROW(apply_augmentations(torch::rand({4, 32, 32}), cfg, rng), InvalidInput);
    EXPECT_THROW(apply_augmentations(torch::rand({32, 32}), cfg, rng), InvalidInput);
}

TEST(Augment, EightBitInputsStayFinite)
{
    AugmentConfig cfg;
    cfg.extra = {ExtraAugment::solarize, ExtraAugment::gaussian_blur};
    cfg.jitter_or_perspective_p = cfg.jitter_or_affine_p = 1.0;
    torch::manual_seed(4);
    for (uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        auto image = torch::randint(0, 256, {40, 40, 3}, torch::kUInt8);
        auto out = apply_augmentations(image, cfg, rng);
        EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
    }
    Rng rng(0);
    EXPECT_TRUE(torch::isfinite(apply_augmentations(torch::zeros({3, 32, 32}, torch::kUInt8), cfg, rng)).all().item<bool>());
}

TEST(Augment, DenormalizeInvertsQuietPipeline)
{
    auto image = torch::rand({3, 32, 32});
    auto cfg = quiet_config();
    Rng rng(0);
    auto back = denormalize(apply_augmentations(image, cfg, rng), cfg);
    EXPECT_TRUE(torch::allclose(back, image, 0.0, 1e-6));
}

TEST(Augment, InvalidConfigRejected)
{
    AugmentConfig cfg;
    cfg.hflip_p = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = AugmentConfig{};
    cfg.norm_std[1] = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PipelineSignature, DefaultHasSixStages)
{
    auto sig = pipeline_signature(AugmentConfig{});
    ASSERT_EQ(sig.size(), 6u);
    EXPECT_EQ(sig.front().name, "resize");
    EXPECT_EQ(sig.back().name, "normalize");
}

TEST(PipelineSignature, BlurAddsOneStage)
{
    AugmentConfig cfg;
    cfg.extra = {ExtraAugment::gaussian_blur};
    EXPECT_EQ(pipeline_signature(cfg).size(), 7u);
}

TEST(PipelineSignature, BothExtrasInCanonicalOrder)
{
    AugmentConfig a, b;
    a.extra = {ExtraAugment::solarize, ExtraAugment::gaussian_blur};
    b.extra = {ExtraAugment::gaussian_blur, ExtraAugment::solarize};
    auto sa = pipeline_signature(a), sb = pipeline_signature(b);
    ASSERT_EQ(sa.size(), 8u);
    for (size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].name, sb[i].name);
    EXPECT_EQ(sa.back().name, "normalize");
}

TEST(Stages, ResizeSameSizeIsIdentity)
{
    auto image = torch::rand({3, 20, 20});
    EXPECT_TRUE(torch::equal(resize_bilinear(image, 20, 20), image));
}

TEST(Stages, NeutralJitterIsIdentity)
{
    auto image = torch::rand({3, 16, 16});
    EXPECT_TRUE(torch::allclose(color_jitter(image, 1.0, 1.0, 1.0, 0.0), image, 0.0, 1e-5));
}

TEST(Stages, IdentityPerspectiveIsIdentity)
{
    auto image = torch::rand({3, 16, 16});
    std::array<std::array<double, 2>, 4> corners{{{0, 0}, {15, 0}, {15, 15}, {0, 15}}};
    EXPECT_TRUE(torch::allclose(perspective_warp(image, corners), image, 0.0, 1e-4));
}

TEST(Stages, ZeroRotationIsIdentity)
{
    auto image = torch::rand({3, 16, 16});
    EXPECT_TRUE(torch::allclose(rotate_about_center(image, 0.0), image, 0.0, 1e-5));
}

TEST(Stages, SolarizeInvertsAboveThreshold)
{
    auto image = torch::tensor({0.2f, 0.7f}).view({1, 1, 2}).expand({3, 1, 2}).contiguous();
    auto out = solarize(image, 0.5);
    EXPECT_NEAR(out[0][0][0].item<double>(), 0.2, 1e-7);
    EXPECT_NEAR(out[0][0][1].item<double>(), 0.3, 1e-7);
}

TEST(Stages, BlurPreservesConstantImage)
{
    auto image = torch::full({3, 12, 12}, 0.4);
    EXPECT_TRUE(torch::allclose(gaussian_blur(image, 5, 1.3), image, 0.0, 1e-6));
}

TEST(Stages, OutputsStayInUnitRange)
{
    auto image = torch::rand({3, 24, 24});
    auto j = color_jitter(image, 1.2, 0.8, 1.2, 0.1);
    EXPECT_GE(j.min().item<double>(), 0.0);
    EXPECT_LE(j.max().item<double>(), 1.0);
}
