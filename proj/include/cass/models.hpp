#pragma once

#include "cass/arms.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace cass {

/// Four conv-BN-ReLU blocks with 2x max-pooling after the first three, global average pool, linear head.
class MicroCnn : public ArmModule {
public:
    explicit MicroCnn(ArmSpec spec);

    std::vector<std::string> tap_names() const override;
    int64_t feature_dim() const override { return 64; }

protected:
    ModelOutput forward_impl(const torch::Tensor& images, const TapRequest& taps) override;
    void reset_head(int64_t out_dim) override;

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, bn4{nullptr};
    torch::nn::Linear head{nullptr};
};

class BasicBlock : public torch::nn::Module {
public:
    BasicBlock(int64_t in_ch, int64_t out_ch, int64_t stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Sequential shortcut{nullptr};
};

/// ResNet-18 layout ([2,2,2,2] basic blocks) at reduced width (16-32-64-128) with a 3x3 stem.
class ResNetLike18 : public ArmModule {
public:
    explicit ResNetLike18(ArmSpec spec);

    std::vector<std::string> tap_names() const override;
    int64_t feature_dim() const override { return 128; }

protected:
    ModelOutput forward_impl(const torch::Tensor& images, const TapRequest& taps) override;
    void reset_head(int64_t out_dim) override;

private:
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    std::vector<torch::nn::Sequential> layers;
    torch::nn::Linear head{nullptr};
};

struct VitOptions {
    int64_t patch = 4;
    int64_t width = 64;
    int64_t depth = 4;
    int64_t heads = 4;
    int64_t mlp_ratio = 2;
};

class VitBlock : public torch::nn::Module {
public:
    VitBlock(int64_t width, int64_t heads, int64_t mlp_ratio);
    /// Returns the block output; stores softmax attention (B, heads, T, T) in *attention when non-null.
    torch::Tensor forward(const torch::Tensor& x, torch::Tensor* attention);

    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};

private:
    int64_t heads_;
};

/// Pre-norm ViT with a class token and learned positional embedding; head reads the class token.
class VisionTransformer : public ArmModule {
public:
    VisionTransformer(ArmSpec spec, VitOptions options);

    std::vector<std::string> tap_names() const override;
    int64_t feature_dim() const override { return options_.width; }
    const VitOptions& options() const { return options_; }
    int64_t grid_side() const { return spec_.image_size / options_.patch; }
    int64_t token_count() const { return grid_side() * grid_side() + 1; }

    std::vector<std::shared_ptr<VitBlock>> blocks;

protected:
    ModelOutput forward_impl(const torch::Tensor& images, const TapRequest& taps) override;
    void reset_head(int64_t out_dim) override;

private:
    VitOptions options_;
    torch::nn::Conv2d patch_embed{nullptr};
    torch::Tensor cls_token, pos_embed;
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear head{nullptr};
};

/// Options behind a registered vit variant name.
VitOptions vit_options_for(const std::string& variant);

}  // namespace cass
