#include "cass/models.hpp"

#include "cass/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cass {
namespace {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1, bool bias = true)
{
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(bias));
}

bool wants(const TapRequest& taps, const std::string& name)
{
    return std::find(taps.feature_layers.begin(), taps.feature_layers.end(), name) != taps.feature_layers.end();
}

void tap(ModelOutput& out, const TapRequest& taps, const std::string& name, const torch::Tensor& t)
{
    if (wants(taps, name)) {
        out.feature_maps.emplace_back(name, t.detach().clone());
    }
}

}  // namespace

// --- MicroCnn ---------------------------------------------------------------

MicroCnn::MicroCnn(ArmSpec spec) : ArmModule(std::move(spec))
{
    conv1 = register_module("conv1", conv3x3(3, 16));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(16));
    conv2 = register_module("conv2", conv3x3(16, 32));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(32));
    conv3 = register_module("conv3", conv3x3(32, 64));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(64));
    conv4 = register_module("conv4", conv3x3(64, 64));
    bn4 = register_module("bn4", torch::nn::BatchNorm2d(64));
    head = register_module("head", torch::nn::Linear(64, spec_.head_dim));
}

std::vector<std::string> MicroCnn::tap_names() const
{
    return {"conv1", "block1", "block2", "block3", "block4"};
}

ModelOutput MicroCnn::forward_impl(const torch::Tensor& images, const TapRequest& taps)
{
    ModelOutput out;
    auto x = conv1->forward(images);
    tap(out, taps, "conv1", x);
    x = torch::relu(bn1->forward(x));
    tap(out, taps, "block1", x);
    x = torch::max_pool2d(x, 2);
    x = torch::relu(bn2->forward(conv2->forward(x)));
    tap(out, taps, "block2", x);
    x = torch::max_pool2d(x, 2);
    x = torch::relu(bn3->forward(conv3->forward(x)));
    tap(out, taps, "block3", x);
    x = torch::max_pool2d(x, 2);
    x = torch::relu(bn4->forward(conv4->forward(x)));
    tap(out, taps, "block4", x);
    x = x.mean({2, 3});
    out.logits = {head->forward(x), ArmTag::cnn};
    return out;
}

void MicroCnn::reset_head(int64_t out_dim)
{
    head = replace_module("head", torch::nn::Linear(64, out_dim));
}

// --- ResNetLike18 -------------------------------------------------------------

BasicBlock::BasicBlock(int64_t in_ch, int64_t out_ch, int64_t stride)
{
    conv1 = register_module("conv1", conv3x3(in_ch, out_ch, stride, false));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_ch));
    conv2 = register_module("conv2", conv3x3(out_ch, out_ch, 1, false));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_ch));
    shortcut = torch::nn::Sequential();
    if (stride != 1 || in_ch != out_ch) {
        shortcut->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1).stride(stride).bias(false)));
        shortcut->push_back(torch::nn::BatchNorm2d(out_ch));
    }
    register_module("shortcut", shortcut);
}

torch::Tensor BasicBlock::forward(const torch::Tensor& x)
{
    auto y = torch::relu(bn1->forward(conv1->forward(x)));
    y = bn2->forward(conv2->forward(y));
    auto skip = shortcut->is_empty() ? x : shortcut->forward(x);
    return torch::relu(y + skip);
}

ResNetLike18::ResNetLike18(ArmSpec spec) : ArmModule(std::move(spec))
{
    conv1 = register_module("conv1", conv3x3(3, 16, 1, false));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(16));
    const int64_t widths[] = {16, 32, 64, 128};
    int64_t in_ch = 16;
    for (int i = 0; i < 4; ++i) {
        torch::nn::Sequential layer;
        const int64_t stride = i == 0 ? 1 : 2;
        layer->push_back(BasicBlock(in_ch, widths[i], stride));
        layer->push_back(BasicBlock(widths[i], widths[i], 1));
        in_ch = widths[i];
        layers.push_back(register_module("layer" + std::to_string(i + 1), layer));
    }
    head = register_module("head", torch::nn::Linear(128, spec_.head_dim));
}

std::vector<std::string> ResNetLike18::tap_names() const
{
    return {"conv1", "layer1", "layer2", "layer3", "layer4"};
}

ModelOutput ResNetLike18::forward_impl(const torch::Tensor& images, const TapRequest& taps)
{
    ModelOutput out;
    auto x = conv1->forward(images);
    tap(out, taps, "conv1", x);
    x = torch::relu(bn1->forward(x));
    for (size_t i = 0; i < layers.size(); ++i) {
        x = layers[i]->forward(x);
        tap(out, taps, "layer" + std::to_string(i + 1), x);
    }
    x = x.mean({2, 3});
    out.logits = {head->forward(x), ArmTag::cnn};
    return out;
}

void ResNetLike18::reset_head(int64_t out_dim)
{
    head = replace_module("head", torch::nn::Linear(128, out_dim));
}

// --- VisionTransformer --------------------------------------------------------

VitBlock::VitBlock(int64_t width, int64_t heads, int64_t mlp_ratio) : heads_(heads)
{
    if (width % heads != 0) {
        throw ConfigError("vit: width must be divisible by heads");
    }
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    qkv = register_module("qkv", torch::nn::Linear(width, 3 * width));
    proj = register_module("proj", torch::nn::Linear(width, width));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    fc1 = register_module("fc1", torch::nn::Linear(width, mlp_ratio * width));
    fc2 = register_module("fc2", torch::nn::Linear(mlp_ratio * width, width));
}

torch::Tensor VitBlock::forward(const torch::Tensor& x, torch::Tensor* attention)
{
    const auto batch = x.size(0);
    const auto tokens = x.size(1);
    const auto width = x.size(2);
    const auto head_dim = width / heads_;

    auto qkv_out = qkv->forward(ln1->forward(x))
                       .reshape({batch, tokens, 3, heads_, head_dim})
                       .permute({2, 0, 3, 1, 4});
    auto q = qkv_out[0];
    auto k = qkv_out[1];
    auto v = qkv_out[2];
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
    if (attention != nullptr) {
        *attention = attn.detach().clone();
    }
    auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({batch, tokens, width});
    auto y = x + proj->forward(mixed);
    return y + fc2->forward(F::gelu(fc1->forward(ln2->forward(y))));
}

VisionTransformer::VisionTransformer(ArmSpec spec, VitOptions options)
    : ArmModule(std::move(spec)), options_(options)
{
    if (spec_.image_size % options_.patch != 0) {
        throw ConfigError("vit: image size must be a multiple of the patch size");
    }
    patch_embed = register_module(
        "patch_embed",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, options_.width, options_.patch).stride(options_.patch)));
    cls_token = register_parameter("cls_token", torch::randn({1, 1, options_.width}) * 0.02);
    pos_embed = register_parameter("pos_embed", torch::randn({1, token_count(), options_.width}) * 0.02);
    for (int64_t i = 0; i < options_.depth; ++i) {
        blocks.push_back(register_module("blocks_" + std::to_string(i),
                                         std::make_shared<VitBlock>(options_.width, options_.heads, options_.mlp_ratio)));
    }
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({options_.width})));
    head = register_module("head", torch::nn::Linear(options_.width, spec_.head_dim));
}

std::vector<std::string> VisionTransformer::tap_names() const
{
    std::vector<std::string> names{"patch_embed"};
    for (int64_t i = 0; i < options_.depth; ++i) {
        names.push_back("block" + std::to_string(i + 1));
    }
    return names;
}

ModelOutput VisionTransformer::forward_impl(const torch::Tensor& images, const TapRequest& taps)
{
    ModelOutput out;
    auto patches = patch_embed->forward(images);
    tap(out, taps, "patch_embed", patches);
    auto x = patches.flatten(2).transpose(1, 2);
    x = torch::cat({cls_token.expand({x.size(0), 1, options_.width}), x}, 1) + pos_embed;
    for (size_t i = 0; i < blocks.size(); ++i) {
        torch::Tensor attn;
        x = blocks[i]->forward(x, taps.attention ? &attn : nullptr);
        if (taps.attention) {
            out.attention.push_back(attn);
        }
        tap(out, taps, "block" + std::to_string(i + 1), x);
    }
    auto cls = norm->forward(x.select(1, 0));
    out.logits = {head->forward(cls), ArmTag::transformer};
    return out;
}

void VisionTransformer::reset_head(int64_t out_dim)
{
    head = replace_module("head", torch::nn::Linear(options_.width, out_dim));
}

VitOptions vit_options_for(const std::string& variant)
{
    if (variant == "vit_tiny_p4") {
        return VitOptions{};
    }
    if (variant == "vit_tiny_p8") {
        return VitOptions{.patch = 8, .width = 64, .depth = 4, .heads = 4, .mlp_ratio = 2};
    }
    if (variant == "vit_micro_p4") {
        return VitOptions{.patch = 4, .width = 32, .depth = 2, .heads = 2, .mlp_ratio = 2};
    }
    throw RegistryError("unknown vit variant '" + variant + "'");
}

}  // namespace cass
