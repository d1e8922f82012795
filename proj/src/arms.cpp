#include "cass/arms.hpp"

#include "cass/errors.hpp"
#include "cass/json_io.hpp"
#include "cass/models.hpp"

#include <mutex>
#include <set>
#include <unordered_set>

namespace cass {
namespace {

struct RegistryEntry {
    const char* variant;
    ArmFamily family;
};

constexpr RegistryEntry kRegistry[] = {
    {"micro_cnn", ArmFamily::cnn},
    {"resnet_like_18", ArmFamily::cnn},
    {"vit_tiny_p4", ArmFamily::vit},
    {"vit_tiny_p8", ArmFamily::vit},
    {"vit_micro_p4", ArmFamily::vit},
};

// torch initializers draw from the global generator.
std::mutex& init_mutex()
{
    static std::mutex m;
    return m;
}

ArmHandle construct(const ArmSpec& spec)
{
    if (spec.variant == "micro_cnn") return std::make_shared<MicroCnn>(spec);
    if (spec.variant == "resnet_like_18") return std::make_shared<ResNetLike18>(spec);
    return std::make_shared<VisionTransformer>(spec, vit_options_for(spec.variant));
}

constexpr const char* kParamPrefix = "param:";
constexpr const char* kBufferPrefix = "buffer:";

}  // namespace

std::string_view to_string(ArmFamily f)
{
    return f == ArmFamily::cnn ? "cnn" : "vit";
}

std::string_view to_string(PairingKind p)
{
    switch (p) {
    case PairingKind::cnn_vit: return "cnn_vit";
    case PairingKind::cnn_cnn: return "cnn_cnn";
    case PairingKind::vit_vit: return "vit_vit";
    }
    return "cnn_vit";
}

bool operator==(const ArmSpec& a, const ArmSpec& b)
{
    return a.family == b.family && a.variant == b.variant && a.head_dim == b.head_dim && a.init == b.init &&
           a.init_path == b.init_path && a.image_size == b.image_size;
}

ModelOutput ArmModule::forward(const torch::Tensor& images, const TapRequest& taps)
{
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != spec_.image_size ||
        images.size(3) != spec_.image_size) {
        throw ContractError("arm '" + spec_.variant + "' expects (B, 3, " + std::to_string(spec_.image_size) + ", " +
                            std::to_string(spec_.image_size) + ") input");
    }
    if (taps.attention && spec_.family != ArmFamily::vit) {
        throw ContractError("attention taps are only available on vit arms");
    }
    const auto names = tap_names();
    for (const auto& layer : taps.feature_layers) {
        if (std::find(names.begin(), names.end(), layer) == names.end()) {
            throw ContractError("arm '" + spec_.variant + "' has no layer '" + layer + "'");
        }
    }
    return forward_impl(images, taps);
}

void ArmModule::replace_head(int64_t out_dim)
{
    if (out_dim < 1) {
        throw ContractError("replace_head: output dimension must be positive");
    }
    reset_head(out_dim);
    spec_.head_dim = out_dim;
    refresh_param_count();
}

std::vector<std::string> registry_variants()
{
    std::vector<std::string> names;
    for (const auto& e : kRegistry) {
        names.emplace_back(e.variant);
    }
    return names;
}

ArmFamily registry_family(const std::string& variant)
{
    for (const auto& e : kRegistry) {
        if (variant == e.variant) {
            return e.family;
        }
    }
    throw RegistryError("unknown arm variant '" + variant + "'");
}

int64_t count_parameters(const torch::nn::Module& m)
{
    int64_t n = 0;
    for (const auto& p : m.parameters()) {
        n += p.numel();
    }
    return n;
}

ArmHandle build_arm(ArmSpec spec, uint64_t seed)
{
    if (registry_family(spec.variant) != spec.family) {
        throw RegistryError("variant '" + spec.variant + "' is not in family " + std::string(to_string(spec.family)));
    }
    if (spec.head_dim < 1) {
        throw ConfigError("head_dim must be positive");
    }
    if (spec.image_size < 8) {
        throw ConfigError("image_size must be at least 8");
    }
    ArmHandle arm;
    {
        std::lock_guard lock(init_mutex());
        torch::manual_seed(seed);
        arm = construct(spec);
    }
    if (spec.init == InitKind::pretrained_file) {
        if (spec.init_path.empty()) {
            throw ConfigError("init=pretrained_file requires init_path");
        }
        load_matching_tensors(*arm, spec.init_path);
    }
    arm->refresh_param_count();
    return arm;
}

ArmHandle clone_arm(const ArmModule& arm)
{
    auto spec = arm.spec();
    spec.init = InitKind::random;
    ArmHandle copy = construct(spec);
    torch::NoGradGuard no_grad;
    auto dst_params = copy->named_parameters(true);
    for (const auto& p : arm.named_parameters(true)) {
        dst_params[p.key()].copy_(p.value());
    }
    auto dst_buffers = copy->named_buffers(true);
    for (const auto& b : arm.named_buffers(true)) {
        dst_buffers[b.key()].copy_(b.value());
    }
    copy->train(arm.is_training());
    return copy;
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& m)
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : m.named_parameters(true)) {
        out.emplace_back(p.key(), p.value().detach().clone());
    }
    return out;
}

PairingKind pairing_of(ArmFamily a, ArmFamily b)
{
    if (a == ArmFamily::cnn && b == ArmFamily::cnn) return PairingKind::cnn_cnn;
    if (a == ArmFamily::vit && b == ArmFamily::vit) return PairingKind::vit_vit;
    return PairingKind::cnn_vit;
}

ArmPair pair_arms(const ArmSpec& a, const ArmSpec& b, uint64_t seed)
{
    if (a.head_dim != b.head_dim) {
        throw ContractError("pair_arms: head_dim mismatch (" + std::to_string(a.head_dim) + " vs " +
                            std::to_string(b.head_dim) + ")");
    }
    if (a.image_size != b.image_size) {
        throw ContractError("pair_arms: both arms must consume the same image size");
    }
    ArmPair pair;
    pair.arm_a = build_arm(a, seed);
    pair.arm_b = build_arm(b, seed * 2654435761ULL + 1);
    pair.pairing_kind = pairing_of(a.family, b.family);
    return pair;
}

bool shares_parameters(const torch::nn::Module& a, const torch::nn::Module& b)
{
    std::unordered_set<const void*> seen;
    for (const auto& p : a.parameters()) {
        seen.insert(p.storage().data());
        seen.insert(p.unsafeGetTensorImpl());
    }
    for (const auto& p : b.parameters()) {
        if (seen.count(p.storage().data()) || seen.count(p.unsafeGetTensorImpl())) {
            return true;
        }
    }
    return false;
}

void save_checkpoint(const ArmModule& arm, const CheckpointMeta& meta, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    torch::serialize::OutputArchive archive;
    for (const auto& p : arm.named_parameters(true)) {
        archive.write(kParamPrefix + p.key(), p.value().detach(), /*is_buffer=*/false);
    }
    for (const auto& b : arm.named_buffers(true)) {
        archive.write(kBufferPrefix + b.key(), b.value(), /*is_buffer=*/true);
    }
    nlohmann::json j = meta;
    archive.write("meta", c10::IValue(j.dump()));
    archive.save_to(path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw ConfigError("checkpoint not found: " + path.string());
    }
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue meta_value;
    if (!archive.try_read("meta", meta_value)) {
        throw ConfigError("checkpoint has no metadata record: " + path.string());
    }
    return nlohmann::json::parse(meta_value.toStringRef()).get<CheckpointMeta>();
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    auto meta = read_checkpoint_meta(path);
    auto spec = meta.spec;
    spec.init = InitKind::random;
    ArmHandle arm;
    {
        std::lock_guard lock(init_mutex());
        arm = construct(spec);
    }
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::NoGradGuard no_grad;
    for (auto& p : arm->named_parameters(true)) {
        torch::Tensor t;
        if (!archive.try_read(kParamPrefix + p.key(), t, false)) {
            throw ConfigError("checkpoint " + path.string() + " lacks parameter '" + p.key() + "'");
        }
        if (t.sizes() != p.value().sizes()) {
            throw ContractError("checkpoint shape mismatch for '" + p.key() + "'");
        }
        p.value().copy_(t);
    }
    for (auto& b : arm->named_buffers(true)) {
        torch::Tensor t;
        if (archive.try_read(kBufferPrefix + b.key(), t, true)) {
            b.value().copy_(t);
        }
    }
    arm->refresh_param_count();
    meta.spec = arm->spec();
    return {arm, meta};
}

int64_t load_matching_tensors(ArmModule& arm, const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw ConfigError("initialization checkpoint not found: " + path.string());
    }
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::NoGradGuard no_grad;
    int64_t copied = 0;
    for (auto& p : arm.named_parameters(true)) {
        torch::Tensor t;
        if (archive.try_read(kParamPrefix + p.key(), t, false) && t.sizes() == p.value().sizes()) {
            p.value().copy_(t);
            ++copied;
        }
    }
    for (auto& b : arm.named_buffers(true)) {
        torch::Tensor t;
        if (archive.try_read(kBufferPrefix + b.key(), t, true) && t.sizes() == b.value().sizes()) {
            b.value().copy_(t);
            ++copied;
        }
    }
    return copied;
}

}  // namespace cass
