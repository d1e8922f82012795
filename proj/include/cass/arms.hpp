#pragma once

#include "cass/core_loss.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace cass {

enum class ArmFamily { cnn, vit };
enum class InitKind { random, pretrained_file };
enum class PairingKind { cnn_vit, cnn_cnn, vit_vit };

std::string_view to_string(ArmFamily f);
std::string_view to_string(PairingKind p);

struct ArmSpec {
    ArmFamily family = ArmFamily::cnn;
    std::string variant = "micro_cnn";
    int64_t head_dim = 64;
    InitKind init = InitKind::random;
    /// Checkpoint to initialize from when init == pretrained_file.
    std::string init_path;
    /// Square input side the arm expects.
    int64_t image_size = 32;
    /// Filled in by build_arm.
    int64_t param_count = 0;
};

bool operator==(const ArmSpec& a, const ArmSpec& b);

struct TapRequest {
    std::vector<std::string> feature_layers;
    bool attention = false;
};

struct ModelOutput {
    EmbeddingBatch logits;
    std::vector<std::pair<std::string, torch::Tensor>> feature_maps;
    /// One (B, heads, T, T) tensor per transformer layer; empty for cnn arms.
    std::vector<torch::Tensor> attention;
};

int64_t count_parameters(const torch::nn::Module& m);

/// Common interface of every registry architecture.
class ArmModule : public torch::nn::Module {
public:
    explicit ArmModule(ArmSpec spec) : spec_(std::move(spec)) {}

    const ArmSpec& spec() const { return spec_; }
    ArmFamily family() const { return spec_.family; }

    /// Images are (B, 3, S, S) with S == spec().image_size.
    ModelOutput forward(const torch::Tensor& images, const TapRequest& taps = {});
    torch::Tensor logits(const torch::Tensor& images) { return forward(images).logits.values; }

    virtual std::vector<std::string> tap_names() const = 0;
    /// Width of the representation the head consumes.
    virtual int64_t feature_dim() const = 0;
    /// Swap the output head for a freshly initialized Linear(feature_dim, out_dim).
    void replace_head(int64_t out_dim);
    void refresh_param_count() { spec_.param_count = count_parameters(*this); }

protected:
    virtual ModelOutput forward_impl(const torch::Tensor& images, const TapRequest& taps) = 0;
    virtual void reset_head(int64_t out_dim) = 0;

    ArmSpec spec_;
};

using ArmHandle = std::shared_ptr<ArmModule>;

/// Registered variant names, in registration order.
std::vector<std::string> registry_variants();
ArmFamily registry_family(const std::string& variant);

/// Deterministic construction: (spec, seed) fixes every initial parameter bit.
ArmHandle build_arm(ArmSpec spec, uint64_t seed);

/// Fresh module with identical spec and parameter/buffer values, no shared storage.
ArmHandle clone_arm(const ArmModule& arm);

/// Flat copy of parameters keyed by stable dotted names.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& m);

struct ArmPair {
    ArmHandle arm_a;
    ArmHandle arm_b;
    PairingKind pairing_kind = PairingKind::cnn_vit;
};

PairingKind pairing_of(ArmFamily a, ArmFamily b);

/// Builds both arms from one seed (arm_b uses a derived seed). Head dims must match.
ArmPair pair_arms(const ArmSpec& a, const ArmSpec& b, uint64_t seed);

/// True if any parameter storage is reachable from both modules.
bool shares_parameters(const torch::nn::Module& a, const torch::nn::Module& b);

struct CheckpointMeta {
    ArmSpec spec;
    uint64_t seed = 0;
    int64_t epoch = 0;
    bool swa = false;
    std::string method = "cass";
};

/// One archive per arm: parameters and buffers keyed by dotted layer names plus a JSON metadata record.
void save_checkpoint(const ArmModule& arm, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedCheckpoint {
    ArmHandle arm;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Copies every tensor whose name and shape match; returns the number copied.
int64_t load_matching_tensors(ArmModule& arm, const std::filesystem::path& path);

}  // namespace cass
