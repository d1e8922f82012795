#pragma once

#include "cass/arms.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cass {

struct FeatureMapDump {
    std::string layer_id;
    /// (channels, H, W)
    torch::Tensor tensor;
    std::string source_checkpoint;
    std::string image_id;
};

/// Activations of the named layers for one (3, S, S) image. Runs in eval mode under no-grad and
/// leaves the model's parameters, buffers and training flag as they were.
std::vector<FeatureMapDump> extract_feature_maps(ArmModule& model, const torch::Tensor& image,
                                                 const std::vector<std::string>& layer_ids,
                                                 const std::string& source_checkpoint = {},
                                                 const std::string& image_id = {});

enum class AttentionAggregation { last_layer_cls, rollout };

AttentionAggregation parse_attention_aggregation(const std::string& s);
std::string_view to_string(AttentionAggregation a);

/// Per-layer attention of one image with heads averaged: a list of (T, T) row-stochastic matrices.
std::vector<torch::Tensor> head_mean_attention(ArmModule& model, const torch::Tensor& image);

/// Residual-mixed product over layers: R = prod_l rownorm(0.5 A_l + 0.5 I), last layer leftmost.
torch::Tensor attention_rollout(const std::vector<torch::Tensor>& layers);

/// Min-max rescale to [0, 1]. A constant grid maps to all zeros.
torch::Tensor minmax_normalize(const torch::Tensor& grid);

/// Class-token attention over patch tokens, reshaped to the patch grid, bilinearly upsampled to the
/// image side and min-max normalized. (S, S) result.
torch::Tensor attention_map(ArmModule& vit_model, const torch::Tensor& image,
                            AttentionAggregation aggregation = AttentionAggregation::last_layer_cls);

struct AttentionAverage {
    /// Normalized elementwise mean.
    torch::Tensor map;
    /// Elementwise mean before renormalization.
    torch::Tensor mean;
    int64_t n_samples = 0;
    std::string aggregation;
};

AttentionAverage average_maps(const std::vector<torch::Tensor>& maps, const std::string& aggregation = {});

enum class VarianceKind { sample, population };

/// One final metric of the grid, indexed by (method, architecture, sweep value).
struct GridCell {
    std::string method;
    std::string arch;
    std::string sweep_value;
    double metric = 0.0;
};

struct RobustnessSummary {
    double mean_variance = 0.0;
    std::map<std::string, double> per_arch_variance;
};

/// Variance of the metric across sweep values for each (method, arch), then the mean over architectures.
/// Every (method, arch) must cover the same sweep values (at least two); gaps are reported in a ContractError.
std::map<std::string, RobustnessSummary> robustness_variance(const std::vector<GridCell>& grid,
                                                             VarianceKind kind = VarianceKind::sample);

double variance(const std::vector<double>& values, VarianceKind kind);

/// float32 little-endian .npy (format 1.0, C order).
void write_npy(const std::filesystem::path& path, const torch::Tensor& t);
torch::Tensor read_npy(const std::filesystem::path& path);

/// Grayscale PNG of a 2-D grid in [0, 1], each cell drawn as scale x scale pixels.
void render_heatmap(const std::filesystem::path& path, const torch::Tensor& grid, int scale = 4);

/// Writes <stem>.npy and <stem>.png (channel-mean heatmap) for each dump; returns the written paths.
std::vector<std::filesystem::path> save_feature_dumps(const std::vector<FeatureMapDump>& dumps,
                                                      const std::filesystem::path& dir);

}  // namespace cass
