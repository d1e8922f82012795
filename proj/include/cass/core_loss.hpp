#pragma once

#include <torch/torch.h>

#include <string_view>

namespace cass {

enum class ArmTag { cnn, transformer };

/// Per-sample outputs of one arm, shape (B, D).
struct EmbeddingBatch {
    torch::Tensor values;
    ArmTag arm_tag = ArmTag::cnn;
};

enum class HeadVariant { none, softmax, sigmoid };

HeadVariant parse_head_variant(std::string_view name);
std::string_view to_string(HeadVariant h);

inline constexpr double kDefaultNormEps = 1e-12;

/// Row-wise L2 normalization x / max(||x||, eps). Accepts a vector (D) or a batch (B, D).
torch::Tensor normalize_embedding(const torch::Tensor& v, double eps = kDefaultNormEps);

/// Mean over the batch of 2 - 2 <F(r_i), F(t_i)>, in [0, 4]. Differentiable in both inputs.
torch::Tensor cass_loss(const torch::Tensor& r, const torch::Tensor& t, double eps = kDefaultNormEps);
torch::Tensor cass_loss(const EmbeddingBatch& r, const EmbeddingBatch& t, double eps = kDefaultNormEps);

EmbeddingBatch apply_head(const EmbeddingBatch& e, HeadVariant h);
torch::Tensor apply_head(const torch::Tensor& values, HeadVariant h);

/// Throws InvalidInput if the tensor has a NaN or infinite entry.
void require_finite(const torch::Tensor& t, std::string_view what);

}  // namespace cass
