#include "cass/core_loss.hpp"

#include "cass/errors.hpp"

#include <string>

namespace cass {

HeadVariant parse_head_variant(std::string_view name)
{
    if (name == "none") return HeadVariant::none;
    if (name == "softmax") return HeadVariant::softmax;
    if (name == "sigmoid") return HeadVariant::sigmoid;
    throw ConfigError("unknown head variant '" + std::string(name) + "'");
}

std::string_view to_string(HeadVariant h)
{
    switch (h) {
    case HeadVariant::none: return "none";
    case HeadVariant::softmax: return "softmax";
    case HeadVariant::sigmoid: return "sigmoid";
    }
    return "none";
}

void require_finite(const torch::Tensor& t, std::string_view what)
{
    if (!t.defined()) {
        throw InvalidInput(std::string(what) + ": undefined tensor");
    }
    if (t.numel() > 0 && !torch::isfinite(t).all().item<bool>()) {
        throw InvalidInput(std::string(what) + ": non-finite entries");
    }
}

torch::Tensor normalize_embedding(const torch::Tensor& v, double eps)
{
    if (!(eps > 0.0)) {
        throw InvalidInput("normalize_embedding: eps must be positive");
    }
    if (v.dim() != 1 && v.dim() != 2) {
        throw ContractError("normalize_embedding: expected a vector or a (B, D) batch");
    }
    require_finite(v, "normalize_embedding");
    auto norm = torch::linalg_vector_norm(v, 2, {-1}, /*keepdim=*/true);
    return v / norm.clamp_min(eps);
}

torch::Tensor cass_loss(const torch::Tensor& r, const torch::Tensor& t, double eps)
{
    if (r.dim() != 2 || t.dim() != 2 || r.sizes() != t.sizes()) {
        throw ContractError("cass_loss: both arms must emit identical (B, D) batches");
    }
    if (r.size(0) < 1 || r.size(1) < 1) {
        throw ContractError("cass_loss: empty batch");
    }
    auto cos = (normalize_embedding(r, eps) * normalize_embedding(t, eps)).sum(-1);
    return (2.0 - 2.0 * cos).mean();
}

torch::Tensor cass_loss(const EmbeddingBatch& r, const EmbeddingBatch& t, double eps)
{
    return cass_loss(r.values, t.values, eps);
}

torch::Tensor apply_head(const torch::Tensor& values, HeadVariant h)
{
    switch (h) {
    case HeadVariant::none: return values;
    case HeadVariant::softmax: return torch::softmax(values, -1);
    case HeadVariant::sigmoid: return torch::sigmoid(values);
    }
    return values;
}

EmbeddingBatch apply_head(const EmbeddingBatch& e, HeadVariant h)
{
    if (e.values.dim() != 2) {
        throw ContractError("apply_head: expected a (B, D) batch");
    }
    return {apply_head(e.values, h), e.arm_tag};
}

}  // namespace cass
