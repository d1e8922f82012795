#pragma once

#include <torch/torch.h>

#include <array>
#include <atomic>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cass {

using Rng = std::mt19937_64;

enum class ExtraAugment { solarize, gaussian_blur };

/// Training-time image pipeline settings. Defaults follow the published pretraining recipe,
/// except target_size which is scaled down for desk-sized runs.
struct AugmentConfig {
    std::array<int64_t, 2> target_size{32, 32};
    double jitter_or_perspective_p = 0.3;
    double perspective_distortion = 0.2;
    double jitter_or_affine_p = 0.3;
    double affine_degrees = 10.0;
    double hflip_p = 0.3;
    double vflip_p = 0.3;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double hue = 0.2;
    std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
    std::array<double, 3> norm_std{0.229, 0.224, 0.225};
    std::vector<ExtraAugment> extra;
    double solarize_p = 0.2;
    double solarize_threshold = 0.5;
    double blur_p = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    void validate() const;
    bool has_extra(ExtraAugment e) const;
};

/// Counts pipeline applications; one per image per call to apply_augmentations.
class AugmentCounter {
public:
    void add(int64_t n = 1) { applications_.fetch_add(n, std::memory_order_relaxed); }
    int64_t applications() const { return applications_.load(std::memory_order_relaxed); }
    void reset() { applications_.store(0); }

private:
    std::atomic<int64_t> applications_{0};
};

/// Converts an image to float (3, H, W) in [0, 1]. Accepts uint8 (0..255) or floating tensors,
/// channel-first or channel-last. Throws InvalidInput for anything that is not a 3-channel image.
torch::Tensor to_float_image(const torch::Tensor& image);

/// resize -> [jitter | perspective] -> [jitter | affine] -> hflip -> vflip -> [extras] -> normalize.
torch::Tensor apply_augmentations(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng,
                                  AugmentCounter* counter = nullptr);

/// Deterministic evaluation path: resize then normalize. Does not touch any counter.
torch::Tensor prepare_image(const torch::Tensor& image, const AugmentConfig& cfg);

/// Inverse of the channel normalization.
torch::Tensor denormalize(const torch::Tensor& normalized, const AugmentConfig& cfg);

struct OpDescriptor {
    std::string name;
    std::string params;
};

/// Canonical stage ordering of the configured pipeline.
std::vector<OpDescriptor> pipeline_signature(const AugmentConfig& cfg);

// Individual stages, exposed for testing. All take and return float (3, H, W) in [0, 1].
torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t height, int64_t width);
/// Multiplicative brightness/contrast/saturation factors (1 = unchanged) and a hue shift in turns.
torch::Tensor color_jitter(const torch::Tensor& image, double brightness_factor, double contrast_factor,
                           double saturation_factor, double hue_shift);
/// Destination pixel positions of the top-left, top-right, bottom-right and bottom-left corners.
torch::Tensor perspective_warp(const torch::Tensor& image, const std::array<std::array<double, 2>, 4>& dst_corners);
torch::Tensor rotate_about_center(const torch::Tensor& image, double degrees);
torch::Tensor solarize(const torch::Tensor& image, double threshold);
torch::Tensor gaussian_blur(const torch::Tensor& image, int64_t kernel_size, double sigma);
torch::Tensor normalize_channels(const torch::Tensor& image, const std::array<double, 3>& mean,
                                 const std::array<double, 3>& std);

}  // namespace cass
