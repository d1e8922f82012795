#include "cass/augmentation.hpp"

#include "cass/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace cass {
namespace {

namespace F = torch::nn::functional;

double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool fires(Rng& rng, double p)
{
    return uniform(rng, 0.0, 1.0) < p;
}

/// Samples `image` at source pixel coordinates (src_x, src_y), each (H, W); outside -> 0.
torch::Tensor sample_at(const torch::Tensor& image, const torch::Tensor& src_x, const torch::Tensor& src_y)
{
    const auto h = image.size(1);
    const auto w = image.size(2);
    auto gx = (2.0 * src_x + 1.0) / static_cast<double>(w) - 1.0;
    auto gy = (2.0 * src_y + 1.0) / static_cast<double>(h) - 1.0;
    auto grid = torch::stack({gx, gy}, -1).unsqueeze(0).to(image.scalar_type());
    auto out = F::grid_sample(image.unsqueeze(0), grid,
                              F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
    return out.squeeze(0);
}

std::pair<torch::Tensor, torch::Tensor> pixel_grid(int64_t h, int64_t w)
{
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto ys = torch::arange(h, opts);
    auto xs = torch::arange(w, opts);
    auto mesh = torch::meshgrid({ys, xs}, "ij");
    return {mesh[1], mesh[0]};
}

torch::Tensor grayscale(const torch::Tensor& image)
{
    return (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]).unsqueeze(0);
}

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb)
{
    auto r = rgb[0], g = rgb[1], b = rgb[2];
    auto maxc = std::get<0>(rgb.max(0));
    auto minc = std::get<0>(rgb.min(0));
    auto delta = maxc - minc;
    auto v = maxc;
    auto s = torch::where(maxc > 0, delta / maxc.clamp_min(1e-12), torch::zeros_like(maxc));
    auto safe = delta.clamp_min(1e-12);
    auto rc = (maxc - r) / safe;
    auto gc = (maxc - g) / safe;
    auto bc = (maxc - b) / safe;
    auto h = torch::where(maxc == r, bc - gc, torch::where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc));
    h = torch::where(delta > 0, torch::remainder(h / 6.0, 1.0), torch::zeros_like(h));
    return torch::stack({h, s, v});
}

torch::Tensor hsv_to_rgb(const torch::Tensor& hsv)
{
    auto h = hsv[0], s = hsv[1], v = hsv[2];
    auto i = torch::floor(h * 6.0);
    auto f = h * 6.0 - i;
    auto p = v * (1.0 - s);
    auto q = v * (1.0 - s * f);
    auto t = v * (1.0 - s * (1.0 - f));
    auto sector = torch::remainder(i, 6.0);
    auto pick = [&](const torch::Tensor& a0, const torch::Tensor& a1, const torch::Tensor& a2, const torch::Tensor& a3,
                    const torch::Tensor& a4, const torch::Tensor& a5) {
        return torch::where(sector == 0, a0,
               torch::where(sector == 1, a1,
               torch::where(sector == 2, a2,
               torch::where(sector == 3, a3, torch::where(sector == 4, a4, a5)))));
    };
    return torch::stack({pick(v, q, p, p, t, v), pick(t, v, v, q, p, p), pick(p, p, t, v, v, q)});
}

/// Homography H (3x3) with H * [x, y, 1] ~ [u, v, 1] for the four point pairs (x, y) -> (u, v).
torch::Tensor solve_homography(const std::array<std::array<double, 2>, 4>& from,
                               const std::array<std::array<double, 2>, 4>& to)
{
    auto a = torch::zeros({8, 8}, torch::kFloat64);
    auto rhs = torch::zeros({8}, torch::kFloat64);
    auto A = a.accessor<double, 2>();
    auto B = rhs.accessor<double, 1>();
    for (int i = 0; i < 4; ++i) {
        const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
        const double row0[8] = {x, y, 1, 0, 0, 0, -u * x, -u * y};
        const double row1[8] = {0, 0, 0, x, y, 1, -v * x, -v * y};
        for (int j = 0; j < 8; ++j) {
            A[2 * i][j] = row0[j];
            A[2 * i + 1][j] = row1[j];
        }
        B[2 * i] = u;
        B[2 * i + 1] = v;
    }
    auto coeffs = torch::linalg_solve(a, rhs);
    return torch::cat({coeffs, torch::ones({1}, torch::kFloat64)}).reshape({3, 3});
}

std::string fmt(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

void AugmentConfig::validate() const
{
    for (double p : {jitter_or_perspective_p, jitter_or_affine_p, hflip_p, vflip_p, solarize_p, blur_p}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("augment: probabilities must lie in [0, 1]");
        }
    }
    for (double s : norm_std) {
        if (!(s > 0.0)) {
            throw ConfigError("augment: norm_std entries must be positive");
        }
    }
    if (target_size[0] < 1 || target_size[1] < 1) {
        throw ConfigError("augment: target_size must be positive");
    }
    if (!(perspective_distortion >= 0.0 && perspective_distortion <= 1.0)) {
        throw ConfigError("augment: perspective_distortion must lie in [0, 1]");
    }
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
        throw ConfigError("augment: invalid blur sigma range");
    }
}

bool AugmentConfig::has_extra(ExtraAugment e) const
{
    return std::find(extra.begin(), extra.end(), e) != extra.end();
}

torch::Tensor to_float_image(const torch::Tensor& image)
{
    if (!image.defined() || image.dim() != 3) {
        throw InvalidInput("expected a 3-dimensional RGB image");
    }
    torch::Tensor chw;
    if (image.size(0) == 3) {
        chw = image;
    } else if (image.size(2) == 3) {
        chw = image.permute({2, 0, 1});
    } else {
        throw InvalidInput("expected 3 color channels, got shape " + c10::str(image.sizes()));
    }
    if (chw.size(1) < 1 || chw.size(2) < 1) {
        throw InvalidInput("empty image");
    }
    torch::Tensor out;
    if (chw.scalar_type() == torch::kUInt8) {
        out = chw.to(torch::kFloat32) / 255.0;
    } else if (at::isFloatingType(chw.scalar_type())) {
        out = chw.to(torch::kFloat32);
        if (!torch::isfinite(out).all().item<bool>()) {
            throw InvalidInput("image has non-finite pixels");
        }
    } else {
        throw InvalidInput("unsupported image dtype");
    }
    return out.contiguous();
}

torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t height, int64_t width)
{
    if (image.size(1) == height && image.size(2) == width) {
        return image;
    }
    const bool shrinking = height < image.size(1) || width < image.size(2);
    return F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{height, width})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(false)
                                                  .antialias(shrinking))
        .squeeze(0)
        .clamp(0.0, 1.0);
}

torch::Tensor color_jitter(const torch::Tensor& image, double brightness_factor, double contrast_factor,
                           double saturation_factor, double hue_shift)
{
    auto x = (image * brightness_factor).clamp(0.0, 1.0);
    auto mean = grayscale(x).mean();
    x = ((x - mean) * contrast_factor + mean).clamp(0.0, 1.0);
    auto gray = grayscale(x);
    x = ((x - gray) * saturation_factor + gray).clamp(0.0, 1.0);
    if (hue_shift != 0.0) {
        auto hsv = rgb_to_hsv(x);
        hsv[0] = torch::remainder(hsv[0] + hue_shift, 1.0);
        x = hsv_to_rgb(hsv).clamp(0.0, 1.0);
    }
    return x;
}

torch::Tensor perspective_warp(const torch::Tensor& image, const std::array<std::array<double, 2>, 4>& dst_corners)
{
    const double w = static_cast<double>(image.size(2));
    const double h = static_cast<double>(image.size(1));
    const std::array<std::array<double, 2>, 4> src{{{0, 0}, {w - 1, 0}, {w - 1, h - 1}, {0, h - 1}}};
    // Output pixel -> source pixel.
    auto hom = solve_homography(dst_corners, src);
    auto [ox, oy] = pixel_grid(image.size(1), image.size(2));
    auto H = hom.accessor<double, 2>();
    auto den = H[2][0] * ox + H[2][1] * oy + H[2][2];
    auto sx = (H[0][0] * ox + H[0][1] * oy + H[0][2]) / den;
    auto sy = (H[1][0] * ox + H[1][1] * oy + H[1][2]) / den;
    return sample_at(image, sx, sy);
}

torch::Tensor rotate_about_center(const torch::Tensor& image, double degrees)
{
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cx = (static_cast<double>(image.size(2)) - 1.0) / 2.0;
    const double cy = (static_cast<double>(image.size(1)) - 1.0) / 2.0;
    auto [ox, oy] = pixel_grid(image.size(1), image.size(2));
    auto dx = ox - cx;
    auto dy = oy - cy;
    // Inverse rotation maps each output pixel back to its source.
    auto sx = c * dx + s * dy + cx;
    auto sy = -s * dx + c * dy + cy;
    return sample_at(image, sx, sy);
}

torch::Tensor solarize(const torch::Tensor& image, double threshold)
{
    return torch::where(image >= threshold, 1.0 - image, image);
}

torch::Tensor gaussian_blur(const torch::Tensor& image, int64_t kernel_size, double sigma)
{
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ContractError("gaussian_blur: kernel size must be odd and positive");
    }
    const int64_t half = kernel_size / 2;
    auto xs = torch::arange(-half, half + 1, torch::kFloat64);
    auto k = torch::exp(-(xs * xs) / (2.0 * sigma * sigma));
    k = (k / k.sum()).to(image.scalar_type());
    const int64_t pad_h = std::min<int64_t>(half, image.size(1) - 1);
    const int64_t pad_w = std::min<int64_t>(half, image.size(2) - 1);
    auto x = image.unsqueeze(1);  // (3, 1, H, W): channels as batch
    if (pad_h == half && pad_w == half) {
        x = F::pad(x, F::PadFuncOptions({half, half, half, half}).mode(torch::kReflect));
    } else {
        x = F::pad(x, F::PadFuncOptions({half, half, half, half}).mode(torch::kReplicate));
    }
    x = F::conv2d(x, k.view({1, 1, 1, kernel_size}));
    x = F::conv2d(x, k.view({1, 1, kernel_size, 1}));
    return x.squeeze(1);
}

torch::Tensor normalize_channels(const torch::Tensor& image, const std::array<double, 3>& mean,
                                 const std::array<double, 3>& std)
{
    auto m = torch::tensor({mean[0], mean[1], mean[2]}, torch::kFloat64).view({3, 1, 1}).to(image.scalar_type());
    auto s = torch::tensor({std[0], std[1], std[2]}, torch::kFloat64).view({3, 1, 1}).to(image.scalar_type());
    return (image - m) / s;
}

torch::Tensor denormalize(const torch::Tensor& normalized, const AugmentConfig& cfg)
{
    auto m = torch::tensor({cfg.norm_mean[0], cfg.norm_mean[1], cfg.norm_mean[2]}, torch::kFloat64).view({3, 1, 1});
    auto s = torch::tensor({cfg.norm_std[0], cfg.norm_std[1], cfg.norm_std[2]}, torch::kFloat64).view({3, 1, 1});
    return normalized * s.to(normalized.scalar_type()) + m.to(normalized.scalar_type());
}

torch::Tensor prepare_image(const torch::Tensor& image, const AugmentConfig& cfg)
{
    auto x = resize_bilinear(to_float_image(image), cfg.target_size[0], cfg.target_size[1]);
    return normalize_channels(x, cfg.norm_mean, cfg.norm_std);
}

torch::Tensor apply_augmentations(const torch::Tensor& image, const AugmentConfig& cfg, Rng& rng,
                                  AugmentCounter* counter)
{
    auto x = resize_bilinear(to_float_image(image), cfg.target_size[0], cfg.target_size[1]);

    auto jitter = [&](const torch::Tensor& in) {
        const double b = uniform(rng, std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness);
        const double c = uniform(rng, std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast);
        const double s = uniform(rng, std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation);
        const double h = uniform(rng, -std::min(cfg.hue, 0.5), std::min(cfg.hue, 0.5));
        return color_jitter(in, b, c, s, h);
    };

    if (fires(rng, cfg.jitter_or_perspective_p)) {
        if (fires(rng, 0.5)) {
            x = jitter(x);
        } else {
            const double w = static_cast<double>(x.size(2)), h = static_cast<double>(x.size(1));
            const double dx = cfg.perspective_distortion * (w / 2.0);
            const double dy = cfg.perspective_distortion * (h / 2.0);
            std::array<std::array<double, 2>, 4> corners{{
                {uniform(rng, 0, dx), uniform(rng, 0, dy)},
                {w - 1 - uniform(rng, 0, dx), uniform(rng, 0, dy)},
                {w - 1 - uniform(rng, 0, dx), h - 1 - uniform(rng, 0, dy)},
                {uniform(rng, 0, dx), h - 1 - uniform(rng, 0, dy)},
            }};
            x = perspective_warp(x, corners);
        }
    }
    if (fires(rng, cfg.jitter_or_affine_p)) {
        if (fires(rng, 0.5)) {
            x = jitter(x);
        } else {
            x = rotate_about_center(x, uniform(rng, -cfg.affine_degrees, cfg.affine_degrees));
        }
    }
    if (fires(rng, cfg.hflip_p)) {
        x = x.flip({2});
    }
    if (fires(rng, cfg.vflip_p)) {
        x = x.flip({1});
    }
    if (cfg.has_extra(ExtraAugment::solarize) && fires(rng, cfg.solarize_p)) {
        x = solarize(x, cfg.solarize_threshold);
    }
    if (cfg.has_extra(ExtraAugment::gaussian_blur) && fires(rng, cfg.blur_p)) {
        const auto side = std::min(x.size(1), x.size(2));
        int64_t k = std::max<int64_t>(3, std::llround(0.05 * static_cast<double>(side)));
        if (k % 2 == 0) ++k;
        x = gaussian_blur(x, k, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    if (counter != nullptr) {
        counter->add(1);
    }
    return normalize_channels(x, cfg.norm_mean, cfg.norm_std).contiguous();
}

std::vector<OpDescriptor> pipeline_signature(const AugmentConfig& cfg)
{
    std::vector<OpDescriptor> ops;
    ops.push_back({"resize", "bilinear " + std::to_string(cfg.target_size[0]) + "x" + std::to_string(cfg.target_size[1])});
    ops.push_back({"jitter|perspective", "p=" + fmt(cfg.jitter_or_perspective_p) + " distortion=" +
                                             fmt(cfg.perspective_distortion)});
    ops.push_back({"jitter|affine", "p=" + fmt(cfg.jitter_or_affine_p) + " degrees=" + fmt(cfg.affine_degrees)});
    ops.push_back({"hflip", "p=" + fmt(cfg.hflip_p)});
    ops.push_back({"vflip", "p=" + fmt(cfg.vflip_p)});
    if (cfg.has_extra(ExtraAugment::solarize)) {
        ops.push_back({"solarize", "p=" + fmt(cfg.solarize_p) + " threshold=" + fmt(cfg.solarize_threshold)});
    }
    if (cfg.has_extra(ExtraAugment::gaussian_blur)) {
        ops.push_back({"gaussian_blur", "p=" + fmt(cfg.blur_p) + " sigma=[" + fmt(cfg.blur_sigma_min) + "," +
                                            fmt(cfg.blur_sigma_max) + "]"});
    }
    ops.push_back({"normalize", "mean=(" + fmt(cfg.norm_mean[0]) + "," + fmt(cfg.norm_mean[1]) + "," +
                                    fmt(cfg.norm_mean[2]) + ") std=(" + fmt(cfg.norm_std[0]) + "," +
                                    fmt(cfg.norm_std[1]) + "," + fmt(cfg.norm_std[2]) + ")"});
    return ops;
}

}  // namespace cass
