#pragma once

#include "cass/arms.hpp"
#include "cass/augmentation.hpp"
#include "cass/core_loss.hpp"
#include "cass/data.hpp"
#include "cass/errors.hpp"
#include "cass/dino.hpp"
#include "cass/finetuner.hpp"
#include "cass/pretrainer.hpp"

#include <json.hpp>

#include <string>

// Enum <-> string mapping; unknown names are a ConfigError instead of a silent default.
#define CASS_JSON_ENUM(E, ...)                                                             \
    inline void to_json(nlohmann::json& j, const E& e)                                    \
    {                                                                                      \
        static const std::pair<E, const char*> names[] = __VA_ARGS__;                      \
        for (const auto& [value, name] : names) {                                          \
            if (value == e) {                                                              \
                j = name;                                                                  \
                return;                                                                    \
            }                                                                              \
        }                                                                                  \
        throw ContractError("unnamed " #E " value");                                      \
    }                                                                                      \
    inline void from_json(const nlohmann::json& j, E& e)                                  \
    {                                                                                      \
        static const std::pair<E, const char*> names[] = __VA_ARGS__;                      \
        if (j.is_string()) {                                                               \
            for (const auto& [value, name] : names) {                                      \
                if (j.get_ref<const std::string&>() == name) {                            \
                    e = value;                                                             \
                    return;                                                                \
                }                                                                          \
            }                                                                              \
        }                                                                                  \
        throw ConfigError("invalid " #E " value " + j.dump());                            \
    }

namespace cass {

CASS_JSON_ENUM(ArmFamily, {{ArmFamily::cnn, "cnn"}, {ArmFamily::vit, "vit"}})
CASS_JSON_ENUM(InitKind, {{InitKind::random, "random"}, {InitKind::pretrained_file, "pretrained_file"}})
CASS_JSON_ENUM(HeadVariant,
                             {{HeadVariant::none, "none"}, {HeadVariant::softmax, "softmax"}, {HeadVariant::sigmoid, "sigmoid"}})
CASS_JSON_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}})
CASS_JSON_ENUM(ScheduleUnit, {{ScheduleUnit::step, "step"}, {ScheduleUnit::epoch, "epoch"}})
CASS_JSON_ENUM(ExtraAugment,
                             {{ExtraAugment::solarize, "solarize"}, {ExtraAugment::gaussian_blur, "gaussian_blur"}})
CASS_JSON_ENUM(WeightMode,
                             {{WeightMode::minmax_literal, "minmax_literal"}, {WeightMode::minmax_inverse, "minmax_inverse"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArmSpec, family, variant, head_dim, init, init_path, image_size,
                                                param_count)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CheckpointMeta, spec, seed, epoch, swa, method)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, target_size, jitter_or_perspective_p,
                                                perspective_distortion, jitter_or_affine_p, affine_degrees, hflip_p,
                                                vflip_p, brightness, contrast, saturation, hue, norm_mean, norm_std, extra,
                                                solarize_p, solarize_threshold, blur_p, blur_sigma_min, blur_sigma_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SwaConfig, enabled, start_epoch, update_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PretrainConfig, epochs, batch_size, lr_max, lr_min, cosine_T,
                                                cosine_unit, optimizer_cnn, optimizer_other, adam_beta1, adam_beta2,
                                                weight_decay, sgd_momentum, swa, head_variant, seed, norm_eps,
                                                divergence_patience, divergence_level)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DinoConfig, momentum, center_momentum, student_temp, teacher_temp,
                                                views_per_image)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FinetuneConfig, label_fraction, max_epochs, patience, lr, batch_size,
                                                focal_gamma, focal_alpha, weight_mode, multilabel_threshold,
                                                augment_training, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthOptions, n, classes, image_size, structure_seed, imbalance_ratio,
                                                multilabel, noise)

/// Throws ConfigError naming the first key of `given` (recursively, for objects) absent from `reference`.
void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where = "");

/// Applies "dotted.key=value" to a JSON document. The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace cass
