#pragma once

#include "cass/arms.hpp"
#include "cass/augmentation.hpp"
#include "cass/data.hpp"
#include "cass/pretrainer.hpp"
#include "cass/run_record.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <vector>

namespace cass {

/// Minimal self-distillation baseline: EMA teacher, two views, centering and sharpening.
/// Epochs, batch size and learning-rate schedule come from the shared PretrainConfig.
struct DinoConfig {
    double momentum = 0.996;
    double center_momentum = 0.9;
    double student_temp = 0.1;
    double teacher_temp = 0.04;
    int64_t views_per_image = 2;

    void validate() const;
};

struct TeacherState {
    ArmHandle teacher;
    torch::Tensor center;  // (D)
};

/// teacher <- m * teacher + (1 - m) * student for every parameter tensor.
/// Adds the number of tensors touched to *copy_counter when given.
void ema_update(torch::nn::Module& teacher, const torch::nn::Module& student, double m, int64_t* copy_counter = nullptr);

/// Teacher initialized as an exact copy of the student, gradients disabled.
TeacherState make_teacher(const ArmModule& student, int64_t* copy_counter = nullptr);

/// Mean over ordered view pairs (i != j) of the batch-mean cross-entropy between
/// softmax((teacher_i - center) / teacher_temp) and log_softmax(student_j / student_temp).
torch::Tensor dino_loss(const std::vector<torch::Tensor>& student_views, const std::vector<torch::Tensor>& teacher_views,
                        const torch::Tensor& center, double student_temp, double teacher_temp);

/// center <- cm * center + (1 - cm) * batch mean of all teacher outputs.
torch::Tensor update_center(const torch::Tensor& center, const std::vector<torch::Tensor>& teacher_views,
                            double center_momentum);

struct DinoState {
    int64_t epoch = 0;
    int64_t global_step = 0;
    std::unique_ptr<torch::optim::Optimizer> optimizer;
    Counters counters;
    std::vector<double> loss_history;
};

DinoState make_dino_state(ArmModule& student, const PretrainConfig& schedule);

/// One step over `views` (each a (B, 3, S, S) augmented batch of the same images).
double dino_step(const std::vector<torch::Tensor>& views, ArmModule& student, TeacherState& teacher, DinoState& state,
                 const PretrainConfig& schedule, const DinoConfig& cfg);

struct DinoResult {
    std::filesystem::path checkpoint;
    RunRecord record;
};

/// Full baseline run for one architecture; saves the teacher as dino_<variant>.pt.
DinoResult dino_pretrain(const LabeledImageDataset& dataset, const ArmSpec& spec, const PretrainConfig& schedule,
                         const DinoConfig& cfg, const AugmentConfig& augment, const std::filesystem::path& out_dir);

}  // namespace cass
