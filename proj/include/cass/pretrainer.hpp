#pragma once

#include "cass/arms.hpp"
#include "cass/augmentation.hpp"
#include "cass/core_loss.hpp"
#include "cass/data.hpp"
#include "cass/run_record.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

namespace cass {

enum class OptimizerKind { adam, sgd };
enum class ScheduleUnit { step, epoch };

struct SwaConfig {
    bool enabled = true;
    /// 0-based first epoch whose end-of-epoch weights are averaged; -1 selects ceil(0.75 * epochs),
    /// clamped to epochs - 1.
    int64_t start_epoch = -1;
    int64_t update_every = 1;
};

struct PretrainConfig {
    int64_t epochs = 100;
    int64_t batch_size = 16;
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    /// Cosine period, counted in optimizer steps (or epochs), restarting at lr_max.
    int64_t cosine_T = 16;
    ScheduleUnit cosine_unit = ScheduleUnit::step;
    OptimizerKind optimizer_cnn = OptimizerKind::adam;
    OptimizerKind optimizer_other = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double weight_decay = 0.0;
    double sgd_momentum = 0.9;
    SwaConfig swa;
    HeadVariant head_variant = HeadVariant::none;
    uint64_t seed = 0;
    double norm_eps = kDefaultNormEps;
    /// Abort after this many consecutive steps with loss above divergence_level.
    int64_t divergence_patience = 10;
    double divergence_level = 3.99;

    void validate() const;
    int64_t swa_start() const;
};

/// lr_min + (lr_max - lr_min) (1 + cos(pi (step mod T) / T)) / 2.
double cosine_lr(int64_t step, const PretrainConfig& cfg);

/// (n * avg + current) / (n + 1), elementwise.
torch::Tensor swa_update(const torch::Tensor& avg, const torch::Tensor& current, int64_t n);
std::vector<torch::Tensor> swa_update(const std::vector<torch::Tensor>& avg, const std::vector<torch::Tensor>& current,
                                      int64_t n);

std::unique_ptr<torch::optim::Optimizer> make_optimizer(ArmModule& arm, OptimizerKind kind, const PretrainConfig& cfg);
void set_learning_rate(torch::optim::Optimizer& opt, double lr);

struct ArmTrainState {
    std::unique_ptr<torch::optim::Optimizer> optimizer;
    std::vector<torch::Tensor> swa_average;
};

struct PretrainState {
    int64_t epoch = 0;
    int64_t global_step = 0;
    ArmTrainState arm_a;
    ArmTrainState arm_b;
    int64_t swa_snapshots = 0;
    std::vector<double> loss_history;
    Counters counters;
    int64_t high_loss_streak = 0;
};

/// Attaches one optimizer per arm (optimizer_cnn for cnn-family arms, optimizer_other otherwise).
PretrainState make_pretrain_state(ArmPair& pair, const PretrainConfig& cfg);

/// One forward per arm on the same batch, loss on head-transformed logits, backward into both arms.
/// Gradients are left in the parameters' .grad fields; returns the detached loss.
torch::Tensor compute_pair_gradients(const torch::Tensor& batch, ArmPair& pair, PretrainState& state,
                                     const PretrainConfig& cfg);
/// Sets the scheduled learning rate and steps both optimizers.
void apply_pair_updates(ArmPair& pair, PretrainState& state, const PretrainConfig& cfg);

/// compute_pair_gradients followed by apply_pair_updates, with divergence checks.
double pretrain_step(const torch::Tensor& batch, ArmPair& pair, PretrainState& state, const PretrainConfig& cfg);

/// Folds the current parameters of both arms into their running averages.
void record_swa_snapshot(ArmPair& pair, PretrainState& state);

/// Re-estimates batch-norm running statistics with a cumulative average over `images`.
/// Returns the number of forward passes spent.
int64_t refresh_batch_norm(ArmModule& arm, const std::vector<torch::Tensor>& images, int64_t batch_size);

struct PretrainHooks {
    std::function<void(int64_t epoch, const ArmPair&)> on_epoch_end;
    std::function<void(int64_t epoch, const ArmPair&)> on_swa_snapshot;
};

struct PretrainResult {
    std::filesystem::path checkpoint_a;
    std::filesystem::path checkpoint_b;
    RunRecord record;
};

/// Full pretraining run over the training split (or every sample when the dataset is unsplit).
/// Writes arm_a.pt / arm_b.pt (averaged weights when SWA is on; raw weights also kept as *_raw.pt)
/// and pretrain_record.json under out_dir.
PretrainResult pretrain(const LabeledImageDataset& dataset, ArmPair& pair, const PretrainConfig& cfg,
                        const AugmentConfig& augment, const std::filesystem::path& out_dir,
                        const PretrainHooks& hooks = {});

/// Number of optimizer steps pretrain executes: epochs * ceil(n / batch_size).
int64_t expected_steps(int64_t n, int64_t batch_size, int64_t epochs);

/// Images used for label-free pretraining.
std::vector<int64_t> pretraining_indices(const LabeledImageDataset& dataset);

}  // namespace cass
