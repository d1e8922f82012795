#pragma once

#include "cass/arms.hpp"
#include "cass/augmentation.hpp"
#include "cass/data.hpp"
#include "cass/metrics.hpp"
#include "cass/run_record.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <vector>

namespace cass {

enum class WeightMode { minmax_literal, minmax_inverse };

struct FinetuneConfig {
    double label_fraction = 1.0;
    int64_t max_epochs = 50;
    int64_t patience = 5;
    double lr = 3e-4;
    int64_t batch_size = 16;
    double focal_gamma = 2.0;
    double focal_alpha = 1.0;
    WeightMode weight_mode = WeightMode::minmax_literal;
    /// Multilabel decision threshold on sigmoid outputs.
    double multilabel_threshold = 0.5;
    bool augment_training = true;
    uint64_t seed = 0;

    void validate() const;
};

struct ClassWeights {
    std::vector<double> weights;
};

/// Literal: (n_c - min) / (max - min). Inverse: literal applied to (max + min - n_c).
/// All-equal counts give all ones.
ClassWeights class_weights(const std::vector<int64_t>& counts, WeightMode mode);

/// Multiclass: mean over the batch of -alpha * w_y * (1 - p_y)^gamma * log p_y with p = softmax(logits).
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, const ClassWeights& w, double gamma,
                         double alpha);

/// Multilabel: per-class sigmoid focal terms weighted by w_c, averaged over every (sample, class) entry.
torch::Tensor focal_loss_multilabel(const torch::Tensor& logits, const torch::Tensor& targets, const ClassWeights& w,
                                    double gamma, double alpha);

/// Stratified label subset of size round(fraction * N), deterministic per seed.
/// Each stratum keeps floor(fraction * n_k) samples; leftover slots go to the largest remainders.
std::vector<int64_t> subset_labels(const LabeledImageDataset& dataset, const std::vector<int64_t>& train_indices,
                                   double fraction, uint64_t seed);

/// Tracks validation loss; signals a stop once `patience` epochs pass without improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(int64_t patience);

    /// Records one epoch; returns true when training should stop after it.
    bool update(double val_loss);

    int64_t epochs_seen() const { return epochs_; }
    /// 1-based epoch of the best validation loss.
    int64_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    bool improved_last() const { return improved_last_; }

private:
    int64_t patience_;
    int64_t epochs_ = 0;
    int64_t best_epoch_ = 0;
    int64_t stale_ = 0;
    double best_ = 0.0;
    bool improved_last_ = false;
};

struct FinetuneResult {
    ArmHandle model;
    FinetuneEntry entry;
    std::vector<int64_t> subset;
};

/// End-to-end fine-tuning: head resized to the class count, every parameter trainable, Adam with a
/// single cosine anneal from lr to 0 over max_epochs, early stopping on validation loss, best
/// weights restored, then one evaluation on the test split.
FinetuneResult finetune(ArmHandle model, const LabeledImageDataset& dataset, const FinetuneConfig& cfg,
                        const AugmentConfig& augment);
FinetuneResult finetune(const std::filesystem::path& checkpoint, const LabeledImageDataset& dataset,
                        const FinetuneConfig& cfg, const AugmentConfig& augment);

/// Metrics of `model` on the given samples (f1_macro, plus balanced_accuracy for multiclass tasks).
std::vector<MetricReport> evaluate(ArmModule& model, const LabeledImageDataset& dataset,
                                   const std::vector<int64_t>& indices, const AugmentConfig& augment,
                                   double multilabel_threshold = 0.5);

/// Loss of the model under the focal objective over the given samples (no augmentation, eval mode).
double evaluate_loss(ArmModule& model, const LabeledImageDataset& dataset, const std::vector<int64_t>& indices,
                     const AugmentConfig& augment, const ClassWeights& weights, const FinetuneConfig& cfg);

}  // namespace cass
