#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace cass {

enum class TaskKind { multiclass, multilabel };
enum class Split : uint8_t { unassigned, train, val, test };

std::string_view to_string(Split s);

struct Sample {
    /// Float (3, H, W) in [0, 1].
    torch::Tensor image;
    /// Class index for multiclass tasks; -1 otherwise.
    int64_t label = -1;
    /// Per-class 0/1 entries for multilabel tasks.
    std::vector<uint8_t> multi_hot;
    std::string id;
    /// Split fixed by the data source (e.g. a shipped train/test partition).
    Split predefined = Split::unassigned;
};

/// Reads of the test split, for auditing that training never looks at it.
struct AccessAudit {
    std::atomic<int64_t> test_reads{0};
};

class LabeledImageDataset {
public:
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
    TaskKind task = TaskKind::multiclass;
    std::vector<Split> split_assignment;

    int64_t size() const { return static_cast<int64_t>(samples.size()); }
    int64_t num_classes() const { return static_cast<int64_t>(class_names.size()); }
    bool has_splits() const { return split_assignment.size() == samples.size(); }

    /// Sample indices of one split. Asking for Split::test is recorded in the access audit.
    std::vector<int64_t> indices(Split s) const;
    /// Per-class counts over the given indices (positives per class for multilabel).
    std::vector<int64_t> class_counts(const std::vector<int64_t>& idx) const;
    std::vector<int64_t> class_counts(Split s) const;
    /// Stratification key: the class label, or the first positive class (num_classes when none) for multilabel.
    int64_t strata_key(int64_t index) const;

    int64_t test_reads() const { return audit_->test_reads.load(); }
    void reset_audit() const { audit_->test_reads.store(0); }

    /// Throws ContractError if labels or splits are inconsistent.
    void validate() const;

private:
    std::shared_ptr<AccessAudit> audit_ = std::make_shared<AccessAudit>();
};

struct SplitSizes {
    int64_t train = 0, val = 0, test = 0;
};

/// test = round(0.2 N), val = round(0.1 N), train = N - test - val.
SplitSizes split_sizes(int64_t n);

/// Stratified 70/10/20 assignment, deterministic per seed. Honors predefined train/test partitions,
/// carving the validation split out of the predefined training part.
LabeledImageDataset split(LabeledImageDataset dataset, uint64_t seed);

struct SynthOptions {
    int64_t n = 200;
    int64_t classes = 4;
    int64_t image_size = 32;
    uint64_t structure_seed = 0;
    /// Ratio between the largest and the smallest class (1 = balanced). Counts decay geometrically.
    double imbalance_ratio = 1.0;
    bool multilabel = false;
    /// Pixel noise standard deviation.
    double noise = 0.08;
};

/// Per-class sample counts used by synth_dataset.
std::vector<int64_t> synth_class_counts(int64_t n, int64_t classes, double imbalance_ratio);

/// Procedural images whose class is carried by a shape/texture signature drawn at a random position,
/// scale and color, over a cluttered background.
LabeledImageDataset synth_dataset(const SynthOptions& options);

struct FolderOptions {
    std::filesystem::path root;
    /// Images are resized to load_size x load_size at ingestion.
    int64_t load_size = 64;
    /// Optional sidecar table (sample_id, one 0/1 column per class) for multilabel data.
    std::filesystem::path label_table;
};

/// Reads one-directory-per-class image folders. If root contains train/ and test/ subdirectories
/// they are read as a predefined partition. With a label table, images are read from root (recursively)
/// and labels come from the table.
LabeledImageDataset load_image_folder(const FolderOptions& options);

/// Stacks a list of images into a (B, 3, H, W) batch.
torch::Tensor stack_images(const std::vector<torch::Tensor>& images);

}  // namespace cass
