#pragma once

#include "cass/analysis.hpp"
#include "cass/arms.hpp"
#include "cass/augmentation.hpp"
#include "cass/data.hpp"
#include "cass/dino.hpp"
#include "cass/finetuner.hpp"
#include "cass/pretrainer.hpp"
#include "cass/run_record.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cass {

struct DatasetSpec {
    /// "synthetic" or "folder".
    std::string kind = "synthetic";
    SynthOptions synth;
    std::string root;
    int64_t load_size = 64;
    std::string label_table;
    /// Seed of the 70/10/20 split; kept apart from the run seeds so every seed sees the same split.
    uint64_t split_seed = 0;
};

struct SweepSpec {
    /// batch_size | epochs | augment_set | optimizer_cnn | head_variant | arch_pair | label_fraction
    std::string axis;
    std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
    std::string name = "experiment";
    /// cass | dino | supervised (random-init fine-tuning, no pretraining)
    std::string method = "cass";
    ArmSpec arm_a{ArmFamily::cnn, "micro_cnn"};
    ArmSpec arm_b{ArmFamily::vit, "vit_tiny_p4"};
    PretrainConfig pretrain;
    DinoConfig dino;
    FinetuneConfig finetune;
    std::vector<double> label_fractions{1.0};
    /// Which arms are fine-tuned and evaluated: any of "a", "b".
    std::vector<std::string> finetune_arms{"a", "b"};
    AugmentConfig augment;
    DatasetSpec dataset;
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    std::optional<SweepSpec> sweep;
    /// Empty: <results root>/<name>.
    std::string output_dir;
    /// Metric summarized by sweeps.
    std::string metric = "f1_macro";
    VarianceKind variance_kind = VarianceKind::sample;

    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& d);
void from_json(const nlohmann::json& j, DatasetSpec& d);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// $CASS_RESULTS_ROOT, or ./results when unset.
std::filesystem::path results_root();
std::filesystem::path resolved_output_dir(const ExperimentConfig& c);

/// Reads a JSON config (empty path: all defaults), applies "key.path=value" overrides, rejects unknown
/// keys and validates.
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Builds (and splits) the dataset the config describes.
LabeledImageDataset load_dataset(const DatasetSpec& spec);

/// One row of an aggregate: a metric over seeds for one (arm, label fraction).
struct AggregateRow {
    std::string method;
    std::string arm;
    std::string variant;
    double label_fraction = 1.0;
    std::string metric;
    std::vector<uint64_t> seeds;
    std::vector<double> values;
    double mean = 0.0;
    double halfwidth = 0.0;
};

void to_json(nlohmann::json& j, const AggregateRow& r);
void from_json(const nlohmann::json& j, AggregateRow& r);

/// Groups the metrics of successful records and attaches a 95% t-interval (halfwidth 0 for a single seed).
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);

struct RunOutcome {
    std::vector<RunRecord> records;
    std::vector<AggregateRow> aggregate;
    std::filesystem::path out_dir;
};

/// Pretraining (per method), fine-tuning per arm and label fraction, evaluation, for one seed.
/// Writes seed_<seed>/record.json. Failures are caught and recorded with status "failed".
RunRecord run_seed(const ExperimentConfig& config, uint64_t seed, const LabeledImageDataset& dataset,
                   const std::filesystem::path& out_dir);

/// Every seed, then aggregate.json written last.
RunOutcome run(const ExperimentConfig& config);

/// Copy of the config with one sweep value applied to its axis.
ExperimentConfig with_sweep_value(const ExperimentConfig& config, const std::string& axis, const nlohmann::json& value);

struct SweepCell {
    nlohmann::json value;
    RunOutcome outcome;
};

struct SweepOutcome {
    std::string axis;
    std::vector<SweepCell> cells;
    std::map<std::string, RobustnessSummary> robustness;
    std::filesystem::path out_dir;
};

/// One run per sweep value under <out>/<axis>_<value>, then sweep.json with the robustness statistic
/// computed from the mean metric at the largest label fraction.
SweepOutcome sweep(const ExperimentConfig& config);

/// Robustness grid of a finished sweep.
std::vector<GridCell> sweep_grid(const SweepOutcome& s, const std::string& metric);

struct MethodCost {
    std::string method;
    double wall_clock_seconds = 0.0;
    Counters counters;
    int64_t samples = 0;
    int64_t epochs = 0;
};

struct CostReport {
    MethodCost cass;
    MethodCost dino;
    double wall_clock_ratio = 0.0;     // cass / dino
    double augmentation_ratio = 0.0;   // cass / dino
    double forward_pass_ratio = 0.0;   // cass / dino
    /// 1 - cass / dino wall clock.
    double time_saving = 0.0;
};

void to_json(nlohmann::json& j, const CostReport& r);

/// Pretraining cost of CASS (one pair) against the DINO baseline run once per architecture of the pair,
/// on one seed. Budgets (dataset, epochs, batch size, architectures) must match.
CostReport compare_cost(const ExperimentConfig& cass_config, const ExperimentConfig& dino_config, uint64_t seed,
                        const std::filesystem::path& out_dir);

}  // namespace cass
