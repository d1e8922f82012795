#pragma once

#include "cass/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cass {

struct Counters {
    int64_t steps = 0;
    int64_t forward_passes = 0;
    int64_t augmentation_applications = 0;
    int64_t parameter_copy_ops = 0;
    /// Forward passes spent re-estimating batch-norm statistics for averaged weights.
    int64_t bn_refresh_passes = 0;
};

/// Outcome of fine-tuning one arm at one label fraction.
struct FinetuneEntry {
    std::string arm;  // "a" / "b"
    std::string variant;
    double label_fraction = 1.0;
    int64_t train_samples = 0;
    int64_t epochs_run = 0;
    int64_t best_epoch = 0;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<MetricReport> metrics;
    double wall_clock_seconds = 0.0;
    int64_t test_reads_during_training = 0;
    std::string checkpoint;
};

struct RunRecord {
    std::string run_id;
    /// cass | dino | supervised | byol | mae (the last two only for externally entered results)
    std::string method = "cass";
    uint64_t seed = 0;
    std::string status = "ok";
    std::string error;
    nlohmann::json config;
    /// Mean pretraining loss per epoch.
    std::vector<double> loss_curve;
    Counters counters;
    std::map<std::string, double> wall_clock_seconds;
    std::vector<FinetuneEntry> finetunes;
    std::map<std::string, std::string> checkpoints;
};

bool operator==(const Counters& a, const Counters& b);

void to_json(nlohmann::json& j, const Counters& c);
void from_json(const nlohmann::json& j, Counters& c);
void to_json(nlohmann::json& j, const MetricReport& m);
void from_json(const nlohmann::json& j, MetricReport& m);
void to_json(nlohmann::json& j, const FinetuneEntry& e);
void from_json(const nlohmann::json& j, FinetuneEntry& e);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

void save_record(const RunRecord& r, const std::filesystem::path& path);
RunRecord load_record(const std::filesystem::path& path);

}  // namespace cass
