#include "cass/errors.hpp"
#include "cass/experiment.hpp"
#include "cass/json_io.hpp"
#include "cass/report.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

using namespace cass;
using cass::testing::TempDir;

namespace {

ExperimentConfig tiny_config(const std::filesystem::path& out)
{
    ExperimentConfig c;
    c.name = "tiny";
    c.arm_a = ArmSpec{ArmFamily::cnn, "micro_cnn", 16};
    c.arm_b = ArmSpec{ArmFamily::vit, "vit_micro_p4", 16};
    c.dataset.synth.n = 40;
    c.dataset.synth.classes = 2;
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 8;
    c.finetune.max_epochs = 3;
    c.finetune.patience = 2;
    c.label_fractions = {0.5, 1.0};
    c.finetune_arms = {"a"};
    c.seeds = {0, 1};
    c.output_dir = out.string();
    return c;
}

std::string file_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream(p) << s;
}

}  // namespace

TEST(ExperimentConfigJson, RoundTrip)
{
    TempDir dir("cfg");
    auto c = tiny_config(dir.path());
    c.sweep = SweepSpec{"batch_size", {16, 32}};
    nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    write_json(dir / "c.json", j);
    EXPECT_EQ(nlohmann::json(load_experiment_config(dir / "c.json")), j);
}

TEST(ExperimentConfigJson, UnknownKeyIsConfigError)
{
    TempDir dir("cfg");
    write_text(dir / "c.json", R"({"pretrain": {"epochz": 3}})");
    EXPECT_THROW(load_experiment_config(dir / "c.json"), ConfigError);
}

TEST(ExperimentConfigJson, OverridesApply)
{
    auto c = load_experiment_config({}, {"pretrain.epochs=7", "name=abc", "finetune.weight_mode=minmax_inverse"});
    EXPECT_EQ(c.pretrain.epochs, 7);
    EXPECT_EQ(c.name, "abc");
    EXPECT_EQ(c.finetune.weight_mode, WeightMode::minmax_inverse);
    EXPECT_THROW(load_experiment_config({}, {"pretrain.nope=1"}), ConfigError);
}

TEST(ExperimentConfigJson, InvalidValuesAreConfigErrors)
{
    EXPECT_THROW(load_experiment_config({}, {"pretrain.optimizer_cnn=\"adamw\""}), ConfigError);
    EXPECT_THROW(load_experiment_config({}, {"seeds=[1,1]"}), ConfigError);
    EXPECT_THROW(load_experiment_config({}, {"method=\"simclr\""}), ConfigError);
    EXPECT_THROW(load_experiment_config({}, {"arm_a.variant=\"resnet_999\""}), RegistryError);
    EXPECT_THROW(load_experiment_config({}, {"pretrain.batch_size=0"}), ConfigError);
}

TEST(RunRecordJson, RoundTrip)
{
    TempDir dir("rec");
    RunRecord r;
    r.run_id = "x/seed_3";
    r.seed = 3;
    r.loss_curve = {1.5, 0.25};
    r.counters.steps = 9;
    r.counters.parameter_copy_ops = 4;
    FinetuneEntry e;
    e.arm = "b";
    e.val_loss = {0.5, 0.4};
    e.metrics.push_back(MetricReport{"f1_macro", 0.75, {0, 1}, {0.5, 1.0}, {}, 10});
    r.finetunes.push_back(e);
    r.wall_clock_seconds["pretrain"] = 1.25;
    save_record(r, dir / "r.json");
    EXPECT_EQ(nlohmann::json(load_record(dir / "r.json")), nlohmann::json(r));
}

TEST(SweepValues, EveryAxisApplies)
{
    ExperimentConfig base;
    EXPECT_EQ(with_sweep_value(base, "batch_size", 64).pretrain.batch_size, 64);
    EXPECT_EQ(with_sweep_value(base, "optimizer_cnn", "sgd").pretrain.optimizer_cnn, OptimizerKind::sgd);
    EXPECT_EQ(with_sweep_value(base, "head_variant", "softmax").pretrain.head_variant, HeadVariant::softmax);
    EXPECT_EQ(with_sweep_value(base, "label_fraction", 0.1).label_fractions, (std::vector<double>{0.1}));
    auto pair = with_sweep_value(base, "arch_pair", "resnet_like_18+vit_tiny_p8");
    EXPECT_EQ(pair.arm_a.variant, "resnet_like_18");
    EXPECT_EQ(pair.arm_b.variant, "vit_tiny_p8");
    EXPECT_EQ(pair.arm_b.family, ArmFamily::vit);
    auto aug = with_sweep_value(base, "augment_set", "solarize+gaussian_blur");
    EXPECT_EQ(aug.augment.extra.size(), 2u);
    EXPECT_TRUE(with_sweep_value(aug, "augment_set", "none").augment.extra.empty());
    std::vector<ExperimentConfig> epochs;
    for (int e : {50, 100, 200, 300}) epochs.push_back(with_sweep_value(base, "epochs", e));
    ASSERT_EQ(epochs.size(), 4u);
    EXPECT_EQ(epochs[3].pretrain.epochs, 300);
    EXPECT_EQ(epochs[0].pretrain.batch_size, base.pretrain.batch_size);
    EXPECT_THROW(with_sweep_value(base, "colour", 1), ConfigError);
    EXPECT_THROW(with_sweep_value(base, "batch_size", "big"), ConfigError);
}

TEST(Aggregate, IntervalMatchesCi95)
{
    std::vector<RunRecord> records;
    const std::vector<double> values{0.8123, 0.7904, 0.8411};
    for (size_t s = 0; s < values.size(); ++s) {
        RunRecord r;
        r.seed = s;
        FinetuneEntry e;
        e.arm = "a";
        e.variant = "micro_cnn";
        e.metrics.push_back(MetricReport{"f1_macro", values[s]});
        r.finetunes.push_back(e);
        records.push_back(r);
    }
    RunRecord failed;
    failed.status = "failed";
    records.push_back(failed);
    auto rows = aggregate(records);
    ASSERT_EQ(rows.size(), 1u);
    const auto ci = ci95(values);
    EXPECT_DOUBLE_EQ(rows[0].mean, ci.mean);
    EXPECT_DOUBLE_EQ(rows[0].halfwidth, ci.halfwidth);
    EXPECT_EQ(rows[0].values, values);
}

TEST(Experiment, TinyRunIsCompleteAndDeterministic)
{
    TempDir dir("run");
    auto first = run(tiny_config(dir / "one"));
    auto second = run(tiny_config(dir / "two"));
    ASSERT_EQ(first.records.size(), 2u);
    for (const auto& r : first.records) {
        EXPECT_EQ(r.status, "ok") << r.error;
        EXPECT_EQ(r.finetunes.size(), 2u);
        EXPECT_EQ(r.loss_curve.size(), 2u);
        EXPECT_TRUE(std::filesystem::exists(dir / "one" / ("seed_" + std::to_string(r.seed)) / "record.json"));
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "one" / "aggregate.json"));
    // One row per (arm, fraction, metric).
    EXPECT_EQ(first.aggregate.size(), 4u);
    for (const auto& row : first.aggregate) {
        EXPECT_EQ(row.values.size(), 2u);
        EXPECT_DOUBLE_EQ(row.halfwidth, ci95(row.values).halfwidth);
    }
    for (size_t i = 0; i < first.records.size(); ++i) {
        const auto& a = first.records[i];
        const auto& b = second.records[i];
        EXPECT_EQ(a.loss_curve, b.loss_curve);
        for (size_t k = 0; k < a.finetunes.size(); ++k) {
            EXPECT_EQ(a.finetunes[k].metrics.front().value, b.finetunes[k].metrics.front().value);
        }
        for (const auto& [key, path] : a.checkpoints) {
            EXPECT_EQ(file_bytes(path), file_bytes(b.checkpoints.at(key))) << key;
        }
    }
}

TEST(Experiment, FailedSeedIsRecorded)
{
    TempDir dir("fail");
    auto c = tiny_config(dir.path());
    c.method = "supervised";
    c.label_fractions = {0.001};
    c.seeds = {4};
    auto out = run(c);
    ASSERT_EQ(out.records.size(), 1u);
    EXPECT_EQ(out.records[0].status, "failed");
    EXPECT_FALSE(out.records[0].error.empty());
    EXPECT_TRUE(out.aggregate.empty());
    auto doc = read_json(dir / "aggregate.json");
    EXPECT_EQ(doc.at("failed").size(), 1u);
    EXPECT_EQ(load_record(dir / "seed_4" / "record.json").status, "failed");
}

TEST(Experiment, DinoMethodRuns)
{
    TempDir dir("dino_run");
    auto c = tiny_config(dir.path());
    c.method = "dino";
    c.seeds = {0};
    c.label_fractions = {1.0};
    auto out = run(c);
    ASSERT_EQ(out.records[0].status, "ok") << out.records[0].error;
    EXPECT_GT(out.records[0].counters.parameter_copy_ops, 0);
    EXPECT_EQ(out.records[0].finetunes.size(), 1u);
}

TEST(Sweep, CellsAreIndependentAndSummarized)
{
    TempDir dir("sweep");
    auto c = tiny_config(dir.path());
    c.method = "supervised";
    c.seeds = {0, 1};
    c.label_fractions = {1.0};
    c.finetune_arms = {"a", "b"};
    c.sweep = SweepSpec{"label_fraction", {0.5, 1.0}};
    auto s = sweep(c);
    ASSERT_EQ(s.cells.size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(dir / "sweep.json"));
    // The 1.0 cell equals a standalone run with the same settings.
    auto standalone = c;
    standalone.sweep.reset();
    standalone.output_dir = (dir / "alone").string();
    auto alone = run(standalone);
    const auto& cell = s.cells[1].outcome;
    ASSERT_EQ(cell.aggregate.size(), alone.aggregate.size());
    for (size_t i = 0; i < alone.aggregate.size(); ++i) EXPECT_EQ(cell.aggregate[i].values, alone.aggregate[i].values);
    ASSERT_TRUE(s.robustness.count("supervised"));
    auto grid = sweep_grid(s, "f1_macro");
    EXPECT_EQ(grid.size(), 4u);
    EXPECT_NEAR(s.robustness.at("supervised").mean_variance, robustness_variance(grid).at("supervised").mean_variance,
                1e-15);
}

TEST(CompareCost, MismatchedBudgetsAreContractErrors)
{
    TempDir dir("cost");
    auto a = tiny_config(dir.path());
    auto b = a;
    b.method = "dino";
    b.pretrain.epochs = 3;
    EXPECT_THROW(compare_cost(a, b, 0, dir.path()), ContractError);
    b = a;
    b.method = "dino";
    b.arm_b.variant = "vit_tiny_p4";
    EXPECT_THROW(compare_cost(a, b, 0, dir.path()), ContractError);
}

TEST(CompareCost, CountingContract)
{
    TempDir dir("cost");
    auto a = tiny_config(dir.path());
    a.dataset.synth.n = 24;
    a.pretrain.epochs = 1;
    auto b = a;
    b.method = "dino";
    auto report = compare_cost(a, b, 0, dir.path());
    const int64_t n = report.cass.samples;
    EXPECT_EQ(report.cass.counters.augmentation_applications, n);
    EXPECT_EQ(report.dino.counters.augmentation_applications, 2 * 2 * n);
    EXPECT_EQ(report.cass.counters.parameter_copy_ops, 0);
    EXPECT_GT(report.dino.counters.parameter_copy_ops, 0);
    EXPECT_LT(report.augmentation_ratio, 1.0);
    EXPECT_LT(report.forward_pass_ratio, 1.0);
    EXPECT_TRUE(std::filesystem::exists(dir / "cost.json"));
}

TEST(Report, TableAndPlots)
{
    AggregateRow row{"cass", "a", "micro_cnn", 1.0, "f1_macro", {0, 1}, {0.8, 0.9}, 0.85, 0.6353};
    const auto table = aggregate_table({row});
    EXPECT_NE(table.find("| cass | a | micro_cnn | 100% | f1_macro | 0.8500 ± 0.6353 | 2 |"), std::string::npos) << table;

    TempDir dir("report");
    EXPECT_THROW(write_report(dir.path()), ContractError);
    auto c = tiny_config(dir.path());
    c.seeds = {0};
    c.label_fractions = {1.0};
    run(c);
    auto files = write_report(dir.path());
    EXPECT_TRUE(std::filesystem::exists(files.markdown));
    ASSERT_FALSE(files.plots.empty());
    for (const auto& p : files.plots) EXPECT_GT(std::filesystem::file_size(p), 0u);
}
