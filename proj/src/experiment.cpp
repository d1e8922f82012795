#include "cass/experiment.hpp"

#include "cass/errors.hpp"
#include "cass/json_io.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace cass {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void add_counters(Counters& into, const Counters& c)
{
    into.steps += c.steps;
    into.forward_passes += c.forward_passes;
    into.augmentation_applications += c.augmentation_applications;
    into.parameter_copy_ops += c.parameter_copy_ops;
    into.bn_refresh_passes += c.bn_refresh_passes;
}

std::string fraction_label(double f)
{
    std::ostringstream s;
    s << f;
    return s.str();
}

std::string value_label(const nlohmann::json& v)
{
    std::string raw = v.is_string() ? v.get<std::string>() : v.dump();
    for (auto& ch : raw) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-' && ch != '_') ch = '_';
    }
    return raw;
}

const ArmSpec& arm_spec(const ExperimentConfig& c, const std::string& arm)
{
    return arm == "a" ? c.arm_a : c.arm_b;
}

}  // namespace

void to_json(nlohmann::json& j, const AggregateRow& r)
{
    j = {{"method", r.method}, {"arm", r.arm},       {"variant", r.variant},   {"label_fraction", r.label_fraction},
         {"metric", r.metric}, {"seeds", r.seeds},   {"values", r.values},     {"mean", r.mean},
         {"halfwidth", r.halfwidth}};
}

void from_json(const nlohmann::json& j, AggregateRow& r)
{
    j.at("method").get_to(r.method);
    j.at("arm").get_to(r.arm);
    j.at("variant").get_to(r.variant);
    j.at("label_fraction").get_to(r.label_fraction);
    j.at("metric").get_to(r.metric);
    j.at("seeds").get_to(r.seeds);
    j.at("values").get_to(r.values);
    j.at("mean").get_to(r.mean);
    j.at("halfwidth").get_to(r.halfwidth);
}

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records)
{
    using Key = std::tuple<std::string, std::string, std::string, double, std::string>;
    std::map<Key, AggregateRow> rows;
    for (const auto& r : records) {
        if (r.status != "ok") continue;
        for (const auto& e : r.finetunes) {
            for (const auto& m : e.metrics) {
                auto& row = rows[{r.method, e.arm, e.variant, e.label_fraction, m.metric_name}];
                row.method = r.method;
                row.arm = e.arm;
                row.variant = e.variant;
                row.label_fraction = e.label_fraction;
                row.metric = m.metric_name;
                row.seeds.push_back(r.seed);
                row.values.push_back(m.value);
            }
        }
    }
    std::vector<AggregateRow> out;
    for (auto& [key, row] : rows) {
        if (row.values.size() >= 2) {
            const auto ci = ci95(row.values);
            row.mean = ci.mean;
            row.halfwidth = ci.halfwidth;
        } else {
            row.mean = row.values.front();
            row.halfwidth = 0.0;
        }
        out.push_back(row);
    }
    return out;
}

RunRecord run_seed(const ExperimentConfig& config, uint64_t seed, const LabeledImageDataset& dataset,
                   const std::filesystem::path& out_dir)
{
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    RunRecord record;
    record.run_id = config.name + "/seed_" + std::to_string(seed);
    record.method = config.method;
    record.seed = seed;
    record.config = {{"experiment", config}, {"seed", seed}};

    try {
        PretrainConfig schedule = config.pretrain;
        schedule.seed = seed;
        std::map<std::string, std::filesystem::path> pretrained;
        if (config.method == "cass") {
            auto pair = pair_arms(config.arm_a, config.arm_b, seed);
            auto res = pretrain(dataset, pair, schedule, config.augment, dir / "pretrain");
            record.loss_curve = res.record.loss_curve;
            record.counters = res.record.counters;
            record.wall_clock_seconds = res.record.wall_clock_seconds;
            record.checkpoints = res.record.checkpoints;
            pretrained["a"] = res.checkpoint_a;
            pretrained["b"] = res.checkpoint_b;
        } else if (config.method == "dino") {
            for (const auto& arm : config.finetune_arms) {
                auto res = dino_pretrain(dataset, arm_spec(config, arm), schedule, config.dino, config.augment,
                                         dir / ("pretrain_" + arm));
                if (record.loss_curve.empty()) record.loss_curve = res.record.loss_curve;
                record.config["loss_curve_arm_" + arm] = res.record.loss_curve;
                add_counters(record.counters, res.record.counters);
                record.wall_clock_seconds["pretrain"] += res.record.wall_clock_seconds["pretrain"];
                record.checkpoints["dino_" + arm] = res.checkpoint.string();
                pretrained[arm] = res.checkpoint;
            }
        }

        const auto finetune_started = std::chrono::steady_clock::now();
        for (const auto& arm : config.finetune_arms) {
            for (double fraction : config.label_fractions) {
                ArmHandle model;
                if (config.method == "supervised") {
                    auto pair = pair_arms(config.arm_a, config.arm_b, seed);
                    model = arm == "a" ? pair.arm_a : pair.arm_b;
                } else {
                    model = load_checkpoint(pretrained.at(arm)).arm;
                }
                FinetuneConfig f = config.finetune;
                f.label_fraction = fraction;
                f.seed = seed;
                auto res = finetune(model, dataset, f, config.augment);
                res.entry.arm = arm;
                const auto tag = "finetune_" + arm + "_" + fraction_label(fraction);
                const auto path = dir / (tag + ".pt");
                save_checkpoint(*res.model, CheckpointMeta{res.model->spec(), seed, res.entry.epochs_run, false,
                                                           config.method + "+finetune"},
                                path);
                res.entry.checkpoint = path.string();
                record.checkpoints[tag] = path.string();
                record.finetunes.push_back(std::move(res.entry));
            }
        }
        record.wall_clock_seconds["finetune"] = seconds_since(finetune_started);
    } catch (const std::exception& e) {
        record.status = "failed";
        record.error = e.what();
    }
    save_record(record, dir / "record.json");
    return record;
}

RunOutcome run(const ExperimentConfig& config)
{
    config.validate();
    RunOutcome outcome;
    outcome.out_dir = resolved_output_dir(config);
    std::filesystem::create_directories(outcome.out_dir);
    write_json(outcome.out_dir / "config.json", config);
    const auto dataset = load_dataset(config.dataset);
    for (auto seed : config.seeds) {
        outcome.records.push_back(run_seed(config, seed, dataset, outcome.out_dir));
    }
    outcome.aggregate = aggregate(outcome.records);
    nlohmann::json summary = {{"name", config.name}, {"method", config.method}, {"rows", outcome.aggregate}};
    nlohmann::json failed = nlohmann::json::array();
    for (const auto& r : outcome.records) {
        if (r.status != "ok") failed.push_back({{"seed", r.seed}, {"error", r.error}});
    }
    summary["failed"] = failed;
    write_json(outcome.out_dir / "aggregate.json", summary);
    return outcome;
}

ExperimentConfig with_sweep_value(const ExperimentConfig& config, const std::string& axis, const nlohmann::json& value)
{
    ExperimentConfig c = config;
    try {
        if (axis == "batch_size") {
            c.pretrain.batch_size = value.get<int64_t>();
        } else if (axis == "epochs") {
            c.pretrain.epochs = value.get<int64_t>();
        } else if (axis == "augment_set") {
            c.augment.extra.clear();
            if (value.is_array()) {
                c.augment.extra = value.get<std::vector<ExtraAugment>>();
            } else {
                const auto s = value.get<std::string>();
                if (s != "none" && s != "base") {
                    std::stringstream parts(s);
                    for (std::string p; std::getline(parts, p, '+');) c.augment.extra.push_back(nlohmann::json(p).get<ExtraAugment>());
                }
            }
        } else if (axis == "optimizer_cnn") {
            c.pretrain.optimizer_cnn = value.get<OptimizerKind>();
        } else if (axis == "head_variant") {
            c.pretrain.head_variant = value.get<HeadVariant>();
        } else if (axis == "arch_pair") {
            const auto s = value.get<std::string>();
            const auto plus = s.find('+');
            if (plus == std::string::npos) {
                throw ConfigError("arch_pair values look like <variant_a>+<variant_b>, got '" + s + "'");
            }
            c.arm_a.variant = s.substr(0, plus);
            c.arm_b.variant = s.substr(plus + 1);
            c.arm_a.family = registry_family(c.arm_a.variant);
            c.arm_b.family = registry_family(c.arm_b.variant);
        } else if (axis == "label_fraction") {
            c.label_fractions = {value.get<double>()};
        } else {
            throw ConfigError("unknown sweep axis '" + axis + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sweep value " + value.dump() + " does not fit axis " + axis + ": " + e.what());
    }
    c.sweep.reset();
    return c;
}

std::vector<GridCell> sweep_grid(const SweepOutcome& s, const std::string& metric)
{
    std::vector<GridCell> grid;
    for (const auto& cell : s.cells) {
        double top = 0.0;
        for (const auto& row : cell.outcome.aggregate) top = std::max(top, row.label_fraction);
        for (const auto& row : cell.outcome.aggregate) {
            if (row.metric != metric || row.label_fraction != top) continue;
            const auto arch = s.axis == "arch_pair" ? "arm_" + row.arm : row.arm + ":" + row.variant;
            grid.push_back({row.method, arch, cell.value.dump(), row.mean});
        }
    }
    return grid;
}

SweepOutcome sweep(const ExperimentConfig& config)
{
    config.validate();
    if (!config.sweep) {
        throw ConfigError("sweep: config has no sweep section");
    }
    SweepOutcome outcome;
    outcome.axis = config.sweep->axis;
    outcome.out_dir = resolved_output_dir(config);
    std::filesystem::create_directories(outcome.out_dir);
    write_json(outcome.out_dir / "config.json", config);
    for (const auto& value : config.sweep->values) {
        auto c = with_sweep_value(config, outcome.axis, value);
        c.output_dir = (outcome.out_dir / (outcome.axis + "_" + value_label(value))).string();
        c.name = config.name + "/" + outcome.axis + "_" + value_label(value);
        outcome.cells.push_back({value, run(c)});
    }
    const auto grid = sweep_grid(outcome, config.metric);
    std::set<std::string> distinct;
    for (const auto& g : grid) distinct.insert(g.sweep_value);
    if (distinct.size() >= 2) {
        outcome.robustness = robustness_variance(grid, config.variance_kind);
    }

    nlohmann::json doc = {{"name", config.name}, {"axis", outcome.axis}, {"metric", config.metric}};
    doc["cells"] = nlohmann::json::array();
    for (const auto& cell : outcome.cells) {
        doc["cells"].push_back(
            {{"value", cell.value}, {"dir", cell.outcome.out_dir.string()}, {"rows", cell.outcome.aggregate}});
    }
    doc["robustness"] = nlohmann::json::object();
    for (const auto& [method, summary] : outcome.robustness) {
        doc["robustness"][method] = {{"mean_variance", summary.mean_variance},
                                     {"per_arch_variance", summary.per_arch_variance}};
    }
    write_json(outcome.out_dir / "sweep.json", doc);
    return outcome;
}

void to_json(nlohmann::json& j, const CostReport& r)
{
    auto method = [](const MethodCost& m) {
        return nlohmann::json{{"method", m.method},
                              {"wall_clock_seconds", m.wall_clock_seconds},
                              {"counters", m.counters},
                              {"samples", m.samples},
                              {"epochs", m.epochs}};
    };
    j = {{"cass", method(r.cass)},
         {"dino", method(r.dino)},
         {"wall_clock_ratio", r.wall_clock_ratio},
         {"augmentation_ratio", r.augmentation_ratio},
         {"forward_pass_ratio", r.forward_pass_ratio},
         {"time_saving", r.time_saving}};
}

CostReport compare_cost(const ExperimentConfig& cass_config, const ExperimentConfig& dino_config, uint64_t seed,
                        const std::filesystem::path& out_dir)
{
    cass_config.validate();
    dino_config.validate();
    std::vector<std::string> mismatches;
    if (nlohmann::json(cass_config.dataset) != nlohmann::json(dino_config.dataset)) mismatches.push_back("dataset");
    if (cass_config.pretrain.epochs != dino_config.pretrain.epochs) mismatches.push_back("epochs");
    if (cass_config.pretrain.batch_size != dino_config.pretrain.batch_size) mismatches.push_back("batch_size");
    if (nlohmann::json(cass_config.augment) != nlohmann::json(dino_config.augment)) mismatches.push_back("augment");
    if (std::multiset<std::string>{cass_config.arm_a.variant, cass_config.arm_b.variant} !=
        std::multiset<std::string>{dino_config.arm_a.variant, dino_config.arm_b.variant}) {
        mismatches.push_back("architectures");
    }
    if (!mismatches.empty()) {
        std::string msg = "compare_cost: budgets differ in";
        for (const auto& m : mismatches) msg += " " + m;
        throw ContractError(msg);
    }

    const auto dataset = load_dataset(cass_config.dataset);
    CostReport report;
    report.cass.method = "cass";
    report.dino.method = "dino";
    report.cass.samples = report.dino.samples = static_cast<int64_t>(pretraining_indices(dataset).size());
    report.cass.epochs = report.dino.epochs = cass_config.pretrain.epochs;

    PretrainConfig cass_schedule = cass_config.pretrain;
    cass_schedule.seed = seed;
    auto started = std::chrono::steady_clock::now();
    auto pair = pair_arms(cass_config.arm_a, cass_config.arm_b, seed);
    auto cass_result = pretrain(dataset, pair, cass_schedule, cass_config.augment, out_dir / "cass");
    report.cass.wall_clock_seconds = seconds_since(started);
    report.cass.counters = cass_result.record.counters;

    PretrainConfig dino_schedule = dino_config.pretrain;
    dino_schedule.seed = seed;
    started = std::chrono::steady_clock::now();
    for (const auto* spec : {&dino_config.arm_a, &dino_config.arm_b}) {
        auto res = dino_pretrain(dataset, *spec, dino_schedule, dino_config.dino, dino_config.augment, out_dir / "dino");
        add_counters(report.dino.counters, res.record.counters);
    }
    report.dino.wall_clock_seconds = seconds_since(started);

    auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
    report.wall_clock_ratio = ratio(report.cass.wall_clock_seconds, report.dino.wall_clock_seconds);
    report.augmentation_ratio = ratio(static_cast<double>(report.cass.counters.augmentation_applications),
                                      static_cast<double>(report.dino.counters.augmentation_applications));
    report.forward_pass_ratio = ratio(static_cast<double>(report.cass.counters.forward_passes),
                                      static_cast<double>(report.dino.counters.forward_passes));
    report.time_saving = 1.0 - report.wall_clock_ratio;
    std::filesystem::create_directories(out_dir);
    write_json(out_dir / "cost.json", report);
    return report;
}

}  // namespace cass
