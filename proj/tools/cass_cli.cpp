// Command-line front end: pretrain, finetune, run, sweep, compare-cost, report, analyze.
#include "cass/analysis.hpp"
#include "cass/errors.hpp"
#include "cass/experiment.hpp"
#include "cass/json_io.hpp"
#include "cass/report.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config, "JSON experiment config (defaults apply when omitted)");
    cmd->add_option("--seed", c.seed, "run a single seed instead of the configured list");
    cmd->add_option("--out", c.out, "output directory (default: $CASS_RESULTS_ROOT/<name>)");
    cmd->add_option("--set", c.sets, "override a config key, e.g. --set pretrain.epochs=30")->take_all();
}

cass::ExperimentConfig resolve(const Common& c, const std::vector<std::string>& extra = {})
{
    auto overrides = extra;
    overrides.insert(overrides.end(), c.sets.begin(), c.sets.end());
    if (c.seed) overrides.push_back("seeds=[" + std::to_string(*c.seed) + "]");
    if (!c.out.empty()) overrides.push_back("output_dir=" + nlohmann::json(c.out).dump());
    return cass::load_experiment_config(c.config, overrides);
}

void print_rows(const std::vector<cass::AggregateRow>& rows)
{
    std::cout << cass::aggregate_table(rows);
}

}  // namespace

int main(int argc, char** argv)
{
    torch::set_num_threads(1);
    CLI::App app{"Cross-architecture self-supervised pretraining toolkit"};
    app.require_subcommand(1);

    Common pre_opts;
    auto* pre = app.add_subcommand("pretrain", "pretrain (cass pair or dino per arm) without fine-tuning");
    add_common(pre, pre_opts);

    Common ft_opts;
    std::string ft_checkpoint, ft_arm = "a";
    double ft_fraction = 1.0;
    auto* ft = app.add_subcommand("finetune", "fine-tune one arm (from a checkpoint, or random init) and evaluate");
    add_common(ft, ft_opts);
    ft->add_option("--checkpoint", ft_checkpoint, "arm checkpoint; random init of --arm when omitted");
    ft->add_option("--arm", ft_arm, "arm to build when no checkpoint is given")->check(CLI::IsMember({"a", "b"}));
    ft->add_option("--fraction", ft_fraction, "label fraction")->check(CLI::Range(0.0, 1.0));

    Common run_opts;
    auto* run = app.add_subcommand("run", "pretrain, fine-tune and evaluate every seed, then aggregate");
    add_common(run, run_opts);

    Common sweep_opts;
    auto* sw = app.add_subcommand("sweep", "one run per sweep value plus the robustness statistic");
    add_common(sw, sweep_opts);

    Common cost_opts;
    std::string dino_config;
    auto* cost = app.add_subcommand("compare-cost", "pretraining cost of cass against the dino baseline");
    add_common(cost, cost_opts);
    cost->add_option("--dino-config", dino_config, "baseline config (default: --config with method=dino)");

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "render report.md and plots for an experiment directory");
    rep->add_option("--dir", report_dir, "experiment directory")->required();

    std::string an_checkpoint, an_out = "analysis", an_agg = "last_layer_cls";
    int64_t an_samples = 30;
    uint64_t an_seed = 0;
    Common an_opts;
    auto* an = app.add_subcommand("analyze", "feature maps (cnn) or averaged attention maps (vit) of a checkpoint");
    add_common(an, an_opts);
    an->add_option("--checkpoint", an_checkpoint, "arm checkpoint")->required();
    an->add_option("--samples", an_samples, "number of test images");
    an->add_option("--aggregation", an_agg, "last_layer_cls or rollout");
    an->add_option("--dir", an_out, "output directory for .npy and .png dumps");
    an->add_option("--sample-seed", an_seed, "seed for picking images");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) {
            const auto config = resolve(pre_opts);
            const auto out = cass::resolved_output_dir(config);
            const auto dataset = cass::load_dataset(config.dataset);
            for (auto seed : config.seeds) {
                auto schedule = config.pretrain;
                schedule.seed = seed;
                const auto dir = out / ("seed_" + std::to_string(seed));
                if (config.method == "cass") {
                    auto pair = cass::pair_arms(config.arm_a, config.arm_b, seed);
                    auto res = cass::pretrain(dataset, pair, schedule, config.augment, dir);
                    std::cout << "seed " << seed << ": " << res.checkpoint_a.string() << " " << res.checkpoint_b.string()
                              << " final loss " << res.record.loss_curve.back() << "\n";
                } else if (config.method == "dino") {
                    for (const auto& arm : config.finetune_arms) {
                        auto res = cass::dino_pretrain(dataset, arm == "a" ? config.arm_a : config.arm_b, schedule,
                                                       config.dino, config.augment, dir);
                        std::cout << "seed " << seed << ": " << res.checkpoint.string() << "\n";
                    }
                } else {
                    throw cass::ConfigError("pretrain: method 'supervised' has no pretraining stage");
                }
            }
        } else if (ft->parsed()) {
            const auto config = resolve(ft_opts);
            const auto dataset = cass::load_dataset(config.dataset);
            const auto out = cass::resolved_output_dir(config);
            for (auto seed : config.seeds) {
                auto f = config.finetune;
                f.label_fraction = ft_fraction;
                f.seed = seed;
                cass::FinetuneResult res;
                if (!ft_checkpoint.empty()) {
                    res = cass::finetune(std::filesystem::path(ft_checkpoint), dataset, f, config.augment);
                } else {
                    auto pair = cass::pair_arms(config.arm_a, config.arm_b, seed);
                    res = cass::finetune(ft_arm == "a" ? pair.arm_a : pair.arm_b, dataset, f, config.augment);
                }
                res.entry.arm = ft_arm;
                const auto path = out / ("finetune_seed_" + std::to_string(seed) + ".json");
                std::filesystem::create_directories(out);
                cass::write_json(path, res.entry);
                std::cout << "seed " << seed;
                for (const auto& m : res.entry.metrics) std::cout << " " << m.metric_name << "=" << m.value;
                std::cout << " -> " << path.string() << "\n";
            }
        } else if (run->parsed()) {
            const auto outcome = cass::run(resolve(run_opts));
            print_rows(outcome.aggregate);
            std::cout << cass::write_report(outcome.out_dir).markdown.string() << "\n";
        } else if (sw->parsed()) {
            const auto outcome = cass::sweep(resolve(sweep_opts));
            for (const auto& [method, r] : outcome.robustness) {
                std::cout << method << " mean variance " << r.mean_variance << "\n";
            }
            std::cout << cass::write_report(outcome.out_dir).markdown.string() << "\n";
        } else if (cost->parsed()) {
            const auto cass_cfg = resolve(cost_opts, {"method=\"cass\""});
            Common dino_opts = cost_opts;
            if (!dino_config.empty()) dino_opts.config = dino_config;
            const auto dino_cfg = resolve(dino_opts, {"method=\"dino\""});
            const auto out = cass::resolved_output_dir(cass_cfg);
            const auto report = cass::compare_cost(cass_cfg, dino_cfg, cass_cfg.seeds.front(), out);
            std::cout << nlohmann::json(report).dump(2) << "\n";
            cass::write_report(out);
        } else if (rep->parsed()) {
            std::cout << cass::write_report(report_dir).markdown.string() << "\n";
        } else if (an->parsed()) {
            const auto config = resolve(an_opts);
            const auto dataset = cass::load_dataset(config.dataset);
            auto loaded = cass::load_checkpoint(an_checkpoint);
            auto test = dataset.indices(cass::Split::test);
            cass::Rng rng(an_seed);
            std::shuffle(test.begin(), test.end(), rng);
            test.resize(std::min<size_t>(test.size(), static_cast<size_t>(std::max<int64_t>(1, an_samples))));
            if (loaded.arm->family() == cass::ArmFamily::cnn) {
                for (auto i : test) {
                    const auto& s = dataset.samples[static_cast<size_t>(i)];
                    auto dumps = cass::extract_feature_maps(*loaded.arm, cass::prepare_image(s.image, config.augment),
                                                            {"conv1"}, an_checkpoint, s.id);
                    cass::save_feature_dumps(dumps, an_out);
                }
                std::cout << "feature maps of " << test.size() << " images in " << an_out << "\n";
            } else {
                const auto agg = cass::parse_attention_aggregation(an_agg);
                std::vector<torch::Tensor> maps;
                for (auto i : test) {
                    maps.push_back(cass::attention_map(
                        *loaded.arm, cass::prepare_image(dataset.samples[static_cast<size_t>(i)].image, config.augment),
                        agg));
                }
                const auto avg = cass::average_maps(maps, an_agg);
                const std::filesystem::path dir(an_out);
                cass::write_npy(dir / "attention_average.npy", avg.map);
                cass::render_heatmap(dir / "attention_average.png", avg.map);
                std::cout << "attention map averaged over " << avg.n_samples << " images in " << an_out << "\n";
            }
        }
    } catch (const cass::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
