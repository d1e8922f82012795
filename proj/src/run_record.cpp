#include "cass/run_record.hpp"

#include "cass/errors.hpp"

#include <fstream>

namespace cass {

bool operator==(const Counters& a, const Counters& b)
{
    return a.steps == b.steps && a.forward_passes == b.forward_passes &&
           a.augmentation_applications == b.augmentation_applications &&
           a.parameter_copy_ops == b.parameter_copy_ops && a.bn_refresh_passes == b.bn_refresh_passes;
}

void to_json(nlohmann::json& j, const Counters& c)
{
    j = {{"steps", c.steps},
         {"forward_passes", c.forward_passes},
         {"augmentation_applications", c.augmentation_applications},
         {"parameter_copy_ops", c.parameter_copy_ops},
         {"bn_refresh_passes", c.bn_refresh_passes}};
}

void from_json(const nlohmann::json& j, Counters& c)
{
    c.steps = j.value("steps", int64_t{0});
    c.forward_passes = j.value("forward_passes", int64_t{0});
    c.augmentation_applications = j.value("augmentation_applications", int64_t{0});
    c.parameter_copy_ops = j.value("parameter_copy_ops", int64_t{0});
    c.bn_refresh_passes = j.value("bn_refresh_passes", int64_t{0});
}

void to_json(nlohmann::json& j, const MetricReport& m)
{
    j = {{"metric_name", m.metric_name}, {"value", m.value},         {"classes", m.classes},
         {"per_class", m.per_class},     {"excluded_classes", m.excluded_classes}, {"n_samples", m.n_samples}};
}

void from_json(const nlohmann::json& j, MetricReport& m)
{
    j.at("metric_name").get_to(m.metric_name);
    j.at("value").get_to(m.value);
    m.classes = j.value("classes", std::vector<int64_t>{});
    m.per_class = j.value("per_class", std::vector<double>{});
    m.excluded_classes = j.value("excluded_classes", std::vector<int64_t>{});
    m.n_samples = j.value("n_samples", int64_t{0});
}

void to_json(nlohmann::json& j, const FinetuneEntry& e)
{
    j = {{"arm", e.arm},
         {"variant", e.variant},
         {"label_fraction", e.label_fraction},
         {"train_samples", e.train_samples},
         {"epochs_run", e.epochs_run},
         {"best_epoch", e.best_epoch},
         {"train_loss", e.train_loss},
         {"val_loss", e.val_loss},
         {"metrics", e.metrics},
         {"wall_clock_seconds", e.wall_clock_seconds},
         {"test_reads_during_training", e.test_reads_during_training},
         {"checkpoint", e.checkpoint}};
}

void from_json(const nlohmann::json& j, FinetuneEntry& e)
{
    j.at("arm").get_to(e.arm);
    e.variant = j.value("variant", std::string{});
    j.at("label_fraction").get_to(e.label_fraction);
    e.train_samples = j.value("train_samples", int64_t{0});
    e.epochs_run = j.value("epochs_run", int64_t{0});
    e.best_epoch = j.value("best_epoch", int64_t{0});
    e.train_loss = j.value("train_loss", std::vector<double>{});
    e.val_loss = j.value("val_loss", std::vector<double>{});
    e.metrics = j.value("metrics", std::vector<MetricReport>{});
    e.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    e.test_reads_during_training = j.value("test_reads_during_training", int64_t{0});
    e.checkpoint = j.value("checkpoint", std::string{});
}

void to_json(nlohmann::json& j, const RunRecord& r)
{
    j = {{"run_id", r.run_id},
         {"method", r.method},
         {"seed", r.seed},
         {"status", r.status},
         {"error", r.error},
         {"config", r.config},
         {"loss_curve", r.loss_curve},
         {"counters", r.counters},
         {"wall_clock_seconds", r.wall_clock_seconds},
         {"finetunes", r.finetunes},
         {"checkpoints", r.checkpoints}};
}

void from_json(const nlohmann::json& j, RunRecord& r)
{
    j.at("run_id").get_to(r.run_id);
    j.at("method").get_to(r.method);
    r.seed = j.value("seed", uint64_t{0});
    r.status = j.value("status", std::string{"ok"});
    r.error = j.value("error", std::string{});
    r.config = j.value("config", nlohmann::json::object());
    r.loss_curve = j.value("loss_curve", std::vector<double>{});
    r.counters = j.value("counters", Counters{});
    r.wall_clock_seconds = j.value("wall_clock_seconds", std::map<std::string, double>{});
    r.finetunes = j.value("finetunes", std::vector<FinetuneEntry>{});
    r.checkpoints = j.value("checkpoints", std::map<std::string, std::string>{});
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw ConfigError("cannot write " + path.string());
        }
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void save_record(const RunRecord& r, const std::filesystem::path& path)
{
    write_json(path, r);
}

RunRecord load_record(const std::filesystem::path& path)
{
    return read_json(path).get<RunRecord>();
}

}  // namespace cass
