#include "cass/errors.hpp"
#include "cass/experiment.hpp"
#include "cass/json_io.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sstream>

namespace cass {

CASS_JSON_ENUM(VarianceKind, {{VarianceKind::sample, "sample"}, {VarianceKind::population, "population"}})

void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where)
{
    if (!given.is_object() || !reference.is_object()) {
        return;
    }
    for (const auto& [key, value] : given.items()) {
        const auto path = where.empty() ? key : where + "." + key;
        if (!reference.contains(key)) {
            throw ConfigError("unknown config key '" + path + "'");
        }
        reject_unknown_keys(value, reference.at(key), path);
    }
}

void apply_override(nlohmann::json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key.path=value, got '" + assignment + "'");
    }
    const auto key = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;
    }
    nlohmann::json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (size_t i = 0; i + 1 < path.size(); ++i) {
        if (node->is_null()) *node = nlohmann::json::object();
        if (!node->is_object()) {
            throw ConfigError("override '" + key + "': '" + path[i] + "' is not inside an object");
        }
        node = &(*node)[path[i]];
    }
    if (node->is_null()) *node = nlohmann::json::object();
    (*node)[path.back()] = value;
}

void to_json(nlohmann::json& j, const DatasetSpec& d)
{
    j = {{"kind", d.kind},
         {"synth", d.synth},
         {"root", d.root},
         {"load_size", d.load_size},
         {"label_table", d.label_table},
         {"split_seed", d.split_seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& d)
{
    const DatasetSpec def;
    d.kind = j.value("kind", def.kind);
    d.synth = j.value("synth", def.synth);
    d.root = j.value("root", def.root);
    d.load_size = j.value("load_size", def.load_size);
    d.label_table = j.value("label_table", def.label_table);
    d.split_seed = j.value("split_seed", def.split_seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    j = {{"name", c.name},
         {"method", c.method},
         {"arm_a", c.arm_a},
         {"arm_b", c.arm_b},
         {"pretrain", c.pretrain},
         {"dino", c.dino},
         {"finetune", c.finetune},
         {"label_fractions", c.label_fractions},
         {"finetune_arms", c.finetune_arms},
         {"augment", c.augment},
         {"dataset", c.dataset},
         {"seeds", c.seeds},
         {"output_dir", c.output_dir},
         {"metric", c.metric},
         {"variance_kind", c.variance_kind}};
    j["sweep"] = c.sweep ? nlohmann::json{{"axis", c.sweep->axis}, {"values", c.sweep->values}} : nlohmann::json();
}

void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    const ExperimentConfig def;
    c.name = j.value("name", def.name);
    c.method = j.value("method", def.method);
    c.arm_a = j.value("arm_a", def.arm_a);
    c.arm_b = j.value("arm_b", def.arm_b);
    c.pretrain = j.value("pretrain", def.pretrain);
    c.dino = j.value("dino", def.dino);
    c.finetune = j.value("finetune", def.finetune);
    c.label_fractions = j.value("label_fractions", def.label_fractions);
    c.finetune_arms = j.value("finetune_arms", def.finetune_arms);
    c.augment = j.value("augment", def.augment);
    c.dataset = j.value("dataset", def.dataset);
    c.seeds = j.value("seeds", def.seeds);
    c.output_dir = j.value("output_dir", def.output_dir);
    c.metric = j.value("metric", def.metric);
    c.variance_kind = j.value("variance_kind", def.variance_kind);
    c.sweep.reset();
    if (j.contains("sweep") && !j.at("sweep").is_null()) {
        const auto& s = j.at("sweep");
        c.sweep = SweepSpec{s.value("axis", std::string()), s.value("values", std::vector<nlohmann::json>{})};
    }
}

namespace {

constexpr const char* kSweepAxes[] = {"batch_size", "epochs", "augment_set", "optimizer_cnn",
                                      "head_variant", "arch_pair", "label_fraction"};

void validate_arm(const ArmSpec& spec, const std::string& which)
{
    if (registry_family(spec.variant) != spec.family) {
        throw ConfigError(which + ": variant '" + spec.variant + "' is not a " + std::string(to_string(spec.family)) +
                          " architecture");
    }
    if (spec.head_dim < 1) {
        throw ConfigError(which + ": head_dim must be positive");
    }
}

}  // namespace

void ExperimentConfig::validate() const
{
    if (method != "cass" && method != "dino" && method != "supervised") {
        throw ConfigError("method must be cass, dino or supervised, got '" + method + "'");
    }
    if (name.empty()) {
        throw ConfigError("name must not be empty");
    }
    validate_arm(arm_a, "arm_a");
    validate_arm(arm_b, "arm_b");
    if (arm_a.head_dim != arm_b.head_dim) {
        throw ConfigError("arm_a and arm_b head_dim differ");
    }
    for (const auto* arm : {&arm_a, &arm_b}) {
        if (arm->image_size != augment.target_size[0] || arm->image_size != augment.target_size[1]) {
            throw ConfigError("arm image_size must equal augment.target_size");
        }
    }
    pretrain.validate();
    dino.validate();
    finetune.validate();
    augment.validate();
    if (label_fractions.empty()) {
        throw ConfigError("label_fractions must not be empty");
    }
    for (double f : label_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fractions must lie in (0, 1]");
    }
    if (finetune_arms.empty()) {
        throw ConfigError("finetune_arms must not be empty");
    }
    std::set<std::string> arms(finetune_arms.begin(), finetune_arms.end());
    if (arms.size() != finetune_arms.size() || std::any_of(arms.begin(), arms.end(), [](const auto& a) {
            return a != "a" && a != "b";
        })) {
        throw ConfigError("finetune_arms entries must be distinct values among \"a\", \"b\"");
    }
    if (seeds.empty()) {
        throw ConfigError("seeds must not be empty");
    }
    if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("seeds must be distinct");
    }
    if (dataset.kind != "synthetic" && dataset.kind != "folder") {
        throw ConfigError("dataset.kind must be synthetic or folder");
    }
    if (dataset.kind == "folder" && dataset.root.empty()) {
        throw ConfigError("dataset.root is required for folder datasets");
    }
    if (metric != "f1_macro" && metric != "balanced_accuracy") {
        throw ConfigError("metric must be f1_macro or balanced_accuracy");
    }
    if (sweep) {
        if (std::find(std::begin(kSweepAxes), std::end(kSweepAxes), sweep->axis) == std::end(kSweepAxes)) {
            throw ConfigError("unknown sweep axis '" + sweep->axis + "'");
        }
        if (sweep->values.empty()) {
            throw ConfigError("sweep.values must not be empty");
        }
        for (const auto& v : sweep->values) with_sweep_value(*this, sweep->axis, v);
    }
}

std::filesystem::path results_root()
{
    const char* env = std::getenv("CASS_RESULTS_ROOT");
    return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("results");
}

std::filesystem::path resolved_output_dir(const ExperimentConfig& c)
{
    return c.output_dir.empty() ? results_root() / c.name : std::filesystem::path(c.output_dir);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides)
{
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        try {
            doc = read_json(path);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("cannot parse " + path.string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    nlohmann::json reference = ExperimentConfig{};
    reference["sweep"] = {{"axis", ""}, {"values", nlohmann::json::array()}};
    reject_unknown_keys(doc, reference);
    ExperimentConfig config;
    try {
        config = doc.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
    config.validate();
    return config;
}

LabeledImageDataset load_dataset(const DatasetSpec& spec)
{
    if (spec.kind == "synthetic") {
        return split(synth_dataset(spec.synth), spec.split_seed);
    }
    FolderOptions options;
    options.root = spec.root;
    options.load_size = spec.load_size;
    options.label_table = spec.label_table;
    return split(load_image_folder(options), spec.split_seed);
}

}  // namespace cass
