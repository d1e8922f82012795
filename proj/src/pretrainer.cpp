#include "cass/pretrainer.hpp"

#include "cass/errors.hpp"
#include "cass/json_io.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cass {
namespace {

std::vector<torch::Tensor> parameter_values(const torch::nn::Module& m)
{
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) {
        out.push_back(p.detach().clone());
    }
    return out;
}

void load_parameter_values(torch::nn::Module& m, const std::vector<torch::Tensor>& values)
{
    torch::NoGradGuard no_grad;
    auto params = m.parameters();
    if (params.size() != values.size()) {
        throw ContractError("parameter count mismatch while loading averaged weights");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        params[i].copy_(values[i]);
    }
}

std::string recent_losses(const std::vector<double>& h)
{
    std::ostringstream os;
    const size_t from = h.size() > 5 ? h.size() - 5 : 0;
    for (size_t i = from; i < h.size(); ++i) {
        os << (i > from ? ", " : "") << h[i];
    }
    return os.str();
}

}  // namespace

void PretrainConfig::validate() const
{
    if (epochs < 1) throw ConfigError("pretrain: epochs must be positive");
    if (batch_size < 1) throw ConfigError("pretrain: batch_size must be positive");
    if (!(lr_min < lr_max)) throw ConfigError("pretrain: lr_min must be below lr_max");
    if (lr_min < 0.0) throw ConfigError("pretrain: lr_min must be non-negative");
    if (cosine_T < 1) throw ConfigError("pretrain: cosine_T must be at least 1");
    if (swa.update_every < 1) throw ConfigError("pretrain: swa.update_every must be positive");
    if (swa.enabled && swa_start() >= epochs) throw ConfigError("pretrain: swa.start_epoch must precede the last epoch");
    if (!(norm_eps > 0.0)) throw ConfigError("pretrain: norm_eps must be positive");
    if (optimizer_other != OptimizerKind::adam) throw ConfigError("pretrain: the non-cnn arm is trained with adam");
}

int64_t PretrainConfig::swa_start() const
{
    if (swa.start_epoch >= 0) {
        return swa.start_epoch;
    }
    const auto s = static_cast<int64_t>(std::ceil(0.75 * static_cast<double>(epochs)));
    return std::min(s, epochs - 1);
}

double cosine_lr(int64_t step, const PretrainConfig& cfg)
{
    if (step < 0) {
        throw ContractError("cosine_lr: step must be non-negative");
    }
    const double phase = static_cast<double>(step % cfg.cosine_T) / static_cast<double>(cfg.cosine_T);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

torch::Tensor swa_update(const torch::Tensor& avg, const torch::Tensor& current, int64_t n)
{
    if (n < 0) {
        throw ContractError("swa_update: snapshot count must be non-negative");
    }
    if (n == 0) {
        return current.detach().clone();
    }
    if (avg.sizes() != current.sizes()) {
        throw ContractError("swa_update: shape mismatch");
    }
    const double nn = static_cast<double>(n);
    return (avg * nn + current.detach()) / (nn + 1.0);
}

std::vector<torch::Tensor> swa_update(const std::vector<torch::Tensor>& avg, const std::vector<torch::Tensor>& current,
                                      int64_t n)
{
    if (n > 0 && avg.size() != current.size()) {
        throw ContractError("swa_update: tensor count mismatch");
    }
    std::vector<torch::Tensor> out;
    out.reserve(current.size());
    for (size_t i = 0; i < current.size(); ++i) {
        out.push_back(swa_update(n == 0 ? torch::Tensor() : avg[i], current[i], n));
    }
    return out;
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(ArmModule& arm, OptimizerKind kind, const PretrainConfig& cfg)
{
    if (kind == OptimizerKind::sgd) {
        return std::make_unique<torch::optim::SGD>(
            arm.parameters(),
            torch::optim::SGDOptions(cfg.lr_max).momentum(cfg.sgd_momentum).weight_decay(cfg.weight_decay));
    }
    return std::make_unique<torch::optim::Adam>(
        arm.parameters(), torch::optim::AdamOptions(cfg.lr_max)
                              .betas({cfg.adam_beta1, cfg.adam_beta2})
                              .weight_decay(cfg.weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr)
{
    for (auto& group : opt.param_groups()) {
        group.options().set_lr(lr);
    }
}

PretrainState make_pretrain_state(ArmPair& pair, const PretrainConfig& cfg)
{
    PretrainState state;
    auto kind_for = [&](const ArmModule& arm) {
        return arm.family() == ArmFamily::cnn ? cfg.optimizer_cnn : cfg.optimizer_other;
    };
    state.arm_a.optimizer = make_optimizer(*pair.arm_a, kind_for(*pair.arm_a), cfg);
    state.arm_b.optimizer = make_optimizer(*pair.arm_b, kind_for(*pair.arm_b), cfg);
    return state;
}

torch::Tensor compute_pair_gradients(const torch::Tensor& batch, ArmPair& pair, PretrainState& state,
                                     const PretrainConfig& cfg)
{
    state.arm_a.optimizer->zero_grad();
    state.arm_b.optimizer->zero_grad();
    auto r = pair.arm_a->forward(batch).logits;
    auto t = pair.arm_b->forward(batch).logits;
    state.counters.forward_passes += 2;
    if (!torch::isfinite(r.values).all().item<bool>() || !torch::isfinite(t.values).all().item<bool>()) {
        throw DivergenceError("pretrain: non-finite arm output at epoch " + std::to_string(state.epoch) + ", step " +
                              std::to_string(state.global_step) + "; recent losses [" +
                              recent_losses(state.loss_history) + "]");
    }
    auto loss = cass_loss(apply_head(r, cfg.head_variant), apply_head(t, cfg.head_variant), cfg.norm_eps);
    if (!std::isfinite(loss.item<double>())) {
        throw DivergenceError("pretrain: non-finite loss at epoch " + std::to_string(state.epoch) + ", step " +
                              std::to_string(state.global_step) + "; recent losses [" +
                              recent_losses(state.loss_history) + "]");
    }
    loss.backward();
    return loss.detach();
}

void apply_pair_updates(ArmPair& /*pair*/, PretrainState& state, const PretrainConfig& cfg)
{
    const int64_t position = cfg.cosine_unit == ScheduleUnit::step ? state.global_step : state.epoch;
    const double lr = cosine_lr(position, cfg);
    set_learning_rate(*state.arm_a.optimizer, lr);
    set_learning_rate(*state.arm_b.optimizer, lr);
    state.arm_a.optimizer->step();
    state.arm_b.optimizer->step();
    state.global_step += 1;
    state.counters.steps += 1;
}

double pretrain_step(const torch::Tensor& batch, ArmPair& pair, PretrainState& state, const PretrainConfig& cfg)
{
    const double loss = compute_pair_gradients(batch, pair, state, cfg).item<double>();
    if (loss > 4.0 + 1e-6) {
        throw DivergenceError("pretrain: loss " + std::to_string(loss) + " left [0, 4] at step " +
                              std::to_string(state.global_step));
    }
    state.high_loss_streak = loss > cfg.divergence_level ? state.high_loss_streak + 1 : 0;
    if (state.high_loss_streak >= cfg.divergence_patience) {
        throw DivergenceError("pretrain: " + std::to_string(state.high_loss_streak) +
                              " consecutive steps above " + std::to_string(cfg.divergence_level) + " at step " +
                              std::to_string(state.global_step) + "; recent losses [" +
                              recent_losses(state.loss_history) + "]");
    }
    apply_pair_updates(pair, state, cfg);
    state.loss_history.push_back(loss);
    return loss;
}

void record_swa_snapshot(ArmPair& pair, PretrainState& state)
{
    const auto n = state.swa_snapshots;
    // Running means are kept in double so they track the exact mean of the float snapshots.
    auto widen = [](std::vector<torch::Tensor> v) {
        for (auto& t : v) t = t.to(torch::kFloat64);
        return v;
    };
    state.arm_a.swa_average = swa_update(state.arm_a.swa_average, widen(parameter_values(*pair.arm_a)), n);
    state.arm_b.swa_average = swa_update(state.arm_b.swa_average, widen(parameter_values(*pair.arm_b)), n);
    state.swa_snapshots = n + 1;
}

int64_t refresh_batch_norm(ArmModule& arm, const std::vector<torch::Tensor>& images, int64_t batch_size)
{
    std::vector<std::pair<torch::nn::BatchNorm2dImpl*, std::optional<double>>> norms;
    for (auto& m : arm.modules(/*include_self=*/false)) {
        if (auto* bn = dynamic_cast<torch::nn::BatchNorm2dImpl*>(m.get())) {
            norms.emplace_back(bn, bn->options.momentum());
            bn->reset_running_stats();
            bn->options.momentum(std::nullopt);
        }
    }
    if (norms.empty() || images.empty()) {
        for (auto& [bn, momentum] : norms) bn->options.momentum(momentum);
        return 0;
    }
    const bool was_training = arm.is_training();
    arm.train(true);
    torch::NoGradGuard no_grad;
    int64_t passes = 0;
    for (size_t start = 0; start < images.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(images.size(), start + static_cast<size_t>(batch_size));
        std::vector<torch::Tensor> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                         images.begin() + static_cast<std::ptrdiff_t>(end));
        arm.forward(torch::stack(chunk));
        ++passes;
    }
    for (auto& [bn, momentum] : norms) bn->options.momentum(momentum);
    arm.train(was_training);
    return passes;
}

int64_t expected_steps(int64_t n, int64_t batch_size, int64_t epochs)
{
    return epochs * ((n + batch_size - 1) / batch_size);
}

std::vector<int64_t> pretraining_indices(const LabeledImageDataset& dataset)
{
    return dataset.has_splits() ? dataset.indices(Split::train) : dataset.indices(Split::unassigned);
}

PretrainResult pretrain(const LabeledImageDataset& dataset, ArmPair& pair, const PretrainConfig& cfg,
                        const AugmentConfig& augment, const std::filesystem::path& out_dir,
                        const PretrainHooks& hooks)
{
    cfg.validate();
    augment.validate();
    auto indices = pretraining_indices(dataset);
    if (indices.empty()) {
        throw ConfigError("pretrain: dataset has no training samples");
    }
    std::filesystem::create_directories(out_dir);

    const auto started = std::chrono::steady_clock::now();
    PretrainState state = make_pretrain_state(pair, cfg);
    AugmentCounter augment_counter;
    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    pair.arm_a->train(true);
    pair.arm_b->train(true);

    RunRecord record;
    record.method = "cass";
    record.seed = cfg.seed;
    record.config = {{"pretrain", cfg},
                     {"augment", augment},
                     {"arm_a", pair.arm_a->spec()},
                     {"arm_b", pair.arm_b->spec()},
                     {"pairing_kind", std::string(to_string(pair.pairing_kind))}};

    const int64_t swa_start = cfg.swa_start();
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        std::shuffle(indices.begin(), indices.end(), rng);
        double epoch_loss = 0.0;
        int64_t epoch_steps = 0;
        for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(indices.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<torch::Tensor> views;
            views.reserve(end - start);
            for (size_t k = start; k < end; ++k) {
                views.push_back(apply_augmentations(dataset.samples[static_cast<size_t>(indices[k])].image, augment,
                                                    rng, &augment_counter));
            }
            epoch_loss += pretrain_step(torch::stack(views), pair, state, cfg);
            ++epoch_steps;
        }
        record.loss_curve.push_back(epoch_loss / static_cast<double>(epoch_steps));
        if (cfg.swa.enabled && epoch >= swa_start && (epoch - swa_start) % cfg.swa.update_every == 0) {
            record_swa_snapshot(pair, state);
            if (hooks.on_swa_snapshot) hooks.on_swa_snapshot(epoch, pair);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, pair);
    }
    state.counters.augmentation_applications = augment_counter.applications();

    PretrainResult result;
    result.checkpoint_a = out_dir / "arm_a.pt";
    result.checkpoint_b = out_dir / "arm_b.pt";
    CheckpointMeta meta_a{pair.arm_a->spec(), cfg.seed, cfg.epochs, false, "cass"};
    CheckpointMeta meta_b{pair.arm_b->spec(), cfg.seed, cfg.epochs, false, "cass"};

    if (cfg.swa.enabled && state.swa_snapshots > 0) {
        save_checkpoint(*pair.arm_a, meta_a, out_dir / "arm_a_raw.pt");
        save_checkpoint(*pair.arm_b, meta_b, out_dir / "arm_b_raw.pt");
        record.checkpoints["arm_a_raw"] = (out_dir / "arm_a_raw.pt").string();
        record.checkpoints["arm_b_raw"] = (out_dir / "arm_b_raw.pt").string();

        load_parameter_values(*pair.arm_a, state.arm_a.swa_average);
        load_parameter_values(*pair.arm_b, state.arm_b.swa_average);
        std::vector<torch::Tensor> prepared;
        prepared.reserve(indices.size());
        for (auto i : indices) {
            prepared.push_back(prepare_image(dataset.samples[static_cast<size_t>(i)].image, augment));
        }
        state.counters.bn_refresh_passes += refresh_batch_norm(*pair.arm_a, prepared, cfg.batch_size);
        state.counters.bn_refresh_passes += refresh_batch_norm(*pair.arm_b, prepared, cfg.batch_size);
        meta_a.swa = meta_b.swa = true;
    }
    save_checkpoint(*pair.arm_a, meta_a, result.checkpoint_a);
    save_checkpoint(*pair.arm_b, meta_b, result.checkpoint_b);
    record.checkpoints["arm_a"] = result.checkpoint_a.string();
    record.checkpoints["arm_b"] = result.checkpoint_b.string();

    record.counters = state.counters;
    record.config["swa_snapshots"] = state.swa_snapshots;
    record.wall_clock_seconds["pretrain"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    save_record(record, out_dir / "pretrain_record.json");
    result.record = std::move(record);
    return result;
}

}  // namespace cass
