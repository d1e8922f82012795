#include "cass/dino.hpp"

#include "cass/errors.hpp"
#include "cass/json_io.hpp"

#include <chrono>
#include <cmath>

namespace cass {

void DinoConfig::validate() const
{
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("dino: momentum must lie in [0, 1]");
    if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) throw ConfigError("dino: center_momentum must lie in [0, 1]");
    if (!(student_temp > 0.0 && teacher_temp > 0.0)) throw ConfigError("dino: temperatures must be positive");
    if (views_per_image < 2) throw ConfigError("dino: at least two views per image");
}

void ema_update(torch::nn::Module& teacher, const torch::nn::Module& student, double m, int64_t* copy_counter)
{
    if (!(m >= 0.0 && m <= 1.0)) {
        throw ContractError("ema_update: momentum must lie in [0, 1]");
    }
    auto t_params = teacher.parameters();
    auto s_params = student.parameters();
    if (t_params.size() != s_params.size()) {
        throw ContractError("ema_update: parameter lists differ");
    }
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < t_params.size(); ++i) {
        if (t_params[i].sizes() != s_params[i].sizes()) {
            throw ContractError("ema_update: shape mismatch");
        }
        t_params[i].mul_(m).add_(s_params[i].detach(), 1.0 - m);
    }
    if (copy_counter != nullptr) {
        *copy_counter += static_cast<int64_t>(t_params.size());
    }
}

TeacherState make_teacher(const ArmModule& student, int64_t* copy_counter)
{
    TeacherState state;
    state.teacher = clone_arm(student);
    for (auto& p : state.teacher->parameters()) {
        p.set_requires_grad(false);
    }
    if (copy_counter != nullptr) {
        *copy_counter += static_cast<int64_t>(state.teacher->parameters().size());
    }
    state.center = torch::zeros({student.spec().head_dim});
    return state;
}

torch::Tensor dino_loss(const std::vector<torch::Tensor>& student_views, const std::vector<torch::Tensor>& teacher_views,
                        const torch::Tensor& center, double student_temp, double teacher_temp)
{
    if (student_views.size() != teacher_views.size() || student_views.size() < 2) {
        throw ContractError("dino_loss: need matching student/teacher view lists of length >= 2");
    }
    std::vector<torch::Tensor> targets;
    for (const auto& t : teacher_views) {
        targets.push_back(torch::softmax((t.detach() - center) / teacher_temp, -1));
    }
    torch::Tensor total;
    int64_t terms = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        for (size_t j = 0; j < student_views.size(); ++j) {
            if (i == j) continue;
            auto log_p = torch::log_softmax(student_views[j] / student_temp, -1);
            auto ce = -(targets[i] * log_p).sum(-1).mean();
            total = total.defined() ? total + ce : ce;
            ++terms;
        }
    }
    return total / static_cast<double>(terms);
}

torch::Tensor update_center(const torch::Tensor& center, const std::vector<torch::Tensor>& teacher_views,
                            double center_momentum)
{
    auto batch_mean = torch::cat(teacher_views, 0).detach().mean(0);
    return center * center_momentum + batch_mean * (1.0 - center_momentum);
}

DinoState make_dino_state(ArmModule& student, const PretrainConfig& schedule)
{
    DinoState state;
    state.optimizer = make_optimizer(student, OptimizerKind::adam, schedule);
    return state;
}

double dino_step(const std::vector<torch::Tensor>& views, ArmModule& student, TeacherState& teacher, DinoState& state,
                 const PretrainConfig& schedule, const DinoConfig& cfg)
{
    if (static_cast<int64_t>(views.size()) < 2) {
        throw ContractError("dino_step: needs at least two augmented views");
    }
    std::vector<torch::Tensor> teacher_out;
    {
        torch::NoGradGuard no_grad;
        for (const auto& v : views) {
            teacher_out.push_back(teacher.teacher->forward(v).logits.values);
        }
    }
    std::vector<torch::Tensor> student_out;
    for (const auto& v : views) {
        student_out.push_back(student.forward(v).logits.values);
    }
    state.counters.forward_passes += 2 * static_cast<int64_t>(views.size());

    state.optimizer->zero_grad();
    auto loss = dino_loss(student_out, teacher_out, teacher.center, cfg.student_temp, cfg.teacher_temp);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        throw DivergenceError("dino: non-finite loss at epoch " + std::to_string(state.epoch) + ", step " +
                              std::to_string(state.global_step));
    }
    loss.backward();
    const int64_t position = schedule.cosine_unit == ScheduleUnit::step ? state.global_step : state.epoch;
    set_learning_rate(*state.optimizer, cosine_lr(position, schedule));
    state.optimizer->step();

    ema_update(*teacher.teacher, student, cfg.momentum, &state.counters.parameter_copy_ops);
    teacher.center = update_center(teacher.center, teacher_out, cfg.center_momentum);

    state.global_step += 1;
    state.counters.steps += 1;
    state.loss_history.push_back(value);
    return value;
}

DinoResult dino_pretrain(const LabeledImageDataset& dataset, const ArmSpec& spec, const PretrainConfig& schedule,
                         const DinoConfig& cfg, const AugmentConfig& augment, const std::filesystem::path& out_dir)
{
    schedule.validate();
    cfg.validate();
    augment.validate();
    auto indices = pretraining_indices(dataset);
    if (indices.empty()) {
        throw ConfigError("dino: dataset has no training samples");
    }
    std::filesystem::create_directories(out_dir);

    const auto started = std::chrono::steady_clock::now();
    auto student = build_arm(spec, schedule.seed);
    student->train(true);
    DinoState state = make_dino_state(*student, schedule);
    TeacherState teacher = make_teacher(*student, &state.counters.parameter_copy_ops);
    teacher.teacher->train(true);
    AugmentCounter augment_counter;
    Rng rng(schedule.seed ^ 0x9E3779B97F4A7C15ULL);

    RunRecord record;
    record.method = "dino";
    record.seed = schedule.seed;
    record.config = {{"pretrain", schedule}, {"dino", cfg}, {"augment", augment}, {"arm", student->spec()}};

    for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        state.epoch = epoch;
        std::shuffle(indices.begin(), indices.end(), rng);
        double epoch_loss = 0.0;
        int64_t epoch_steps = 0;
        for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(schedule.batch_size)) {
            const size_t end = std::min(indices.size(), start + static_cast<size_t>(schedule.batch_size));
            std::vector<torch::Tensor> views;
            for (int64_t v = 0; v < cfg.views_per_image; ++v) {
                std::vector<torch::Tensor> batch;
                for (size_t k = start; k < end; ++k) {
                    batch.push_back(apply_augmentations(dataset.samples[static_cast<size_t>(indices[k])].image,
                                                        augment, rng, &augment_counter));
                }
                views.push_back(torch::stack(batch));
            }
            epoch_loss += dino_step(views, *student, teacher, state, schedule, cfg);
            ++epoch_steps;
        }
        record.loss_curve.push_back(epoch_loss / static_cast<double>(epoch_steps));
    }
    state.counters.augmentation_applications = augment_counter.applications();

    DinoResult result;
    result.checkpoint = out_dir / ("dino_" + spec.variant + ".pt");
    save_checkpoint(*teacher.teacher, CheckpointMeta{teacher.teacher->spec(), schedule.seed, schedule.epochs, false, "dino"},
                    result.checkpoint);
    record.checkpoints["teacher"] = result.checkpoint.string();
    record.counters = state.counters;
    record.wall_clock_seconds["pretrain"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    save_record(record, out_dir / ("dino_" + spec.variant + "_record.json"));
    result.record = std::move(record);
    return result;
}

}  // namespace cass
