#include "cass/finetuner.hpp"

#include "cass/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace cass {
namespace {

struct ModelState {
    std::vector<torch::Tensor> params;
    std::vector<torch::Tensor> buffers;
};

ModelState capture(const torch::nn::Module& m)
{
    ModelState s;
    for (const auto& p : m.parameters()) s.params.push_back(p.detach().clone());
    for (const auto& b : m.buffers()) s.buffers.push_back(b.detach().clone());
    return s;
}

void restore(torch::nn::Module& m, const ModelState& s)
{
    torch::NoGradGuard no_grad;
    auto params = m.parameters();
    auto buffers = m.buffers();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(s.params[i]);
    for (size_t i = 0; i < buffers.size(); ++i) buffers[i].copy_(s.buffers[i]);
}

torch::Tensor batch_targets(const LabeledImageDataset& ds, const std::vector<int64_t>& idx, size_t start, size_t end)
{
    if (ds.task == TaskKind::multiclass) {
        std::vector<int64_t> labels;
        for (size_t k = start; k < end; ++k) labels.push_back(ds.samples[static_cast<size_t>(idx[k])].label);
        return torch::tensor(labels, torch::kInt64);
    }
    auto t = torch::zeros({static_cast<int64_t>(end - start), ds.num_classes()});
    auto acc = t.accessor<float, 2>();
    for (size_t k = start; k < end; ++k) {
        const auto& hot = ds.samples[static_cast<size_t>(idx[k])].multi_hot;
        for (size_t c = 0; c < hot.size(); ++c) acc[static_cast<int64_t>(k - start)][static_cast<int64_t>(c)] = hot[c];
    }
    return t;
}

torch::Tensor objective(const torch::Tensor& logits, const torch::Tensor& targets, TaskKind task,
                        const ClassWeights& w, const FinetuneConfig& cfg)
{
    return task == TaskKind::multiclass ? focal_loss(logits, targets, w, cfg.focal_gamma, cfg.focal_alpha)
                                        : focal_loss_multilabel(logits, targets, w, cfg.focal_gamma, cfg.focal_alpha);
}

torch::Tensor prepared_batch(const LabeledImageDataset& ds, const std::vector<int64_t>& idx, size_t start, size_t end,
                             const AugmentConfig& augment)
{
    std::vector<torch::Tensor> images;
    for (size_t k = start; k < end; ++k) {
        images.push_back(prepare_image(ds.samples[static_cast<size_t>(idx[k])].image, augment));
    }
    return torch::stack(images);
}

}  // namespace

void FinetuneConfig::validate() const
{
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("finetune: label_fraction must lie in (0, 1]");
    if (max_epochs < 1) throw ConfigError("finetune: max_epochs must be positive");
    if (patience < 1 || patience >= max_epochs) throw ConfigError("finetune: need 1 <= patience < max_epochs");
    if (!(lr > 0.0)) throw ConfigError("finetune: lr must be positive");
    if (batch_size < 1) throw ConfigError("finetune: batch_size must be positive");
    if (focal_gamma < 0.0) throw ConfigError("finetune: focal_gamma must be non-negative");
}

ClassWeights class_weights(const std::vector<int64_t>& counts, WeightMode mode)
{
    if (counts.empty()) {
        throw ContractError("class_weights: empty counts");
    }
    if (std::all_of(counts.begin(), counts.end(), [](int64_t c) { return c == 0; })) {
        throw ContractError("class_weights: all counts are zero");
    }
    const auto [lo_it, hi_it] = std::minmax_element(counts.begin(), counts.end());
    const double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
    ClassWeights w;
    if (hi == lo) {
        w.weights.assign(counts.size(), 1.0);
        return w;
    }
    for (auto c : counts) {
        const double n = mode == WeightMode::minmax_literal ? static_cast<double>(c) : hi + lo - static_cast<double>(c);
        w.weights.push_back((n - lo) / (hi - lo));
    }
    return w;
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, const ClassWeights& w, double gamma,
                         double alpha)
{
    if (logits.dim() != 2) throw ContractError("focal_loss: logits must be (B, C)");
    const auto classes = logits.size(1);
    if (static_cast<int64_t>(w.weights.size()) != classes) {
        throw ContractError("focal_loss: weight count differs from class count");
    }
    if (targets.dim() != 1 || targets.size(0) != logits.size(0)) {
        throw ContractError("focal_loss: expected one target per row");
    }
    if (targets.numel() > 0 && (targets.min().item<int64_t>() < 0 || targets.max().item<int64_t>() >= classes)) {
        throw ContractError("focal_loss: target out of range");
    }
    auto log_p = torch::log_softmax(logits, -1).gather(1, targets.view({-1, 1})).squeeze(1);
    auto p = log_p.exp();
    auto weights = torch::tensor(w.weights, logits.options()).index_select(0, targets);
    auto per_sample = -alpha * weights * torch::pow(1.0 - p, gamma) * log_p;
    return per_sample.mean();
}

torch::Tensor focal_loss_multilabel(const torch::Tensor& logits, const torch::Tensor& targets, const ClassWeights& w,
                                    double gamma, double alpha)
{
    if (logits.dim() != 2 || targets.sizes() != logits.sizes()) {
        throw ContractError("focal_loss_multilabel: logits and targets must both be (B, C)");
    }
    if (static_cast<int64_t>(w.weights.size()) != logits.size(1)) {
        throw ContractError("focal_loss_multilabel: weight count differs from class count");
    }
    auto y = targets.to(logits.scalar_type());
    auto log_p = torch::nn::functional::logsigmoid(logits);
    auto log_q = torch::nn::functional::logsigmoid(-logits);
    auto p = log_p.exp();
    auto terms = y * torch::pow(1.0 - p, gamma) * log_p + (1.0 - y) * torch::pow(p, gamma) * log_q;
    auto weights = torch::tensor(w.weights, logits.options()).view({1, -1});
    return (-alpha * weights * terms).mean();
}

std::vector<int64_t> subset_labels(const LabeledImageDataset& dataset, const std::vector<int64_t>& train_indices,
                                   double fraction, uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("subset_labels: fraction must lie in (0, 1]");
    }
    const auto n = static_cast<int64_t>(train_indices.size());
    const auto want = static_cast<int64_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
    if (want < 1) {
        throw ConfigError("subset_labels: fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                          " samples selects nothing");
    }
    if (fraction == 1.0) {
        return train_indices;
    }
    Rng rng(seed ^ 0x5EEDF00DULL);
    std::map<int64_t, std::vector<int64_t>> strata;
    for (auto i : train_indices) strata[dataset.strata_key(i)].push_back(i);

    struct Quota {
        int64_t key;
        int64_t take;
        double remainder;
        int64_t size;
    };
    std::vector<Quota> quotas;
    int64_t taken = 0;
    for (auto& [key, members] : strata) {
        std::shuffle(members.begin(), members.end(), rng);
        const double exact = fraction * static_cast<double>(members.size());
        const auto take = static_cast<int64_t>(std::floor(exact + 1e-9));
        quotas.push_back({key, take, exact - static_cast<double>(take), static_cast<int64_t>(members.size())});
        taken += take;
    }
    // Leftover slots: largest remainder first, ties broken by a seeded order.
    std::shuffle(quotas.begin(), quotas.end(), rng);
    std::stable_sort(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
    for (size_t i = 0; taken < want; i = (i + 1) % quotas.size()) {
        if (quotas[i].take < quotas[i].size) {
            ++quotas[i].take;
            ++taken;
        }
    }
    std::vector<int64_t> out;
    for (const auto& q : quotas) {
        const auto& members = strata[q.key];
        out.insert(out.end(), members.begin(), members.begin() + q.take);
    }
    std::sort(out.begin(), out.end());
    return out;
}

EarlyStopping::EarlyStopping(int64_t patience) : patience_(patience)
{
    if (patience < 1) {
        throw ConfigError("early stopping patience must be positive");
    }
}

bool EarlyStopping::update(double val_loss)
{
    ++epochs_;
    improved_last_ = epochs_ == 1 || val_loss < best_;
    if (improved_last_) {
        best_ = val_loss;
        best_epoch_ = epochs_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

std::vector<MetricReport> evaluate(ArmModule& model, const LabeledImageDataset& dataset,
                                   const std::vector<int64_t>& indices, const AugmentConfig& augment,
                                   double multilabel_threshold)
{
    if (indices.empty()) {
        throw ContractError("evaluate: no samples");
    }
    const bool was_training = model.is_training();
    model.eval();
    torch::NoGradGuard no_grad;
    std::vector<int64_t> preds, targets;
    std::vector<std::vector<uint8_t>> hot_preds, hot_targets;
    constexpr size_t kChunk = 64;
    for (size_t start = 0; start < indices.size(); start += kChunk) {
        const size_t end = std::min(indices.size(), start + kChunk);
        auto logits = model.logits(prepared_batch(dataset, indices, start, end, augment));
        if (dataset.task == TaskKind::multiclass) {
            auto arg = logits.argmax(1);
            for (int64_t k = 0; k < arg.size(0); ++k) {
                preds.push_back(arg[k].item<int64_t>());
                targets.push_back(dataset.samples[static_cast<size_t>(indices[start + static_cast<size_t>(k)])].label);
            }
        } else {
            auto on = (torch::sigmoid(logits) >= multilabel_threshold).to(torch::kUInt8).contiguous();
            for (int64_t k = 0; k < on.size(0); ++k) {
                auto row = on[k];
                hot_preds.emplace_back(row.data_ptr<uint8_t>(), row.data_ptr<uint8_t>() + row.numel());
                hot_targets.push_back(dataset.samples[static_cast<size_t>(indices[start + static_cast<size_t>(k)])].multi_hot);
            }
        }
    }
    model.train(was_training);
    if (dataset.task == TaskKind::multiclass) {
        return {f1_macro(preds, targets), balanced_accuracy(preds, targets)};
    }
    return {f1_macro_multilabel(hot_preds, hot_targets)};
}

double evaluate_loss(ArmModule& model, const LabeledImageDataset& dataset, const std::vector<int64_t>& indices,
                     const AugmentConfig& augment, const ClassWeights& weights, const FinetuneConfig& cfg)
{
    const bool was_training = model.is_training();
    model.eval();
    torch::NoGradGuard no_grad;
    double total = 0.0;
    constexpr size_t kChunk = 64;
    for (size_t start = 0; start < indices.size(); start += kChunk) {
        const size_t end = std::min(indices.size(), start + kChunk);
        auto logits = model.logits(prepared_batch(dataset, indices, start, end, augment));
        auto loss = objective(logits, batch_targets(dataset, indices, start, end), dataset.task, weights, cfg);
        total += loss.item<double>() * static_cast<double>(end - start);
    }
    model.train(was_training);
    return total / static_cast<double>(indices.size());
}

FinetuneResult finetune(ArmHandle model, const LabeledImageDataset& dataset, const FinetuneConfig& cfg,
                        const AugmentConfig& augment)
{
    cfg.validate();
    augment.validate();
    if (!dataset.has_splits()) {
        throw ConfigError("finetune: dataset must be split first");
    }
    const auto started = std::chrono::steady_clock::now();
    dataset.reset_audit();

    torch::manual_seed(cfg.seed);
    model->replace_head(dataset.num_classes());
    if (model->spec().head_dim != dataset.num_classes()) {
        throw ContractError("finetune: head does not match the class count");
    }
    for (auto& p : model->parameters()) {
        p.set_requires_grad(true);
    }

    const auto train_all = dataset.indices(Split::train);
    auto subset = subset_labels(dataset, train_all, cfg.label_fraction, cfg.seed);
    const auto val = dataset.indices(Split::val);
    if (val.empty()) {
        throw ConfigError("finetune: validation split is empty");
    }
    const auto weights = class_weights(dataset.class_counts(subset), cfg.weight_mode);

    torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(cfg.lr));
    EarlyStopping stopper(cfg.patience);
    ModelState best = capture(*model);
    Rng rng(cfg.seed ^ 0xF17E7E11ULL);

    FinetuneEntry entry;
    entry.variant = model->spec().variant;
    entry.label_fraction = cfg.label_fraction;
    entry.train_samples = static_cast<int64_t>(subset.size());

    auto order = subset;
    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                                         static_cast<double>(cfg.max_epochs)));
        for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);

        model->train(true);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<torch::Tensor> images;
            for (size_t k = start; k < end; ++k) {
                const auto& img = dataset.samples[static_cast<size_t>(order[k])].image;
                images.push_back(cfg.augment_training ? apply_augmentations(img, augment, rng) : prepare_image(img, augment));
            }
            optimizer.zero_grad();
            auto loss = objective(model->logits(torch::stack(images)), batch_targets(dataset, order, start, end),
                                  dataset.task, weights, cfg);
            if (!std::isfinite(loss.item<double>())) {
                throw DivergenceError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
            }
            loss.backward();
            optimizer.step();
            epoch_loss += loss.item<double>() * static_cast<double>(end - start);
        }
        entry.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        const double val_loss = evaluate_loss(*model, dataset, val, augment, weights, cfg);
        entry.val_loss.push_back(val_loss);
        const bool stop = stopper.update(val_loss);
        if (stopper.improved_last()) {
            best = capture(*model);
        }
        if (stop) break;
    }
    restore(*model, best);
    entry.epochs_run = stopper.epochs_seen();
    entry.best_epoch = stopper.best_epoch();
    entry.test_reads_during_training = dataset.test_reads();

    entry.metrics = evaluate(*model, dataset, dataset.indices(Split::test), augment, cfg.multilabel_threshold);
    entry.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    model->eval();
    return {model, entry, subset};
}

FinetuneResult finetune(const std::filesystem::path& checkpoint, const LabeledImageDataset& dataset,
                        const FinetuneConfig& cfg, const AugmentConfig& augment)
{
    auto loaded = load_checkpoint(checkpoint);
    auto result = finetune(loaded.arm, dataset, cfg, augment);
    result.entry.checkpoint = checkpoint.string();
    return result;
}

}  // namespace cass
