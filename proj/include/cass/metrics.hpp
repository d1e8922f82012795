#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cass {

struct MetricReport {
    std::string metric_name;
    double value = 0.0;
    /// Class ids that entered the aggregate, and their per-class scores (same order).
    std::vector<int64_t> classes;
    std::vector<double> per_class;
    /// Classes skipped because the metric is undefined for them.
    std::vector<int64_t> excluded_classes;
    int64_t n_samples = 0;
};

/// Macro F1 over the classes that occur in either predictions or targets; per-class 2TP / (2TP + FP + FN).
MetricReport f1_macro(std::span<const int64_t> predictions, std::span<const int64_t> targets);

/// Multilabel macro F1 over binary indicator columns (rows are samples). Classes with no positive
/// in either predictions or targets are excluded and flagged.
MetricReport f1_macro_multilabel(const std::vector<std::vector<uint8_t>>& predictions,
                                 const std::vector<std::vector<uint8_t>>& targets);

/// Unweighted mean of per-class recall TP / (TP + FN). Classes absent from the targets but
/// present in the predictions are excluded and flagged.
MetricReport balanced_accuracy(std::span<const int64_t> predictions, std::span<const int64_t> targets);

struct ConfidenceInterval {
    double mean = 0.0;
    double halfwidth = 0.0;
};

/// Two-sided 95% Student-t interval with n - 1 degrees of freedom.
ConfidenceInterval ci95(std::span<const double> values);

/// Quantile of the Student t distribution.
double student_t_quantile(double p, double dof);

}  // namespace cass
