#pragma once

#include "cass/experiment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cass {

/// Markdown table, one row per aggregate row: mean ± halfwidth with the seed count.
std::string aggregate_table(const std::vector<AggregateRow>& rows);

struct PlotSeries {
    std::string name;
    std::vector<double> y;
    /// Optional error bars (same length as y).
    std::vector<double> err;
};

/// Line plot over categorical x positions, written as PNG.
void line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<std::string>& x_labels,
               const std::vector<PlotSeries>& series);

struct ReportFiles {
    std::filesystem::path markdown;
    std::vector<std::filesystem::path> plots;
};

/// Summarizes an experiment directory (aggregate.json, sweep.json and/or cost.json) into report.md,
/// loss-curve and metric-vs-sweep plots. Heatmap PNGs under analysis/ are linked.
ReportFiles write_report(const std::filesystem::path& experiment_dir);

}  // namespace cass
