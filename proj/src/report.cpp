#include "cass/report.hpp"

#include "cass/errors.hpp"
#include "cass/json_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace cass {
namespace {

const cv::Scalar kPalette[] = {{180, 90, 30}, {40, 120, 230}, {60, 160, 60}, {40, 40, 200}, {150, 80, 150}, {90, 90, 90}};

std::string fixed(double v, int digits = 4)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::vector<RunRecord> seed_records(const std::filesystem::path& dir)
{
    std::vector<RunRecord> out;
    if (!std::filesystem::exists(dir)) return out;
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto rec = entry.path() / "record.json";
        if (entry.is_directory() && entry.path().filename().string().starts_with("seed_") && std::filesystem::exists(rec)) {
            paths.push_back(rec);
        }
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) out.push_back(load_record(p));
    return out;
}

}  // namespace

std::string aggregate_table(const std::vector<AggregateRow>& rows)
{
    std::ostringstream s;
    s << "| method | arm | variant | labels | metric | mean ± 95% CI | seeds |\n";
    s << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        s << "| " << r.method << " | " << r.arm << " | " << r.variant << " | " << r.label_fraction * 100.0 << "% | "
          << r.metric << " | " << fixed(r.mean) << " ± " << fixed(r.halfwidth) << " | " << r.values.size() << " |\n";
    }
    return s.str();
}

void line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<std::string>& x_labels,
               const std::vector<PlotSeries>& series)
{
    if (x_labels.empty() || series.empty()) {
        throw ContractError("line_plot: nothing to draw");
    }
    constexpr int kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
    cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.y.size(); ++i) {
            const double e = i < s.err.size() ? s.err[i] : 0.0;
            lo = std::min(lo, s.y[i] - e);
            hi = std::max(hi, s.y[i] + e);
        }
    }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const int plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    auto px = [&](size_t i) {
        return kLeft + (x_labels.size() == 1 ? plot_w / 2
                                             : static_cast<int>(std::lround(static_cast<double>(i) * plot_w /
                                                                            static_cast<double>(x_labels.size() - 1))));
    };
    auto py = [&](double v) { return kTop + static_cast<int>(std::lround((hi - v) / (hi - lo) * plot_h)); };

    const auto axis = cv::Scalar(0, 0, 0);
    cv::line(img, {kLeft, kTop}, {kLeft, kTop + plot_h}, axis, 1);
    cv::line(img, {kLeft, kTop + plot_h}, {kLeft + plot_w, kTop + plot_h}, axis, 1);
    cv::putText(img, title, {kLeft, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.55, axis, 1, cv::LINE_AA);
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        cv::line(img, {kLeft - 4, py(v)}, {kLeft, py(v)}, axis, 1);
        cv::putText(img, fixed(v, 3), {4, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
    }
    const size_t label_step = std::max<size_t>(1, x_labels.size() / 10);
    for (size_t i = 0; i < x_labels.size(); i += label_step) {
        cv::line(img, {px(i), kTop + plot_h}, {px(i), kTop + plot_h + 4}, axis, 1);
        cv::putText(img, x_labels[i], {px(i) - 10, kTop + plot_h + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1,
                    cv::LINE_AA);
    }
    for (size_t k = 0; k < series.size(); ++k) {
        const auto color = kPalette[k % std::size(kPalette)];
        const auto& s = series[k];
        for (size_t i = 0; i < s.y.size() && i < x_labels.size(); ++i) {
            const cv::Point p{px(i), py(s.y[i])};
            cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
            if (i < s.err.size() && s.err[i] > 0.0) {
                cv::line(img, {p.x, py(s.y[i] - s.err[i])}, {p.x, py(s.y[i] + s.err[i])}, color, 1);
            }
            if (i > 0) cv::line(img, {px(i - 1), py(s.y[i - 1])}, p, color, 2, cv::LINE_AA);
        }
        const int ly = kTop + 16 + static_cast<int>(k) * 18;
        cv::line(img, {kW - kRight + 12, ly - 4}, {kW - kRight + 32, ly - 4}, color, 2);
        cv::putText(img, s.name, {kW - kRight + 38, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
    }
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) {
        throw InvalidInput("line_plot: cannot write " + path.string());
    }
}

ReportFiles write_report(const std::filesystem::path& dir)
{
    ReportFiles files;
    std::ostringstream md;
    md << "# Report: " << dir.filename().string() << "\n\n";
    bool any = false;

    if (std::filesystem::exists(dir / "aggregate.json")) {
        any = true;
        const auto doc = read_json(dir / "aggregate.json");
        const auto rows = doc.at("rows").get<std::vector<AggregateRow>>();
        md << "## Results\n\n" << aggregate_table(rows) << "\n";
        for (const auto& f : doc.value("failed", nlohmann::json::array())) {
            md << "- seed " << f.at("seed") << " failed: " << f.at("error").get<std::string>() << "\n";
        }
        const auto records = seed_records(dir);
        std::vector<PlotSeries> curves;
        size_t longest = 0;
        for (const auto& r : records) {
            if (r.loss_curve.empty()) continue;
            curves.push_back({"seed " + std::to_string(r.seed), r.loss_curve, {}});
            longest = std::max(longest, r.loss_curve.size());
        }
        if (!curves.empty()) {
            std::vector<std::string> xs;
            for (size_t e = 1; e <= longest; ++e) xs.push_back(std::to_string(e));
            const auto p = dir / "loss_curve.png";
            line_plot(p, "pretraining loss per epoch", xs, curves);
            files.plots.push_back(p);
            md << "\n![loss](loss_curve.png)\n";
        }
    }

    if (std::filesystem::exists(dir / "sweep.json")) {
        any = true;
        const auto doc = read_json(dir / "sweep.json");
        const auto axis = doc.at("axis").get<std::string>();
        const auto metric = doc.at("metric").get<std::string>();
        md << "## Sweep over " << axis << "\n\n";
        std::vector<std::string> xs;
        std::map<std::string, PlotSeries> by_arm;
        for (const auto& cell : doc.at("cells")) {
            const auto label = cell.at("value").is_string() ? cell.at("value").get<std::string>() : cell.at("value").dump();
            xs.push_back(label);
            const auto rows = cell.at("rows").get<std::vector<AggregateRow>>();
            md << "### " << axis << " = " << label << "\n\n" << aggregate_table(rows) << "\n";
            double top = 0.0;
            for (const auto& r : rows) top = std::max(top, r.label_fraction);
            for (const auto& r : rows) {
                if (r.metric != metric || r.label_fraction != top) continue;
                auto& s = by_arm[r.method + " " + r.arm];
                s.name = r.method + " arm " + r.arm;
                s.y.push_back(r.mean);
                s.err.push_back(r.halfwidth);
            }
        }
        std::vector<PlotSeries> series;
        for (auto& [k, s] : by_arm) series.push_back(s);
        if (!series.empty()) {
            const auto p = dir / ("sweep_" + axis + ".png");
            line_plot(p, metric + " vs " + axis, xs, series);
            files.plots.push_back(p);
            md << "![sweep](" << p.filename().string() << ")\n\n";
        }
        for (const auto& [method, r] : doc.value("robustness", nlohmann::json::object()).items()) {
            md << "- robustness (" << method << "): mean variance " << std::scientific << std::setprecision(4)
               << r.at("mean_variance").get<double>() << std::defaultfloat << "\n";
        }
    }

    if (std::filesystem::exists(dir / "cost.json")) {
        any = true;
        const auto doc = read_json(dir / "cost.json");
        md << "## Pretraining cost\n\n| method | wall clock (s) | augmentations | forward passes | parameter copies |\n"
           << "|---|---|---|---|---|\n";
        for (const char* m : {"cass", "dino"}) {
            const auto& c = doc.at(m);
            const auto& k = c.at("counters");
            md << "| " << m << " | " << fixed(c.at("wall_clock_seconds").get<double>(), 2) << " | "
               << k.at("augmentation_applications") << " | " << k.at("forward_passes") << " | "
               << k.at("parameter_copy_ops") << " |\n";
        }
        md << "\nTime saving of cass relative to dino: " << fixed(100.0 * doc.at("time_saving").get<double>(), 1)
           << "%\n";
    }

    const auto analysis = dir / "analysis";
    if (std::filesystem::exists(analysis)) {
        std::vector<std::filesystem::path> pngs;
        for (const auto& e : std::filesystem::recursive_directory_iterator(analysis)) {
            if (e.path().extension() == ".png") pngs.push_back(e.path());
        }
        std::sort(pngs.begin(), pngs.end());
        if (!pngs.empty()) {
            any = true;
            md << "\n## Maps\n\n";
            for (const auto& p : pngs) {
                md << "![" << p.stem().string() << "](" << std::filesystem::relative(p, dir).string() << ")\n";
            }
        }
    }
    if (!any) {
        throw ContractError("report: no aggregate.json, sweep.json, cost.json or analysis/ under " + dir.string());
    }
    files.markdown = dir / "report.md";
    std::ofstream(files.markdown) << md.str();
    return files;
}

}  // namespace cass
