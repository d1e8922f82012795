#include "cass/analysis.hpp"

#include "cass/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace cass {
namespace {

torch::Tensor as_batch(const torch::Tensor& image)
{
    if (image.dim() != 3) {
        throw ContractError("analysis: expected a single (3, S, S) image");
    }
    return image.unsqueeze(0).to(torch::kFloat32);
}

class EvalScope {
public:
    explicit EvalScope(ArmModule& m) : model_(m), was_training_(m.is_training()) { model_.eval(); }
    ~EvalScope() { model_.train(was_training_); }
    EvalScope(const EvalScope&) = delete;
    EvalScope& operator=(const EvalScope&) = delete;

private:
    ArmModule& model_;
    bool was_training_;
};

}  // namespace

std::vector<FeatureMapDump> extract_feature_maps(ArmModule& model, const torch::Tensor& image,
                                                 const std::vector<std::string>& layer_ids,
                                                 const std::string& source_checkpoint, const std::string& image_id)
{
    if (model.family() != ArmFamily::cnn) {
        throw ContractError("extract_feature_maps: needs a cnn-family arm, got '" + model.spec().variant + "'");
    }
    if (layer_ids.empty()) {
        throw ContractError("extract_feature_maps: no layers requested");
    }
    EvalScope scope(model);
    torch::NoGradGuard no_grad;
    TapRequest taps;
    taps.feature_layers = layer_ids;
    auto out = model.forward(as_batch(image), taps);
    std::vector<FeatureMapDump> dumps;
    for (const auto& id : layer_ids) {
        auto it = std::find_if(out.feature_maps.begin(), out.feature_maps.end(),
                               [&](const auto& kv) { return kv.first == id; });
        if (it == out.feature_maps.end()) {
            throw ContractError("extract_feature_maps: layer '" + id + "' produced no activation");
        }
        auto t = it->second[0].detach().clone();
        if (!torch::isfinite(t).all().item<bool>()) {
            throw ContractError("extract_feature_maps: non-finite activation at '" + id + "'");
        }
        dumps.push_back({id, t, source_checkpoint, image_id});
    }
    return dumps;
}

AttentionAggregation parse_attention_aggregation(const std::string& s)
{
    if (s == "last_layer_cls") return AttentionAggregation::last_layer_cls;
    if (s == "rollout") return AttentionAggregation::rollout;
    throw ConfigError("unknown attention aggregation '" + s + "'");
}

std::string_view to_string(AttentionAggregation a)
{
    return a == AttentionAggregation::rollout ? "rollout" : "last_layer_cls";
}

std::vector<torch::Tensor> head_mean_attention(ArmModule& model, const torch::Tensor& image)
{
    if (model.family() != ArmFamily::vit) {
        throw ContractError("attention maps need a transformer arm, got '" + model.spec().variant + "'");
    }
    EvalScope scope(model);
    torch::NoGradGuard no_grad;
    TapRequest taps;
    taps.attention = true;
    auto out = model.forward(as_batch(image), taps);
    std::vector<torch::Tensor> layers;
    for (const auto& a : out.attention) layers.push_back(a[0].to(torch::kFloat64).mean(0));
    return layers;
}

torch::Tensor attention_rollout(const std::vector<torch::Tensor>& layers)
{
    if (layers.empty()) {
        throw ContractError("attention_rollout: no layers");
    }
    const auto t = layers.front().size(0);
    auto eye = torch::eye(t, layers.front().options());
    auto rollout = eye.clone();
    for (const auto& a : layers) {
        if (a.dim() != 2 || a.size(0) != t || a.size(1) != t) {
            throw ContractError("attention_rollout: layers must be (T, T) with a common T");
        }
        auto mixed = 0.5 * a + 0.5 * eye;
        mixed = mixed / mixed.sum(-1, true);
        rollout = torch::matmul(mixed, rollout);
    }
    return rollout;
}

torch::Tensor minmax_normalize(const torch::Tensor& grid)
{
    const auto lo = grid.min();
    const auto span = grid.max() - lo;
    // Spans at the level of float rounding count as constant.
    const double scale = std::max(std::abs(lo.item<double>()), std::abs(grid.max().item<double>()));
    if (span.item<double>() <= 1e-6 * scale) {
        return torch::zeros_like(grid);
    }
    return (grid - lo) / span;
}

torch::Tensor attention_map(ArmModule& vit_model, const torch::Tensor& image, AttentionAggregation aggregation)
{
    auto layers = head_mean_attention(vit_model, image);
    auto joint = aggregation == AttentionAggregation::rollout ? attention_rollout(layers) : layers.back();
    auto cls = joint[0].slice(0, 1);
    const auto side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(cls.size(0)))));
    if (side * side != cls.size(0)) {
        throw ContractError("attention_map: patch tokens do not form a square grid");
    }
    auto grid = cls.reshape({1, 1, side, side}).to(torch::kFloat32);
    const auto s = vit_model.spec().image_size;
    auto up = torch::nn::functional::interpolate(
        grid, torch::nn::functional::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{s, s})
                  .mode(torch::kBilinear)
                  .align_corners(false));
    return minmax_normalize(up[0][0]);
}

AttentionAverage average_maps(const std::vector<torch::Tensor>& maps, const std::string& aggregation)
{
    if (maps.empty()) {
        throw ContractError("average_maps: no maps");
    }
    for (const auto& m : maps) {
        if (m.sizes() != maps.front().sizes()) {
            throw ContractError("average_maps: shape mismatch");
        }
    }
    AttentionAverage avg;
    avg.mean = torch::stack(maps).to(torch::kFloat64).mean(0);
    avg.map = minmax_normalize(avg.mean);
    avg.n_samples = static_cast<int64_t>(maps.size());
    avg.aggregation = aggregation;
    return avg;
}

double variance(const std::vector<double>& values, VarianceKind kind)
{
    const auto n = values.size();
    if (n < 2) {
        throw ContractError("variance: need at least two values");
    }
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
        return 0.0;
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(kind == VarianceKind::sample ? n - 1 : n);
}

std::map<std::string, RobustnessSummary> robustness_variance(const std::vector<GridCell>& grid, VarianceKind kind)
{
    if (grid.empty()) {
        throw ContractError("robustness_variance: empty grid");
    }
    std::set<std::string> sweep_values;
    std::map<std::string, std::set<std::string>> arches;
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
    for (const auto& c : grid) {
        if (!std::isfinite(c.metric)) {
            throw ContractError("robustness_variance: non-finite metric at (" + c.method + ", " + c.arch + ", " +
                                c.sweep_value + ")");
        }
        sweep_values.insert(c.sweep_value);
        arches[c.method].insert(c.arch);
        auto& row = cells[{c.method, c.arch}];
        if (!row.emplace(c.sweep_value, c.metric).second) {
            throw ContractError("robustness_variance: duplicate cell (" + c.method + ", " + c.arch + ", " +
                                c.sweep_value + ")");
        }
    }
    std::set<std::string> all_arches;
    for (const auto& [method, set] : arches) all_arches.insert(set.begin(), set.end());

    std::vector<std::string> gaps;
    for (const auto& [method, unused] : arches) {
        for (const auto& arch : all_arches) {
            const auto it = cells.find({method, arch});
            for (const auto& v : sweep_values) {
                if (it == cells.end() || !it->second.contains(v)) {
                    gaps.push_back("(" + method + ", " + arch + ", " + v + ")");
                }
            }
        }
    }
    if (!gaps.empty()) {
        std::ostringstream msg;
        msg << "robustness_variance: missing cells";
        for (const auto& g : gaps) msg << ' ' << g;
        throw ContractError(msg.str());
    }
    if (sweep_values.size() < 2) {
        throw ContractError("robustness_variance: need at least two sweep values");
    }

    std::map<std::string, RobustnessSummary> out;
    for (const auto& [method, set] : arches) {
        RobustnessSummary summary;
        double total = 0.0;
        for (const auto& arch : set) {
            std::vector<double> values;
            for (const auto& [v, metric] : cells.at({method, arch})) values.push_back(metric);
            const double var = variance(values, kind);
            summary.per_arch_variance[arch] = var;
            total += var;
        }
        summary.mean_variance = total / static_cast<double>(set.size());
        out[method] = summary;
    }
    return out;
}

void write_npy(const std::filesystem::path& path, const torch::Tensor& t)
{
    auto data = t.detach().to(torch::kFloat32).contiguous().cpu();
    std::string shape = "(";
    for (int64_t i = 0; i < data.dim(); ++i) {
        shape += std::to_string(data.size(i)) + (data.dim() == 1 || i + 1 < data.dim() ? "," : "");
        if (i + 1 < data.dim()) shape += " ";
    }
    shape += ")";
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
    // Magic (6) + version (2) + length (2) + header, padded with spaces to a multiple of 64 and ending in '\n'.
    const size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InvalidInput("write_npy: cannot open " + path.string());
    }
    const char magic[] = "\x93NUMPY\x01\x00";
    out.write(magic, 8);
    const auto len = static_cast<uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(data.numel() * sizeof(float)));
}

torch::Tensor read_npy(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InvalidInput("read_npy: cannot open " + path.string());
    }
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) {
        throw InvalidInput("read_npy: not a version 1 .npy file: " + path.string());
    }
    unsigned char len_bytes[2];
    in.read(reinterpret_cast<char*>(len_bytes), 2);
    std::string header(static_cast<size_t>(len_bytes[0] | (len_bytes[1] << 8)), '\0');
    in.read(header.data(), static_cast<std::streamsize>(header.size()));
    if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
        throw InvalidInput("read_npy: only C-order float32 arrays are supported");
    }
    const auto open = header.find('(', header.find("'shape'"));
    const auto close = header.find(')', open);
    std::vector<int64_t> shape;
    std::stringstream dims(header.substr(open + 1, close - open - 1));
    for (std::string tok; std::getline(dims, tok, ',');) {
        if (tok.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stoll(tok));
    }
    auto t = torch::empty(shape, torch::kFloat32);
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) {
        throw InvalidInput("read_npy: truncated data in " + path.string());
    }
    return t;
}

void render_heatmap(const std::filesystem::path& path, const torch::Tensor& grid, int scale)
{
    if (grid.dim() != 2) {
        throw ContractError("render_heatmap: expected a 2-D grid");
    }
    auto g = (grid.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
    cv::Mat small(static_cast<int>(g.size(0)), static_cast<int>(g.size(1)), CV_8UC1, g.data_ptr<uint8_t>());
    cv::Mat big;
    cv::resize(small, big, cv::Size(), scale, scale, cv::INTER_NEAREST);
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), big)) {
        throw InvalidInput("render_heatmap: cannot write " + path.string());
    }
}

std::vector<std::filesystem::path> save_feature_dumps(const std::vector<FeatureMapDump>& dumps,
                                                      const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> written;
    for (const auto& d : dumps) {
        const auto stem = (d.image_id.empty() ? std::string("image") : d.image_id) + "_" + d.layer_id;
        const auto npy = dir / (stem + ".npy");
        const auto png = dir / (stem + ".png");
        write_npy(npy, d.tensor);
        render_heatmap(png, minmax_normalize(d.tensor.mean(0)));
        written.push_back(npy);
        written.push_back(png);
    }
    return written;
}

}  // namespace cass
