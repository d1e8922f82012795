#include "cass/data.hpp"

#include "cass/augmentation.hpp"
#include "cass/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace cass {
namespace {

/// Largest-remainder apportionment of `total` across strata proportional to `counts`, capped by `caps`.
std::vector<int64_t> apportion(const std::vector<int64_t>& counts, int64_t total, const std::vector<int64_t>& caps)
{
    const int64_t n = std::accumulate(counts.begin(), counts.end(), int64_t{0});
    std::vector<int64_t> out(counts.size(), 0);
    if (n == 0 || total == 0) {
        return out;
    }
    std::vector<std::pair<double, size_t>> remainders;
    int64_t assigned = 0;
    for (size_t k = 0; k < counts.size(); ++k) {
        const double exact = static_cast<double>(counts[k]) * static_cast<double>(total) / static_cast<double>(n);
        out[k] = std::min<int64_t>(static_cast<int64_t>(std::floor(exact + 1e-9)), caps[k]);
        assigned += out[k];
        remainders.emplace_back(exact - static_cast<double>(out[k]), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    while (assigned < total) {
        bool progressed = false;
        for (const auto& [rem, k] : remainders) {
            if (assigned == total) break;
            if (out[k] < caps[k]) {
                ++out[k];
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) {
            throw ConfigError("split: not enough samples to fill the requested partition");
        }
    }
    return out;
}

bool is_image_file(const std::filesystem::path& p)
{
    static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".pgm"};
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return exts.count(ext) > 0;
}

torch::Tensor read_image(const std::filesystem::path& path, int64_t load_size)
{
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw InvalidInput("cannot decode image " + path.string());
    }
    cv::Mat resized, rgb;
    cv::resize(bgr, resized, cv::Size(static_cast<int>(load_size), static_cast<int>(load_size)), 0, 0, cv::INTER_AREA);
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return to_float_image(t);
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories)
{
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> split_row(const std::string& line)
{
    const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, delim)) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    return cells;
}

// --- synthetic rendering ------------------------------------------------------

constexpr int kShapeCount = 10;

bool inside_shape(int shape, double u, double v)
{
    const double r2 = u * u + v * v;
    switch (shape) {
    case 0: return r2 <= 1.0;                                              // disk
    case 1: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;               // square
    case 2: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) ||           // plus
                   (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 3: return std::abs(u) <= 0.9 && std::abs(v) <= 0.9 &&             // horizontal stripes
                   static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
    case 4: return v <= 0.8 && v >= -1.0 && std::abs(u) <= 0.5 * (v + 1.0); // triangle
    case 5: return r2 <= 1.0 && r2 >= 0.3;                                 // ring
    case 6: return std::abs(u) <= 0.9 && std::abs(v) <= 0.9 &&             // vertical stripes
                   static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
    case 7: return std::abs(u) <= 0.9 && std::abs(v) <= 0.9 &&             // checker
                   (static_cast<int>(std::floor((u + 1.0) * 2.0)) + static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
    case 8: return std::abs(u) + std::abs(v) <= 1.0;                       // diamond
    default: return r2 <= 1.2 && (std::abs(u - v) <= 0.3 || std::abs(u + v) <= 0.3);  // X
    }
}

struct Stamp {
    int shape;
    double cx, cy, radius, angle;
    std::array<float, 3> color;
};

void draw(torch::TensorAccessor<float, 3>& img, int64_t size, const Stamp& s)
{
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    const int64_t lo_x = std::max<int64_t>(0, static_cast<int64_t>(s.cx - 1.6 * s.radius));
    const int64_t hi_x = std::min<int64_t>(size - 1, static_cast<int64_t>(s.cx + 1.6 * s.radius) + 1);
    const int64_t lo_y = std::max<int64_t>(0, static_cast<int64_t>(s.cy - 1.6 * s.radius));
    const int64_t hi_y = std::min<int64_t>(size - 1, static_cast<int64_t>(s.cy + 1.6 * s.radius) + 1);
    for (int64_t y = lo_y; y <= hi_y; ++y) {
        for (int64_t x = lo_x; x <= hi_x; ++x) {
            const double dx = (static_cast<double>(x) + 0.5 - s.cx) / s.radius;
            const double dy = (static_cast<double>(y) + 0.5 - s.cy) / s.radius;
            const double u = c * dx + sn * dy;
            const double v = -sn * dx + c * dy;
            if (inside_shape(s.shape, u, v)) {
                for (int ch = 0; ch < 3; ++ch) {
                    img[ch][y][x] = s.color[ch];
                }
            }
        }
    }
}

}  // namespace

std::string_view to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

std::vector<int64_t> LabeledImageDataset::indices(Split s) const
{
    if (s == Split::test) {
        audit_->test_reads.fetch_add(1);
    }
    std::vector<int64_t> out;
    if (!has_splits()) {
        if (s == Split::unassigned) {
            out.resize(samples.size());
            std::iota(out.begin(), out.end(), 0);
        }
        return out;
    }
    for (size_t i = 0; i < samples.size(); ++i) {
        if (split_assignment[i] == s) {
            out.push_back(static_cast<int64_t>(i));
        }
    }
    return out;
}

std::vector<int64_t> LabeledImageDataset::class_counts(const std::vector<int64_t>& idx) const
{
    std::vector<int64_t> counts(class_names.size(), 0);
    for (auto i : idx) {
        const auto& s = samples.at(static_cast<size_t>(i));
        if (task == TaskKind::multiclass) {
            counts.at(static_cast<size_t>(s.label)) += 1;
        } else {
            for (size_t c = 0; c < counts.size(); ++c) {
                counts[c] += s.multi_hot.at(c) != 0 ? 1 : 0;
            }
        }
    }
    return counts;
}

std::vector<int64_t> LabeledImageDataset::class_counts(Split s) const
{
    return class_counts(indices(s));
}

int64_t LabeledImageDataset::strata_key(int64_t index) const
{
    const auto& s = samples.at(static_cast<size_t>(index));
    if (task == TaskKind::multiclass) {
        return s.label;
    }
    for (size_t c = 0; c < s.multi_hot.size(); ++c) {
        if (s.multi_hot[c] != 0) return static_cast<int64_t>(c);
    }
    return num_classes();
}

void LabeledImageDataset::validate() const
{
    if (class_names.empty()) {
        throw ContractError("dataset has no classes");
    }
    for (const auto& s : samples) {
        if (task == TaskKind::multiclass) {
            if (s.label < 0 || s.label >= num_classes()) {
                throw ContractError("sample '" + s.id + "' has label out of range");
            }
        } else if (static_cast<int64_t>(s.multi_hot.size()) != num_classes()) {
            throw ContractError("sample '" + s.id + "' has a multi-hot vector of the wrong width");
        }
    }
    if (!split_assignment.empty() && !has_splits()) {
        throw ContractError("split assignment does not cover every sample");
    }
}

SplitSizes split_sizes(int64_t n)
{
    SplitSizes s;
    s.test = std::llround(0.2 * static_cast<double>(n));
    s.val = std::llround(0.1 * static_cast<double>(n));
    s.train = n - s.test - s.val;
    return s;
}

LabeledImageDataset split(LabeledImageDataset dataset, uint64_t seed)
{
    const int64_t n = dataset.size();
    if (n < 10) {
        throw ConfigError("split: need at least 10 samples, got " + std::to_string(n));
    }
    dataset.validate();
    Rng rng(seed);
    dataset.split_assignment.assign(static_cast<size_t>(n), Split::train);

    const bool predefined = std::any_of(dataset.samples.begin(), dataset.samples.end(),
                                        [](const Sample& s) { return s.predefined != Split::unassigned; });

    // Candidate pool per stratum (predefined test samples are fixed and excluded from the pool).
    const int64_t strata = dataset.num_classes() + 1;
    std::vector<std::vector<int64_t>> pool(static_cast<size_t>(strata));
    int64_t fixed_test = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (predefined && dataset.samples[static_cast<size_t>(i)].predefined == Split::test) {
            dataset.split_assignment[static_cast<size_t>(i)] = Split::test;
            ++fixed_test;
        } else {
            pool[static_cast<size_t>(dataset.strata_key(i))].push_back(i);
        }
    }
    for (auto& p : pool) {
        std::shuffle(p.begin(), p.end(), rng);
    }

    const auto sizes = split_sizes(n);
    const int64_t want_test = predefined ? 0 : sizes.test;
    const int64_t want_val = sizes.val;
    if (predefined && fixed_test == 0) {
        throw ConfigError("split: predefined partition has no test samples");
    }

    std::vector<int64_t> counts, caps;
    for (const auto& p : pool) {
        counts.push_back(static_cast<int64_t>(p.size()));
    }
    const auto test_take = apportion(counts, want_test, counts);
    for (size_t k = 0; k < counts.size(); ++k) {
        caps.push_back(counts[k] - test_take[k]);
    }
    const auto val_take = apportion(counts, want_val, caps);

    for (size_t k = 0; k < pool.size(); ++k) {
        size_t pos = 0;
        for (int64_t j = 0; j < test_take[k]; ++j) {
            dataset.split_assignment[static_cast<size_t>(pool[k][pos++])] = Split::test;
        }
        for (int64_t j = 0; j < val_take[k]; ++j) {
            dataset.split_assignment[static_cast<size_t>(pool[k][pos++])] = Split::val;
        }
    }
    dataset.reset_audit();
    return dataset;
}

std::vector<int64_t> synth_class_counts(int64_t n, int64_t classes, double imbalance_ratio)
{
    if (classes < 1 || n < classes) {
        throw ConfigError("synth_dataset: need n >= classes >= 1");
    }
    if (!(imbalance_ratio >= 1.0)) {
        throw ConfigError("synth_dataset: imbalance_ratio must be >= 1");
    }
    std::vector<double> w(static_cast<size_t>(classes));
    for (int64_t c = 0; c < classes; ++c) {
        const double t = classes == 1 ? 0.0 : static_cast<double>(c) / static_cast<double>(classes - 1);
        w[static_cast<size_t>(c)] = std::pow(imbalance_ratio, -t);
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<int64_t> counts(w.size());
    std::vector<std::pair<double, size_t>> rem;
    int64_t assigned = 0;
    for (size_t c = 0; c < w.size(); ++c) {
        const double exact = static_cast<double>(n) * w[c] / total;
        counts[c] = static_cast<int64_t>(std::floor(exact + 1e-9));
        assigned += counts[c];
        rem.emplace_back(exact - static_cast<double>(counts[c]), c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t i = 0; assigned < n; i = (i + 1) % rem.size()) {
        ++counts[rem[i].second];
        ++assigned;
    }
    // Every class keeps at least one sample.
    for (auto& c : counts) {
        if (c == 0) {
            ++c;
            --*std::max_element(counts.begin(), counts.end());
        }
    }
    return counts;
}

LabeledImageDataset synth_dataset(const SynthOptions& o)
{
    if (o.image_size < 8) {
        throw ConfigError("synth_dataset: image_size must be at least 8");
    }
    if (o.classes > kShapeCount) {
        throw ConfigError("synth_dataset: at most " + std::to_string(kShapeCount) + " classes");
    }
    Rng rng(o.structure_seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    std::normal_distribution<float> noise(0.0F, static_cast<float>(o.noise));

    static const char* kNames[kShapeCount] = {"disk", "square", "plus", "hstripes", "triangle",
                                              "ring", "vstripes", "checker", "diamond", "cross"};
    LabeledImageDataset ds;
    ds.task = o.multilabel ? TaskKind::multilabel : TaskKind::multiclass;
    for (int64_t c = 0; c < o.classes; ++c) {
        ds.class_names.emplace_back(kNames[c]);
    }
    const double size = static_cast<double>(o.image_size);

    auto render = [&](const std::vector<int>& shapes) {
        auto img = torch::empty({3, o.image_size, o.image_size}, torch::kFloat32);
        auto acc = img.accessor<float, 3>();
        const std::array<float, 3> bg{static_cast<float>(uni(0.0, 0.35)), static_cast<float>(uni(0.0, 0.35)),
                                      static_cast<float>(uni(0.0, 0.35))};
        for (int ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < o.image_size; ++y)
                for (int64_t x = 0; x < o.image_size; ++x) acc[ch][y][x] = bg[static_cast<size_t>(ch)];
        // Clutter: a few small dim blobs that carry no label information.
        const int blobs = static_cast<int>(uni(0.0, 3.0));
        for (int b = 0; b < blobs; ++b) {
            Stamp s{0, uni(0, size), uni(0, size), uni(0.04, 0.08) * size, 0.0,
                    {static_cast<float>(uni(0.1, 0.5)), static_cast<float>(uni(0.1, 0.5)), static_cast<float>(uni(0.1, 0.5))}};
            draw(acc, o.image_size, s);
        }
        const double radius_hi = shapes.size() > 1 ? 0.18 : 0.30;
        const double radius_lo = shapes.size() > 1 ? 0.12 : 0.18;
        for (int shape : shapes) {
            const double r = uni(radius_lo, radius_hi) * size;
            Stamp s{shape, uni(r, size - r), uni(r, size - r), r, uni(-0.25, 0.25),
                    {static_cast<float>(uni(0.55, 1.0)), static_cast<float>(uni(0.55, 1.0)),
                     static_cast<float>(uni(0.55, 1.0))}};
            draw(acc, o.image_size, s);
        }
        for (int ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < o.image_size; ++y)
                for (int64_t x = 0; x < o.image_size; ++x)
                    acc[ch][y][x] = std::clamp(acc[ch][y][x] + noise(rng), 0.0F, 1.0F);
        return img;
    };

    if (!o.multilabel) {
        const auto counts = synth_class_counts(o.n, o.classes, o.imbalance_ratio);
        for (int64_t c = 0; c < o.classes; ++c) {
            for (int64_t k = 0; k < counts[static_cast<size_t>(c)]; ++k) {
                Sample s;
                s.image = render({static_cast<int>(c)});
                s.label = c;
                s.id = "synth_" + std::to_string(ds.samples.size());
                ds.samples.push_back(std::move(s));
            }
        }
    } else {
        for (int64_t i = 0; i < o.n; ++i) {
            std::vector<int> shapes;
            std::vector<uint8_t> hot(static_cast<size_t>(o.classes), 0);
            for (int64_t c = 0; c < o.classes; ++c) {
                if (uni(0, 1) < 0.4) {
                    shapes.push_back(static_cast<int>(c));
                    hot[static_cast<size_t>(c)] = 1;
                }
            }
            if (shapes.empty()) {
                const auto c = static_cast<int64_t>(uni(0, static_cast<double>(o.classes))) % o.classes;
                shapes.push_back(static_cast<int>(c));
                hot[static_cast<size_t>(c)] = 1;
            }
            Sample s;
            s.image = render(shapes);
            s.multi_hot = std::move(hot);
            s.id = "synth_" + std::to_string(i);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

LabeledImageDataset load_image_folder(const FolderOptions& o)
{
    if (!std::filesystem::is_directory(o.root)) {
        throw ConfigError("image folder not found: " + o.root.string());
    }
    LabeledImageDataset ds;

    if (!o.label_table.empty()) {
        std::ifstream in(o.label_table);
        if (!in) {
            throw ConfigError("cannot open label table " + o.label_table.string());
        }
        std::string line;
        std::getline(in, line);
        auto header = split_row(line);
        if (header.size() < 2) {
            throw ConfigError("label table needs a sample id column and at least one class column");
        }
        ds.task = TaskKind::multilabel;
        ds.class_names.assign(header.begin() + 1, header.end());
        std::map<std::string, std::vector<uint8_t>> labels;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto cells = split_row(line);
            if (cells.size() != header.size()) {
                throw ConfigError("label table row has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()));
            }
            std::vector<uint8_t> hot;
            for (size_t c = 1; c < cells.size(); ++c) {
                if (cells[c] != "0" && cells[c] != "1") {
                    throw ConfigError("label table entries must be 0 or 1");
                }
                hot.push_back(cells[c] == "1" ? 1 : 0);
            }
            labels[cells[0]] = std::move(hot);
        }
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(o.root)) {
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto key = f.stem().string();
            auto rel = std::filesystem::relative(f, o.root).string();
            auto it = labels.find(key);
            if (it == labels.end()) it = labels.find(rel);
            if (it == labels.end()) continue;
            Sample s;
            s.image = read_image(f, o.load_size);
            s.multi_hot = it->second;
            s.id = rel;
            ds.samples.push_back(std::move(s));
        }
        if (ds.samples.empty()) {
            throw ConfigError("no images under " + o.root.string() + " matched the label table");
        }
        return ds;
    }

    ds.task = TaskKind::multiclass;
    const bool partitioned = std::filesystem::is_directory(o.root / "train") && std::filesystem::is_directory(o.root / "test");
    std::vector<std::pair<std::filesystem::path, Split>> parts;
    if (partitioned) {
        parts = {{o.root / "train", Split::train}, {o.root / "test", Split::test}};
    } else {
        parts = {{o.root, Split::unassigned}};
    }
    for (const auto& dir : sorted_entries(parts.front().first, true)) {
        ds.class_names.push_back(dir.filename().string());
    }
    if (ds.class_names.empty()) {
        throw ConfigError("no class directories under " + parts.front().first.string());
    }
    for (const auto& [dir, part] : parts) {
        for (size_t c = 0; c < ds.class_names.size(); ++c) {
            const auto class_dir = dir / ds.class_names[c];
            if (!std::filesystem::is_directory(class_dir)) continue;
            for (const auto& f : sorted_entries(class_dir, false)) {
                Sample s;
                s.image = read_image(f, o.load_size);
                s.label = static_cast<int64_t>(c);
                s.id = std::filesystem::relative(f, o.root).string();
                s.predefined = part;
                ds.samples.push_back(std::move(s));
            }
        }
    }
    if (ds.samples.empty()) {
        throw ConfigError("no images found under " + o.root.string());
    }
    return ds;
}

torch::Tensor stack_images(const std::vector<torch::Tensor>& images)
{
    if (images.empty()) {
        throw ContractError("stack_images: empty list");
    }
    return torch::stack(images);
}

}  // namespace cass
