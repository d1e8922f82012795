#pragma once

#include "cass/arms.hpp"
#include "cass/data.hpp"

#include <torch/torch.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace cass::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cass_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline ArmSpec cnn_spec(int64_t head_dim = 16)
{
    return ArmSpec{ArmFamily::cnn, "micro_cnn", head_dim};
}

inline ArmSpec vit_spec(int64_t head_dim = 16, const std::string& variant = "vit_micro_p4")
{
    return ArmSpec{ArmFamily::vit, variant, head_dim};
}

inline bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b)
{
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (!torch::equal(pa[i], pb[i])) return false;
    }
    return true;
}

/// Small synthetic dataset, already split.
inline LabeledImageDataset small_dataset(int64_t n = 40, int64_t classes = 2, uint64_t seed = 0)
{
    SynthOptions o;
    o.n = n;
    o.classes = classes;
    o.structure_seed = seed;
    return split(synth_dataset(o), seed);
}

}  // namespace cass::testing
