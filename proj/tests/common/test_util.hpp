#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "foresight/feature_sequence.hpp"
#include "foresight/forecaster.hpp"

namespace testutil {

template <typename T>
foresight::BasicFeatureSequence<T> random_sequence(std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                                                   std::uint64_t seed, double scale = 1.0) {
    foresight::BasicFeatureSequence<T> f(n, h, w, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    for (T& v : f.data) v = static_cast<T>(normal(rng));
    return f;
}

/// Every parameter random, LayerNorm scales near one.
template <typename T>
foresight::ForecasterWeights<T> random_weights(const foresight::ForecasterConfig& config, std::uint64_t seed,
                                               double scale = 0.3) {
    auto w = foresight::ForecasterWeights<T>::zeros(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& view : foresight::parameter_views(w)) {
        const bool is_scale = view.name.ends_with("norm.scale");
        for (T& v : view.values) v = static_cast<T>(is_scale ? 1.0 + 0.1 * normal(rng) : scale * normal(rng));
    }
    return w;
}

inline foresight::ForecasterConfig tiny_config() {
    foresight::ForecasterConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_in = 4;
    c.seq_frames = 3;
    c.context_frames = 2;
    c.grid_h = 2;
    c.grid_w = 2;
    return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("foresight_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
