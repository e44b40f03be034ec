#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "foresight/forecaster.hpp"
#include "foresight/training.hpp"

namespace foresight {

struct GradcheckOptions {
    double eps = 1e-3;
    double tol = 1e-4;
    std::uint64_t seed = 0;
    /// Std of the random weights; LayerNorm scales are drawn around 1.
    double weight_scale = 0.2;
    /// Gradients smaller than this in both estimates are compared absolutely.
    double abs_floor = 1e-6;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    /// Per tensor: ||a - n|| / max(||a||, ||n||, abs_floor * sqrt(size)).
    double max_tensor_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t parameters_checked = 0;
    bool pass = false;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Compares backward() with central differences of the loss for every scalar
/// parameter, in double precision, on a random sequence and random weights.
/// Elementwise relative error is |a - n| / max(|a|, |n|, abs_floor); `pass`
/// uses the per-tensor norm-wise error.
[[nodiscard]] GradcheckReport gradient_check(const ForecasterConfig& config, const TrainConfig& train,
                                             const GradcheckOptions& options = {});

}  // namespace foresight
