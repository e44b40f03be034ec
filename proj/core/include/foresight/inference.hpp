#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "foresight/feature_sequence.hpp"
#include "foresight/forecaster.hpp"

namespace foresight {

/// Which source frames are read as context and which frame is the forecast target.
struct RolloutSchedule {
    std::string name;
    std::vector<std::int64_t> context_ids;
    std::int64_t target_id = 0;
    std::int64_t stride = 1;
    std::size_t steps = 1;

    /// Source-frame ids of every autoregressive prediction, in order.
    [[nodiscard]] std::vector<std::int64_t> predicted_ids() const;
    /// Throws ParameterError unless context ids are evenly spaced by `stride`
    /// and target = last context id + steps * stride.
    void validate() const;

    /// Built-in evaluation scenarios: "short" and "mid" (target frame 20,
    /// four contexts at stride 3), "long" (target frame 29 in six steps), and
    /// "mid-29" (target frame 29 in three steps).
    static RolloutSchedule named(const std::string& name);
    /// Context of `context_frames` ids ending `steps * stride` before `target_id`.
    static RolloutSchedule ending_at(std::int64_t target_id, std::size_t context_frames, std::int64_t stride,
                                     std::size_t steps, std::string name = "custom");
};

struct SlidingWindow {
    std::size_t crop_h = 0;
    std::size_t crop_w = 0;
    std::size_t stride_h = 0;
    std::size_t stride_w = 0;
};

/// Window origins along one axis: multiples of `stride`, with the last window
/// clamped so it ends exactly at `extent`.
[[nodiscard]] std::vector<std::size_t> window_origins(std::size_t extent, std::size_t crop, std::size_t stride);

/// Predicts the frame after `context` (its last N_c frames are required to be
/// exactly N_c = context_frames). Output is [1, H, W, D] with the next frame id.
[[nodiscard]] FeatureSequence forecast_next(const ForecasterWeights<float>& w, const FeatureSequence& context);

/// Stitches per-crop forecasts over a larger grid; overlaps are averaged uniformly.
[[nodiscard]] FeatureSequence sliding_window_forecast(const ForecasterWeights<float>& w,
                                                      const FeatureSequence& context, const SlidingWindow& window);

struct RolloutOptions {
    std::optional<SlidingWindow> sliding;
    /// Called with the exact context each internal forecast sees.
    std::function<void(const FeatureSequence&)> on_context;
};

/// Autoregressive rollout: forecast, drop the oldest context frame, append the
/// prediction. Returns all predictions [steps, H, W, D] in order.
[[nodiscard]] FeatureSequence rollout(const ForecasterWeights<float>& w, const FeatureSequence& context,
                                      std::size_t steps, const RolloutOptions& options = {});

/// Baseline: the final context frame, unchanged.
[[nodiscard]] FeatureSequence copy_last(const FeatureSequence& context);

}  // namespace foresight
