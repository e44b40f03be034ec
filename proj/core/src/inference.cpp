#include "foresight/inference.hpp"

#include <algorithm>

#include "foresight/errors.hpp"

namespace foresight {

std::vector<std::int64_t> RolloutSchedule::predicted_ids() const {
    std::vector<std::int64_t> ids;
    std::int64_t id = context_ids.empty() ? 0 : context_ids.back();
    for (std::size_t s = 0; s < steps; ++s) ids.push_back(id += stride);
    return ids;
}

void RolloutSchedule::validate() const {
    if (context_ids.empty()) throw ParameterError("schedule '" + name + "': empty context");
    if (stride < 1 || steps < 1) throw ParameterError("schedule '" + name + "': stride and steps must be >= 1");
    for (std::size_t i = 1; i < context_ids.size(); ++i) {
        if (context_ids[i] - context_ids[i - 1] != stride) {
            throw ParameterError("schedule '" + name + "': context ids are not spaced by stride " +
                                 std::to_string(stride));
        }
    }
    if (target_id != context_ids.back() + static_cast<std::int64_t>(steps) * stride) {
        throw ParameterError("schedule '" + name + "': target id inconsistent with context, stride and steps");
    }
}

RolloutSchedule RolloutSchedule::ending_at(std::int64_t target_id, std::size_t context_frames, std::int64_t stride,
                                           std::size_t steps, std::string name) {
    RolloutSchedule s;
    s.name = std::move(name);
    s.target_id = target_id;
    s.stride = stride;
    s.steps = steps;
    const std::int64_t last = target_id - static_cast<std::int64_t>(steps) * stride;
    for (std::size_t i = 0; i < context_frames; ++i)
        s.context_ids.push_back(last - static_cast<std::int64_t>(context_frames - 1 - i) * stride);
    s.validate();
    return s;
}

RolloutSchedule RolloutSchedule::named(const std::string& name) {
    if (name == "short") return ending_at(20, 4, 3, 1, name);   // 8, 11, 14, 17 -> 20
    if (name == "mid") return ending_at(20, 4, 3, 3, name);     // 2, 5, 8, 11 -> 14, 17, 20
    if (name == "long") return ending_at(29, 4, 3, 6, name);    // 2, 5, 8, 11 -> 14 ... 29
    if (name == "mid-29") return ending_at(29, 4, 3, 3, name);  // 11, 14, 17, 20 -> 23, 26, 29
    throw ParameterError("unknown schedule '" + name + "' (expected short, mid, long or mid-29)");
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t crop, std::size_t stride) {
    if (crop < 1 || stride < 1) throw ParameterError("sliding window: crop and stride must be >= 1");
    if (crop > extent) {
        throw ParameterError("sliding window: crop " + std::to_string(crop) + " larger than grid extent " +
                             std::to_string(extent));
    }
    std::vector<std::size_t> origins;
    for (std::size_t o = 0;; o += stride) {
        if (o + crop >= extent) {
            origins.push_back(extent - crop);
            break;
        }
        origins.push_back(o);
    }
    origins.erase(std::unique(origins.begin(), origins.end()), origins.end());
    return origins;
}

FeatureSequence forecast_next(const ForecasterWeights<float>& w, const FeatureSequence& context) {
    const auto& config = w.config;
    if (context.frames != config.context_frames) {
        throw ParameterError("forecast_next: context has " + std::to_string(context.frames) + " frames, model expects " +
                             std::to_string(config.context_frames));
    }
    if (context.height != config.grid_h || context.width != config.grid_w) {
        throw DimensionError("forecast_next: context grid " + std::to_string(context.height) + "x" +
                             std::to_string(context.width) + " differs from the weights' grid " +
                             std::to_string(config.grid_h) + "x" + std::to_string(config.grid_w) +
                             "; interpolate the position embeddings or use sliding-window inference");
    }
    if (context.channels != config.d_in) {
        throw DimensionError("forecast_next: context has " + std::to_string(context.channels) +
                             " channels, model expects " + std::to_string(config.d_in));
    }
    FeatureSequence seq(config.seq_frames, config.grid_h, config.grid_w, config.d_in);
    std::copy(context.data.begin(), context.data.end(), seq.data.begin());
    const std::int64_t stride = context.frames >= 2
                                    ? context.frame_ids[context.frames - 1] - context.frame_ids[context.frames - 2]
                                    : 1;
    for (std::size_t n = 0; n < seq.frames; ++n) {
        seq.frame_ids[n] = n < context.frames
                               ? context.frame_ids[n]
                               : context.frame_ids.back() + static_cast<std::int64_t>(n - context.frames + 1) * stride;
    }
    const MaskPlan plan = MaskPlan::full(seq.grid(), config.context_frames);
    FeatureSequence out = forward(seq, plan, w).pred.slice_frames(config.context_frames, 1);
    out.meta = context.meta;
    return out;
}

FeatureSequence sliding_window_forecast(const ForecasterWeights<float>& w, const FeatureSequence& context,
                                        const SlidingWindow& window) {
    const auto& config = w.config;
    if (window.crop_h != config.grid_h || window.crop_w != config.grid_w) {
        throw ParameterError("sliding window: crop " + std::to_string(window.crop_h) + "x" +
                             std::to_string(window.crop_w) + " must equal the weights' grid " +
                             std::to_string(config.grid_h) + "x" + std::to_string(config.grid_w));
    }
    const auto rows = window_origins(context.height, window.crop_h, window.stride_h);
    const auto cols = window_origins(context.width, window.crop_w, window.stride_w);

    FeatureSequence sum(1, context.height, context.width, config.d_in);
    std::vector<std::uint32_t> hits(context.cells(), 0);
    for (std::size_t top : rows) {
        for (std::size_t left : cols) {
            const FeatureSequence pred = forecast_next(w, context.crop(top, left, window.crop_h, window.crop_w));
            for (std::size_t r = 0; r < window.crop_h; ++r) {
                for (std::size_t c = 0; c < window.crop_w; ++c) {
                    const std::size_t cell = (top + r) * context.width + (left + c);
                    const float* src = pred.token(pred.token_index(0, r, c));
                    float* dst = sum.token(cell);
                    for (std::size_t k = 0; k < config.d_in; ++k) dst[k] += src[k];
                    ++hits[cell];
                }
            }
            sum.frame_ids = pred.frame_ids;
        }
    }
    for (std::size_t cell = 0; cell < hits.size(); ++cell) {
        if (hits[cell] == 1) continue;
        const float inv = 1.0f / static_cast<float>(hits[cell]);
        float* dst = sum.token(cell);
        for (std::size_t k = 0; k < config.d_in; ++k) dst[k] *= inv;
    }
    sum.meta = context.meta;
    return sum;
}

FeatureSequence rollout(const ForecasterWeights<float>& w, const FeatureSequence& context, std::size_t steps,
                        const RolloutOptions& options) {
    if (steps < 1) throw ParameterError("rollout: steps must be >= 1");
    const std::size_t nc = w.config.context_frames;
    if (context.frames < nc) {
        throw ParameterError("rollout: context has " + std::to_string(context.frames) + " frames, need " +
                             std::to_string(nc));
    }
    FeatureSequence window = context.slice_frames(context.frames - nc, nc);
    std::vector<FeatureSequence> predictions;
    for (std::size_t s = 0; s < steps; ++s) {
        if (options.on_context) options.on_context(window);
        FeatureSequence next = options.sliding ? sliding_window_forecast(w, window, *options.sliding)
                                               : forecast_next(w, window);
        // Slide: keep the newest nc - 1 frames and append the prediction.
        FeatureSequence shifted = window.slice_frames(1, nc - 1);
        shifted.frames = nc;
        shifted.data.insert(shifted.data.end(), next.data.begin(), next.data.end());
        shifted.frame_ids.push_back(next.frame_ids.front());
        window = std::move(shifted);
        predictions.push_back(std::move(next));
    }
    FeatureSequence out(steps, context.height, context.width, w.config.d_in);
    out.meta = context.meta;
    for (std::size_t s = 0; s < steps; ++s) {
        std::copy(predictions[s].data.begin(), predictions[s].data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(s * predictions[s].data.size()));
        out.frame_ids[s] = predictions[s].frame_ids.front();
    }
    return out;
}

FeatureSequence copy_last(const FeatureSequence& context) {
    if (context.frames < 1) throw ParameterError("copy_last: empty context");
    return context.slice_frames(context.frames - 1, 1);
}

}  // namespace foresight
