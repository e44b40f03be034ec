#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "foresight/feature_sequence.hpp"

namespace foresight {

/// Shape hyperparameters of the masked feature transformer.
struct ForecasterConfig {
    std::size_t n_layers = 12;
    std::size_t d_model = 1152;
    std::size_t n_heads = 8;
    std::size_t d_in = 1152;
    std::size_t seq_frames = 5;
    std::size_t context_frames = 4;
    std::size_t grid_h = 16;
    std::size_t grid_w = 32;
    double mlp_ratio = 4.0;

    [[nodiscard]] std::size_t head_dim() const noexcept { return d_model / n_heads; }
    [[nodiscard]] std::size_t mlp_hidden() const noexcept;
    [[nodiscard]] std::size_t future_frames() const noexcept { return seq_frames - context_frames; }
    [[nodiscard]] GridShape grid() const noexcept { return {seq_frames, grid_h, grid_w}; }

    /// Throws ParameterError on an inconsistent configuration.
    void validate() const;

    /// Named model sizes; `d_in` and the grid keep their defaults.
    static ForecasterConfig small();
    static ForecasterConfig base();
    static ForecasterConfig large();

    bool operator==(const ForecasterConfig&) const = default;
};

template <typename T>
struct Affine {
    Mat<T> weight;  // [out, in]
    Vec<T> bias;    // [out]
};

template <typename T>
struct LayerNormParams {
    Vec<T> scale;
    Vec<T> shift;
};

template <typename T>
struct AttentionParams {
    LayerNormParams<T> norm;
    Affine<T> query, key, value, output;
};

template <typename T>
struct MlpParams {
    LayerNormParams<T> norm;
    Affine<T> fc1, fc2;
};

template <typename T>
struct BlockParams {
    AttentionParams<T> temporal;
    AttentionParams<T> spatial;
    MlpParams<T> mlp;
};

/// Every learnable tensor of the forecaster. Gradients and Adam moments reuse
/// the same structure.
template <typename T>
struct ForecasterWeights {
    ForecasterConfig config;
    Affine<T> input_proj;   // d_in -> d_model
    Vec<T> mask_token;      // [d_model]
    Mat<T> pos_temporal;    // [seq_frames, d_model]
    Mat<T> pos_spatial;     // [grid_h * grid_w, d_model], row = h * grid_w + w
    std::vector<BlockParams<T>> blocks;
    Affine<T> output_proj;  // d_model -> d_in

    /// All tensors zero, shaped for `config`.
    static ForecasterWeights zeros(const ForecasterConfig& config);

    template <typename U>
    [[nodiscard]] ForecasterWeights<U> cast() const;
};

/// Truncated normal (sigma = init_std, cut at 2 sigma) for projection matrices,
/// unit LayerNorm scales, zeros elsewhere.
template <typename T>
[[nodiscard]] ForecasterWeights<T> init_weights(const ForecasterConfig& config, std::uint64_t seed,
                                                double init_std = 0.02);

template <typename T>
struct ParamView {
    std::string name;
    std::span<T> values;
    std::vector<std::size_t> shape;
};

/// Flat views of every parameter tensor in a fixed canonical order.
template <typename T>
[[nodiscard]] std::vector<ParamView<T>> parameter_views(ForecasterWeights<T>& w);
template <typename T>
[[nodiscard]] std::vector<ParamView<const T>> parameter_views(const ForecasterWeights<T>& w);

[[nodiscard]] std::size_t count_parameters(const ForecasterConfig& config);

enum class MaskStrategy { full, random };

/// Positions replaced by the MASK vector and scored by the loss.
struct MaskPlan {
    GridShape shape;
    std::vector<std::uint8_t> mask;  // [frames * height * width]
    MaskStrategy strategy = MaskStrategy::full;
    double ratio = 1.0;

    [[nodiscard]] bool masked(std::size_t token) const noexcept { return mask[token] != 0; }
    [[nodiscard]] std::size_t count() const noexcept;

    /// Masks every token of frames [context_frames, frames).
    static MaskPlan full(GridShape shape, std::size_t context_frames);
};

/// Intermediate activations, kept only when a backward pass follows.
template <typename T>
struct ForwardTrace;

template <typename T>
struct ForwardResult {
    BasicFeatureSequence<T> pred;
    /// 1-based block index -> post-block tokens [tokens, d_model].
    std::map<std::size_t, Mat<T>> tapped;
};

/// Token embedding: input projection (or MASK vector) plus temporal and spatial
/// position terms. Returns [tokens, d_model].
template <typename T>
[[nodiscard]] Mat<T> embed_tokens(const BasicFeatureSequence<T>& f, const MaskPlan& plan,
                                  const ForecasterWeights<T>& w);

/// Pre-norm residual multi-head attention over tokens sharing a spatial cell.
template <typename T>
[[nodiscard]] Mat<T> temporal_attention(const Mat<T>& tokens, GridShape shape, const AttentionParams<T>& p,
                                        std::size_t n_heads);

/// Pre-norm residual multi-head attention over tokens of one frame.
template <typename T>
[[nodiscard]] Mat<T> spatial_attention(const Mat<T>& tokens, GridShape shape, const AttentionParams<T>& p,
                                       std::size_t n_heads);

/// Full forward pass. `taps` holds 1-based block indices whose outputs are returned.
template <typename T>
[[nodiscard]] ForwardResult<T> forward(const BasicFeatureSequence<T>& f, const MaskPlan& plan,
                                       const ForecasterWeights<T>& w, const std::set<std::size_t>& taps = {},
                                       ForwardTrace<T>* trace = nullptr);

/// Bilinear resampling (half-pixel centers, edge-clamped) of the spatial position
/// table to a new grid. Unchanged size returns an exact copy.
template <typename T>
[[nodiscard]] ForecasterWeights<T> interpolate_positions(const ForecasterWeights<T>& w, std::size_t new_h,
                                                         std::size_t new_w);

/// Throws DimensionError unless f and plan match the configured sequence shape.
template <typename T>
void check_forecaster_input(const BasicFeatureSequence<T>& f, const MaskPlan& plan, const ForecasterConfig& config);

// --- activations retained for the backward pass ---

template <typename T>
struct LayerNormCache {
    Mat<T> normalized;  // (x - mean) / std
    Vec<T> inv_std;
};

template <typename T>
struct AttentionCache {
    LayerNormCache<T> norm;
    Mat<T> normed, query, key, value, mixed;
    std::vector<Mat<T>> probs;  // [group * n_heads + head] -> [L, L]
};

template <typename T>
struct MlpCache {
    LayerNormCache<T> norm;
    Mat<T> normed, pre_act, act;
};

template <typename T>
struct BlockCache {
    Mat<T> input, after_temporal, after_spatial;
    AttentionCache<T> temporal, spatial;
    MlpCache<T> mlp;
};

template <typename T>
struct ForwardTrace {
    Mat<T> embedded;
    std::vector<BlockCache<T>> blocks;
    Mat<T> final_tokens;
};

}  // namespace foresight
