#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foresight/feature_sequence.hpp"
#include "foresight/forecaster.hpp"

namespace foresight {

enum class LossVariant { smooth_l1, l1, mse, smooth_l1_plus_cos };

[[nodiscard]] std::string to_string(LossVariant v);
[[nodiscard]] LossVariant parse_loss_variant(const std::string& s);
[[nodiscard]] std::string to_string(MaskStrategy s);
[[nodiscard]] MaskStrategy parse_mask_strategy(const std::string& s);

struct LossConfig {
    LossVariant variant = LossVariant::smooth_l1;
    double beta = 0.1;
    double cos_weight = 1.0;  // lambda of the cosine term
};

struct Phase2Config {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::int64_t steps = 0;
    bool operator==(const Phase2Config&) const = default;
};

struct TrainConfig {
    LossConfig loss;
    MaskStrategy mask_strategy = MaskStrategy::full;
    /// Fixed masking ratio for the random strategy; unset draws one per sample from [0.5, 1).
    std::optional<double> random_ratio;
    double lr = 6.4e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1000;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    std::optional<double> clip_norm;
    /// Sample a random grid-sized crop (same location in every frame) from larger windows.
    bool random_crop = false;
    std::optional<Phase2Config> phase2;

    /// Throws ParameterError on invalid values.
    void validate() const;
};

/// Per-coordinate SmoothL1 summed over the vector.
template <typename T>
[[nodiscard]] T smooth_l1(std::span<const T> x, std::span<const T> y, T beta);

/// Mean over masked tokens of the per-token loss.
template <typename T>
[[nodiscard]] T mfm_loss(const BasicFeatureSequence<T>& pred, const BasicFeatureSequence<T>& target,
                         const MaskPlan& plan, const LossConfig& cfg);

/// Loss plus dL/dpred ([tokens, channels]); rows at unmasked tokens are exactly zero.
template <typename T>
struct LossGradient {
    T value{};
    Mat<T> grad;
};

template <typename T>
[[nodiscard]] LossGradient<T> mfm_loss_with_grad(const BasicFeatureSequence<T>& pred,
                                                 const BasicFeatureSequence<T>& target, const MaskPlan& plan,
                                                 const LossConfig& cfg);

/// Full masks future frames; random masks each future token with probability
/// `ratio`, redrawing until at least one token is masked. Context is never masked.
[[nodiscard]] MaskPlan make_mask_plan(MaskStrategy strategy, std::size_t n_frames, std::size_t context_frames,
                                      std::size_t h, std::size_t w, double ratio, std::uint64_t seed);

template <typename T>
struct Gradients {
    T loss{};
    ForecasterWeights<T> weights;
    /// dL/d(input features), [tokens, d_in].
    Mat<T> inputs;
};

/// Reverse-mode gradients of mfm_loss(forward(f), target) w.r.t. every parameter.
template <typename T>
[[nodiscard]] Gradients<T> backward(const BasicFeatureSequence<T>& f, const BasicFeatureSequence<T>& target,
                                    const MaskPlan& plan, const ForecasterWeights<T>& w, const LossConfig& cfg);

template <typename T>
struct OptimizerState {
    ForecasterWeights<T> first_moment;
    ForecasterWeights<T> second_moment;
    std::int64_t step = 0;  // completed Adam updates

    static OptimizerState zeros(const ForecasterConfig& config) {
        return {ForecasterWeights<T>::zeros(config), ForecasterWeights<T>::zeros(config), 0};
    }
};

/// Linear warmup over `warmup_steps`, then cosine decay reaching 0 at `total_steps`.
[[nodiscard]] double scheduled_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps,
                                  std::int64_t total_steps);

/// One bias-corrected Adam update at learning rate `lr`, in place.
template <typename T>
void adam_step(ForecasterWeights<T>& w, const ForecasterWeights<T>& grads, OptimizerState<T>& state,
               const TrainConfig& cfg, double lr);

struct LossRecord {
    std::int64_t step = 0;
    int phase = 1;
    double lr = 0.0;
    double loss = 0.0;
    bool operator==(const LossRecord&) const = default;
};

/// Training windows: every sequence has exactly seq_frames frames and the
/// phase's grid (or a larger grid when cropping).
struct TrainingData {
    std::vector<FeatureSequence> phase1;
    std::vector<FeatureSequence> phase2;
};

/// Resumable training state; `step` counts completed steps across both phases.
struct TrainingState {
    ForecasterWeights<float> weights;
    OptimizerState<float> optimizer;
    std::int64_t step = 0;
};

struct TrainOptions {
    /// Stop once this many global steps are complete (for checkpoint/resume).
    std::optional<std::int64_t> stop_at;
    std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
    TrainingState state;
    std::vector<LossRecord> curve;
};

/// Phase 1 at the configured grid; with `phase2` set, interpolates the spatial
/// positions to the phase-2 grid, resets Adam, and continues on data.phase2.
[[nodiscard]] TrainResult run_training(const TrainingData& data, const TrainConfig& cfg, TrainingState state,
                                       const TrainOptions& options = {});

[[nodiscard]] TrainingState initial_state(const ForecasterWeights<float>& init);

/// Writes "step,phase,lr,loss" rows.
void write_loss_csv(const std::string& path, std::span<const LossRecord> curve);

}  // namespace foresight
