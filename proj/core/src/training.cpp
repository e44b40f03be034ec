#include "foresight/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "foresight/errors.hpp"
#include "foresight/parallel.hpp"
#include "nn_ops.hpp"

namespace foresight {

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::smooth_l1: return "smooth_l1";
        case LossVariant::l1: return "l1";
        case LossVariant::mse: return "mse";
        case LossVariant::smooth_l1_plus_cos: return "smooth_l1_plus_cos";
    }
    return "?";
}

LossVariant parse_loss_variant(const std::string& s) {
    if (s == "smooth_l1") return LossVariant::smooth_l1;
    if (s == "l1") return LossVariant::l1;
    if (s == "mse") return LossVariant::mse;
    if (s == "smooth_l1_plus_cos") return LossVariant::smooth_l1_plus_cos;
    throw ParameterError("unknown loss variant '" + s + "'");
}

std::string to_string(MaskStrategy s) { return s == MaskStrategy::full ? "full" : "random"; }

MaskStrategy parse_mask_strategy(const std::string& s) {
    if (s == "full") return MaskStrategy::full;
    if (s == "random") return MaskStrategy::random;
    throw ParameterError("unknown mask strategy '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ParameterError("train config: lr must be >= 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
        throw ParameterError("train config: Adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ParameterError("train config: adam_eps must be > 0");
    if (!(loss.beta > 0.0)) throw ParameterError("train config: SmoothL1 beta must be > 0");
    if (random_ratio && !(*random_ratio > 0.0 && *random_ratio <= 1.0)) {
        throw ParameterError("train config: random_ratio must lie in (0, 1]");
    }
    if (total_steps < 0 || warmup_steps < 0) throw ParameterError("train config: step counts must be >= 0");
    if (batch_size < 1) throw ParameterError("train config: batch_size must be >= 1");
    if (clip_norm && !(*clip_norm > 0.0)) throw ParameterError("train config: clip_norm must be > 0");
    if (phase2 && (phase2->grid_h < 1 || phase2->grid_w < 1 || phase2->steps < 0)) {
        throw ParameterError("train config: invalid phase2 block");
    }
}

// ---------------------------------------------------------------- losses

template <typename T>
T smooth_l1(std::span<const T> x, std::span<const T> y, T beta) {
    if (x.size() != y.size()) {
        throw DimensionError("smooth_l1: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
    }
    if (!(beta > T(0))) throw ParameterError("smooth_l1: beta must be > 0");
    T sum = 0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const T diff = std::abs(x[d] - y[d]);
        sum += diff < beta ? T(0.5) * diff * diff / beta : diff - T(0.5) * beta;
    }
    return sum;
}

namespace {

template <typename T>
T sign(T v) {
    return static_cast<T>((T(0) < v) - (v < T(0)));
}

// Per-token loss; writes dL/dpred into grad when non-null.
template <typename T>
T token_loss(const T* p, const T* t, std::size_t dims, const LossConfig& cfg, T* grad) {
    const T beta = static_cast<T>(cfg.beta);
    T value = 0;
    for (std::size_t d = 0; d < dims; ++d) {
        const T diff = p[d] - t[d];
        const T a = std::abs(diff);
        T g = 0;
        switch (cfg.variant) {
            case LossVariant::smooth_l1:
            case LossVariant::smooth_l1_plus_cos:
                if (a < beta) {
                    value += T(0.5) * diff * diff / beta;
                    g = diff / beta;
                } else {
                    value += a - T(0.5) * beta;
                    g = sign(diff);
                }
                break;
            case LossVariant::l1:
                value += a;
                g = sign(diff);
                break;
            case LossVariant::mse:
                value += diff * diff;
                g = T(2) * diff;
                break;
        }
        if (grad) grad[d] = g;
    }
    if (cfg.variant == LossVariant::smooth_l1_plus_cos) {
        T dot = 0, pp = 0, tt = 0;
        for (std::size_t d = 0; d < dims; ++d) {
            dot += p[d] * t[d];
            pp += p[d] * p[d];
            tt += t[d] * t[d];
        }
        const T np = std::sqrt(pp);
        const T nt = std::sqrt(tt);
        const T lambda = static_cast<T>(cfg.cos_weight);
        if (np > T(0) && nt > T(0)) {
            const T cos = dot / (np * nt);
            value += lambda * (T(1) - cos);
            if (grad) {
                for (std::size_t d = 0; d < dims; ++d) grad[d] -= lambda * (t[d] / (np * nt) - cos * p[d] / pp);
            }
        } else {
            value += lambda;
        }
    }
    return value;
}

template <typename T>
void check_loss_inputs(const BasicFeatureSequence<T>& pred, const BasicFeatureSequence<T>& target,
                       const MaskPlan& plan) {
    if (pred.grid() != target.grid() || pred.channels != target.channels) {
        throw DimensionError("mfm_loss: prediction and target shapes differ");
    }
    if (plan.shape != pred.grid() || plan.mask.size() != pred.tokens()) {
        throw DimensionError("mfm_loss: mask plan shape differs from prediction");
    }
    if (plan.count() == 0) throw ParameterError("mfm_loss: mask plan selects no positions");
}

}  // namespace

template <typename T>
T mfm_loss(const BasicFeatureSequence<T>& pred, const BasicFeatureSequence<T>& target, const MaskPlan& plan,
           const LossConfig& cfg) {
    check_loss_inputs(pred, target, plan);
    T sum = 0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < pred.tokens(); ++t) {
        if (!plan.masked(t)) continue;
        sum += token_loss<T>(pred.token(t), target.token(t), pred.channels, cfg, nullptr);
        ++count;
    }
    return sum / static_cast<T>(count);
}

template <typename T>
LossGradient<T> mfm_loss_with_grad(const BasicFeatureSequence<T>& pred, const BasicFeatureSequence<T>& target,
                                   const MaskPlan& plan, const LossConfig& cfg) {
    check_loss_inputs(pred, target, plan);
    LossGradient<T> out;
    out.grad = Mat<T>::Zero(static_cast<Eigen::Index>(pred.tokens()), static_cast<Eigen::Index>(pred.channels));
    const auto count = static_cast<T>(plan.count());
    T sum = 0;
    for (std::size_t t = 0; t < pred.tokens(); ++t) {
        if (!plan.masked(t)) continue;
        sum += token_loss<T>(pred.token(t), target.token(t), pred.channels, cfg,
                             out.grad.row(static_cast<Eigen::Index>(t)).data());
    }
    out.grad /= count;
    out.value = sum / count;
    return out;
}

// ---------------------------------------------------------------- masks

MaskPlan make_mask_plan(MaskStrategy strategy, std::size_t n_frames, std::size_t context_frames, std::size_t h,
                        std::size_t w, double ratio, std::uint64_t seed) {
    if (n_frames < 2 || context_frames < 1 || context_frames >= n_frames) {
        throw ParameterError("make_mask_plan: need 1 <= context_frames < n_frames, got " +
                             std::to_string(context_frames) + " / " + std::to_string(n_frames));
    }
    if (h < 1 || w < 1) throw ParameterError("make_mask_plan: grid must be >= 1x1");
    const GridShape shape{n_frames, h, w};
    if (strategy == MaskStrategy::full) return MaskPlan::full(shape, context_frames);
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ParameterError("make_mask_plan: ratio must lie in (0, 1]");
    if (ratio == 1.0) {
        MaskPlan plan = MaskPlan::full(shape, context_frames);
        plan.strategy = MaskStrategy::random;
        return plan;
    }
    MaskPlan plan;
    plan.shape = shape;
    plan.strategy = MaskStrategy::random;
    plan.ratio = ratio;
    plan.mask.assign(shape.tokens(), 0);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution draw(ratio);
    const std::size_t first = context_frames * shape.cells();
    do {
        for (std::size_t t = first; t < plan.mask.size(); ++t) plan.mask[t] = draw(rng) ? 1 : 0;
    } while (plan.count() == 0);
    return plan;
}

// ---------------------------------------------------------------- backward

template <typename T>
Gradients<T> backward(const BasicFeatureSequence<T>& f, const BasicFeatureSequence<T>& target, const MaskPlan& plan,
                      const ForecasterWeights<T>& w, const LossConfig& cfg) {
    ForwardTrace<T> trace;
    const ForwardResult<T> result = forward(f, plan, w, {}, &trace);
    const LossGradient<T> lg = mfm_loss_with_grad(result.pred, target, plan, cfg);

    Gradients<T> g;
    g.loss = lg.value;
    g.weights = ForecasterWeights<T>::zeros(w.config);
    const auto& config = w.config;
    const GridShape shape = f.grid();
    const auto temporal_groups = detail::attention_groups(shape, detail::AttentionAxis::temporal);
    const auto spatial_groups = detail::attention_groups(shape, detail::AttentionAxis::spatial);

    Mat<T> dx = detail::affine_backward(trace.final_tokens, lg.grad, w.output_proj, g.weights.output_proj);
    for (std::size_t i = w.blocks.size(); i-- > 0;) {
        const auto& cache = trace.blocks[i];
        auto& gb = g.weights.blocks[i];
        dx = detail::mlp_backward(dx, w.blocks[i].mlp, cache.mlp, gb.mlp);
        dx = detail::attention_backward(dx, spatial_groups, w.blocks[i].spatial, config.n_heads, cache.spatial,
                                        gb.spatial);
        dx = detail::attention_backward(dx, temporal_groups, w.blocks[i].temporal, config.n_heads, cache.temporal,
                                        gb.temporal);
    }

    const std::size_t cells = shape.cells();
    Mat<T> dvisible = dx;
    for (std::size_t t = 0; t < shape.tokens(); ++t) {
        const auto row = static_cast<Eigen::Index>(t);
        g.weights.pos_temporal.row(static_cast<Eigen::Index>(t / cells)) += dx.row(row);
        g.weights.pos_spatial.row(static_cast<Eigen::Index>(t % cells)) += dx.row(row);
        if (plan.masked(t)) {
            g.weights.mask_token += dx.row(row).transpose();
            dvisible.row(row).setZero();
        }
    }
    g.inputs = detail::affine_backward(Mat<T>(f.matrix()), dvisible, w.input_proj, g.weights.input_proj);
    for (std::size_t t = 0; t < shape.tokens(); ++t) {
        if (plan.masked(t)) g.inputs.row(static_cast<Eigen::Index>(t)).setZero();
    }
    return g;
}

// ---------------------------------------------------------------- optimizer

double scheduled_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps) {
    if (step >= total_steps) return 0.0;
    if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const double span = static_cast<double>(total_steps - warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) / span;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void adam_step(ForecasterWeights<T>& w, const ForecasterWeights<T>& grads, OptimizerState<T>& state,
               const TrainConfig& cfg, double lr) {
    auto params = parameter_views(w);
    const auto gviews = parameter_views(grads);
    auto m = parameter_views(state.first_moment);
    auto v = parameter_views(state.second_moment);
    if (params.size() != gviews.size() || params.size() != m.size()) {
        throw DimensionError("adam_step: gradient/state structure differs from weights");
    }
    state.step += 1;
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    const T eps = static_cast<T>(cfg.adam_eps);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg.adam_beta1, static_cast<double>(state.step)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg.adam_beta2, static_cast<double>(state.step)));
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values;
        const auto g = gviews[i].values;
        auto mi = m[i].values;
        auto vi = v[i].values;
        if (p.size() != g.size() || p.size() != mi.size() || p.size() != vi.size()) {
            throw DimensionError("adam_step: size mismatch for " + params[i].name);
        }
        for (std::size_t k = 0; k < p.size(); ++k) {
            mi[k] = b1 * mi[k] + (T(1) - b1) * g[k];
            vi[k] = b2 * vi[k] + (T(1) - b2) * g[k] * g[k];
            if (rate != T(0)) p[k] -= rate * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
        }
    }
}

// ---------------------------------------------------------------- training loop

TrainingState initial_state(const ForecasterWeights<float>& init) {
    return {init, OptimizerState<float>::zeros(init.config), 0};
}

namespace {

void check_windows(const std::vector<FeatureSequence>& windows, const ForecasterConfig& config, std::size_t grid_h,
                   std::size_t grid_w, bool crop, int phase) {
    if (windows.empty()) throw ParameterError("run_training: phase " + std::to_string(phase) + " has no windows");
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& f = windows[i];
        const bool grid_ok = crop ? (f.height >= grid_h && f.width >= grid_w)
                                  : (f.height == grid_h && f.width == grid_w);
        if (f.frames != config.seq_frames || f.channels != config.d_in || !grid_ok) {
            throw DimensionError("run_training: phase " + std::to_string(phase) + " window " + std::to_string(i) +
                                 " is [" + std::to_string(f.frames) + "," + std::to_string(f.height) + "," +
                                 std::to_string(f.width) + "," + std::to_string(f.channels) + "], expected [" +
                                 std::to_string(config.seq_frames) + "," + std::to_string(grid_h) + "," +
                                 std::to_string(grid_w) + "," + std::to_string(config.d_in) + "]");
        }
    }
}

}  // namespace

TrainResult run_training(const TrainingData& data, const TrainConfig& cfg, TrainingState state,
                         const TrainOptions& options) {
    cfg.validate();
    const std::int64_t phase1_steps = cfg.total_steps;
    const std::int64_t all_steps = phase1_steps + (cfg.phase2 ? cfg.phase2->steps : 0);
    const std::int64_t stop = std::min(options.stop_at.value_or(all_steps), all_steps);

    if (state.step < phase1_steps) {
        check_windows(data.phase1, state.weights.config, state.weights.config.grid_h, state.weights.config.grid_w,
                      cfg.random_crop, 1);
    }
    if (cfg.phase2 && stop > phase1_steps) {
        check_windows(data.phase2, state.weights.config, cfg.phase2->grid_h, cfg.phase2->grid_w, cfg.random_crop, 2);
    }

    TrainResult result;
    std::map<std::pair<int, std::int64_t>, std::vector<std::size_t>> permutations;
    const std::size_t batch = cfg.batch_size;
    std::vector<Gradients<float>> slots(batch);

    while (state.step < stop) {
        const int phase = state.step < phase1_steps ? 1 : 2;
        if (phase == 2 && state.step == phase1_steps) {
            state.weights = interpolate_positions(state.weights, cfg.phase2->grid_h, cfg.phase2->grid_w);
            state.optimizer = OptimizerState<float>::zeros(state.weights.config);
        }
        const std::int64_t local_step = phase == 1 ? state.step : state.step - phase1_steps;
        const std::int64_t local_total = phase == 1 ? phase1_steps : cfg.phase2->steps;
        const double lr = scheduled_lr(cfg.lr, local_step, phase == 1 ? cfg.warmup_steps : 0, local_total);
        const auto& windows = phase == 1 ? data.phase1 : data.phase2;
        const ForecasterConfig& mc = state.weights.config;

        std::vector<FeatureSequence> inputs(batch);
        std::vector<MaskPlan> plans(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::uint64_t sample = static_cast<std::uint64_t>(local_step) * batch + b;
            const auto epoch = static_cast<std::int64_t>(sample / windows.size());
            auto& perm = permutations[{phase, epoch}];
            if (perm.empty()) {
                perm.resize(windows.size());
                std::iota(perm.begin(), perm.end(), std::size_t{0});
                std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(phase),
                                                     static_cast<std::uint64_t>(epoch), 0x5eedULL));
                std::shuffle(perm.begin(), perm.end(), shuffle_rng);
            }
            const FeatureSequence& window = windows[perm[sample % windows.size()]];
            std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(phase),
                                         static_cast<std::uint64_t>(local_step), b));
            if (cfg.random_crop && (window.height != mc.grid_h || window.width != mc.grid_w)) {
                std::uniform_int_distribution<std::size_t> top(0, window.height - mc.grid_h);
                std::uniform_int_distribution<std::size_t> left(0, window.width - mc.grid_w);
                const std::size_t t0 = top(rng);
                const std::size_t l0 = left(rng);
                inputs[b] = window.crop(t0, l0, mc.grid_h, mc.grid_w);
            } else {
                inputs[b] = window;
            }
            double ratio = 1.0;
            if (cfg.mask_strategy == MaskStrategy::random) {
                ratio = cfg.random_ratio ? *cfg.random_ratio : std::uniform_real_distribution<double>(0.5, 1.0)(rng);
            }
            plans[b] = make_mask_plan(cfg.mask_strategy, mc.seq_frames, mc.context_frames, mc.grid_h, mc.grid_w,
                                      ratio, rng());
        }

        parallel_for(batch, [&](std::size_t b) {
            slots[b] = backward(inputs[b], inputs[b], plans[b], state.weights, cfg.loss);
        });

        ForecasterWeights<float> total = std::move(slots[0].weights);
        double loss = slots[0].loss;
        {
            auto acc = parameter_views(total);
            for (std::size_t b = 1; b < batch; ++b) {
                loss += slots[b].loss;
                const auto add = parameter_views(std::as_const(slots[b].weights));
                for (std::size_t i = 0; i < acc.size(); ++i)
                    for (std::size_t k = 0; k < acc[i].values.size(); ++k) acc[i].values[k] += add[i].values[k];
            }
            const float inv = 1.0f / static_cast<float>(batch);
            double norm_sq = 0.0;
            for (auto& view : acc)
                for (float& v : view.values) {
                    v *= inv;
                    norm_sq += static_cast<double>(v) * v;
                }
            if (cfg.clip_norm && std::sqrt(norm_sq) > *cfg.clip_norm) {
                const auto scale = static_cast<float>(*cfg.clip_norm / std::sqrt(norm_sq));
                for (auto& view : acc)
                    for (float& v : view.values) v *= scale;
            }
        }
        loss /= static_cast<double>(batch);

        adam_step(state.weights, total, state.optimizer, cfg, lr);
        const LossRecord record{state.step, phase, lr, loss};
        result.curve.push_back(record);
        if (options.on_step) options.on_step(record);
        ++state.step;
    }
    result.state = std::move(state);
    return result;
}

void write_loss_csv(const std::string& path, std::span<const LossRecord> curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss curve to " + path);
    out.precision(9);
    out << "step,phase,lr,loss\n";
    for (const auto& r : curve) out << r.step << ',' << r.phase << ',' << r.lr << ',' << r.loss << '\n';
}

#define FORESIGHT_INSTANTIATE(T)                                                                                      \
    template T smooth_l1<T>(std::span<const T>, std::span<const T>, T);                                             \
    template T mfm_loss<T>(const BasicFeatureSequence<T>&, const BasicFeatureSequence<T>&, const MaskPlan&,          \
                           const LossConfig&);                                                                        \
    template LossGradient<T> mfm_loss_with_grad<T>(const BasicFeatureSequence<T>&, const BasicFeatureSequence<T>&,   \
                                                   const MaskPlan&, const LossConfig&);                               \
    template Gradients<T> backward<T>(const BasicFeatureSequence<T>&, const BasicFeatureSequence<T>&, const MaskPlan&, \
                                      const ForecasterWeights<T>&, const LossConfig&);                                \
    template void adam_step<T>(ForecasterWeights<T>&, const ForecasterWeights<T>&, OptimizerState<T>&,               \
                               const TrainConfig&, double);

FORESIGHT_INSTANTIATE(float)
FORESIGHT_INSTANTIATE(double)
#undef FORESIGHT_INSTANTIATE

}  // namespace foresight
