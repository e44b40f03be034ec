#include "foresight/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "foresight/errors.hpp"
#include "nn_ops.hpp"

namespace foresight {

std::size_t ForecasterConfig::mlp_hidden() const noexcept {
    return static_cast<std::size_t>(std::lround(static_cast<double>(d_model) * mlp_ratio));
}

void ForecasterConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_in < 1 || seq_frames < 1 || grid_h < 1 || grid_w < 1) {
        throw ParameterError("forecaster config: layer count and all dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ParameterError("forecaster config: d_model=" + std::to_string(d_model) +
                             " not divisible by n_heads=" + std::to_string(n_heads));
    }
    if (context_frames < 1 || context_frames >= seq_frames) {
        throw ParameterError("forecaster config: need 1 <= context_frames < seq_frames, got context_frames=" +
                             std::to_string(context_frames) + ", seq_frames=" + std::to_string(seq_frames));
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) throw ParameterError("forecaster config: mlp_ratio must be positive");
}

ForecasterConfig ForecasterConfig::small() {
    ForecasterConfig c;
    c.d_model = 768;
    c.n_heads = 6;
    return c;
}

ForecasterConfig ForecasterConfig::base() { return {}; }

ForecasterConfig ForecasterConfig::large() {
    ForecasterConfig c;
    c.d_model = 1536;
    c.n_heads = 12;
    return c;
}

std::size_t MaskPlan::count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MaskPlan MaskPlan::full(GridShape shape, std::size_t context_frames) {
    MaskPlan plan;
    plan.shape = shape;
    plan.strategy = MaskStrategy::full;
    plan.ratio = 1.0;
    plan.mask.assign(shape.tokens(), 0);
    std::fill(plan.mask.begin() + static_cast<std::ptrdiff_t>(std::min(context_frames, shape.frames) * shape.cells()),
              plan.mask.end(), std::uint8_t{1});
    return plan;
}

namespace {

template <typename T>
Affine<T> zero_affine(std::size_t in, std::size_t out) {
    return {Mat<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
            Vec<T>::Zero(static_cast<Eigen::Index>(out))};
}

template <typename T>
LayerNormParams<T> zero_norm(std::size_t d) {
    return {Vec<T>::Zero(static_cast<Eigen::Index>(d)), Vec<T>::Zero(static_cast<Eigen::Index>(d))};
}

template <typename T>
AttentionParams<T> zero_attention(std::size_t d) {
    return {zero_norm<T>(d), zero_affine<T>(d, d), zero_affine<T>(d, d), zero_affine<T>(d, d), zero_affine<T>(d, d)};
}

// Applies fn(name, tensor) to every parameter in canonical order.
template <typename W, typename Fn>
void visit(W& w, Fn&& fn) {
    auto affine = [&](const std::string& name, auto& a) {
        fn(name + ".weight", a.weight);
        fn(name + ".bias", a.bias);
    };
    auto norm = [&](const std::string& name, auto& n) {
        fn(name + ".scale", n.scale);
        fn(name + ".shift", n.shift);
    };
    auto attention = [&](const std::string& name, auto& a) {
        norm(name + ".norm", a.norm);
        affine(name + ".query", a.query);
        affine(name + ".key", a.key);
        affine(name + ".value", a.value);
        affine(name + ".output", a.output);
    };
    affine("input_proj", w.input_proj);
    fn(std::string("mask_token"), w.mask_token);
    fn(std::string("pos_temporal"), w.pos_temporal);
    fn(std::string("pos_spatial"), w.pos_spatial);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const std::string prefix = "blocks." + std::to_string(i);
        attention(prefix + ".temporal", w.blocks[i].temporal);
        attention(prefix + ".spatial", w.blocks[i].spatial);
        norm(prefix + ".mlp.norm", w.blocks[i].mlp.norm);
        affine(prefix + ".mlp.fc1", w.blocks[i].mlp.fc1);
        affine(prefix + ".mlp.fc2", w.blocks[i].mlp.fc2);
    }
    affine("output_proj", w.output_proj);
}

template <typename P, typename E>
ParamView<P> make_view(const std::string& name, E& tensor) {
    std::vector<std::size_t> shape;
    if (tensor.cols() == 1 && E::ColsAtCompileTime == 1) {
        shape = {static_cast<std::size_t>(tensor.rows())};
    } else {
        shape = {static_cast<std::size_t>(tensor.rows()), static_cast<std::size_t>(tensor.cols())};
    }
    return {name, std::span<P>(tensor.data(), static_cast<std::size_t>(tensor.size())), std::move(shape)};
}

}  // namespace

template <typename T>
ForecasterWeights<T> ForecasterWeights<T>::zeros(const ForecasterConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    ForecasterWeights<T> w;
    w.config = config;
    w.input_proj = zero_affine<T>(config.d_in, d);
    w.mask_token = Vec<T>::Zero(static_cast<Eigen::Index>(d));
    w.pos_temporal = Mat<T>::Zero(static_cast<Eigen::Index>(config.seq_frames), static_cast<Eigen::Index>(d));
    w.pos_spatial =
        Mat<T>::Zero(static_cast<Eigen::Index>(config.grid_h * config.grid_w), static_cast<Eigen::Index>(d));
    w.blocks.resize(config.n_layers);
    for (auto& b : w.blocks) {
        b.temporal = zero_attention<T>(d);
        b.spatial = zero_attention<T>(d);
        b.mlp = {zero_norm<T>(d), zero_affine<T>(d, config.mlp_hidden()), zero_affine<T>(config.mlp_hidden(), d)};
    }
    w.output_proj = zero_affine<T>(d, config.d_in);
    return w;
}

template <typename T>
template <typename U>
ForecasterWeights<U> ForecasterWeights<T>::cast() const {
    ForecasterWeights<U> out = ForecasterWeights<U>::zeros(config);
    auto dst = parameter_views(out);
    auto src = parameter_views(*this);
    for (std::size_t i = 0; i < dst.size(); ++i)
        std::transform(src[i].values.begin(), src[i].values.end(), dst[i].values.begin(),
                       [](T v) { return static_cast<U>(v); });
    return out;
}

template <typename T>
std::vector<ParamView<T>> parameter_views(ForecasterWeights<T>& w) {
    std::vector<ParamView<T>> views;
    visit(w, [&](const std::string& name, auto& tensor) { views.push_back(make_view<T>(name, tensor)); });
    return views;
}

template <typename T>
std::vector<ParamView<const T>> parameter_views(const ForecasterWeights<T>& w) {
    std::vector<ParamView<const T>> views;
    visit(w, [&](const std::string& name, const auto& tensor) { views.push_back(make_view<const T>(name, tensor)); });
    return views;
}

std::size_t count_parameters(const ForecasterConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t hidden = c.mlp_hidden();
    const std::size_t attention = 2 * d + 4 * (d * d + d);
    const std::size_t mlp = 2 * d + (d * hidden + hidden) + (hidden * d + d);
    return (c.d_in * d + d) + d + c.seq_frames * d + c.grid_h * c.grid_w * d + c.n_layers * (2 * attention + mlp) +
           (d * c.d_in + c.d_in);
}

template <typename T>
ForecasterWeights<T> init_weights(const ForecasterConfig& config, std::uint64_t seed, double init_std) {
    ForecasterWeights<T> w = ForecasterWeights<T>::zeros(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto truncated = [&] {
        for (;;) {
            const double z = normal(rng);
            if (std::abs(z) <= 2.0) return static_cast<T>(z * init_std);
        }
    };
    for (auto& view : parameter_views(w)) {
        const std::string& n = view.name;
        if (n.ends_with(".weight")) {
            for (T& v : view.values) v = truncated();
        } else if (n.ends_with(".scale")) {
            std::fill(view.values.begin(), view.values.end(), T(1));
        }
    }
    return w;
}

template <typename T>
void check_forecaster_input(const BasicFeatureSequence<T>& f, const MaskPlan& plan, const ForecasterConfig& config) {
    if (f.frames != config.seq_frames || f.height != config.grid_h || f.width != config.grid_w ||
        f.channels != config.d_in) {
        throw DimensionError("forecaster input [" + std::to_string(f.frames) + "," + std::to_string(f.height) + "," +
                             std::to_string(f.width) + "," + std::to_string(f.channels) + "] does not match config [" +
                             std::to_string(config.seq_frames) + "," + std::to_string(config.grid_h) + "," +
                             std::to_string(config.grid_w) + "," + std::to_string(config.d_in) + "]");
    }
    if (plan.shape != f.grid() || plan.mask.size() != f.tokens()) {
        throw DimensionError("mask plan shape does not match the feature grid");
    }
}

template <typename T>
Mat<T> embed_tokens(const BasicFeatureSequence<T>& f, const MaskPlan& plan, const ForecasterWeights<T>& w) {
    check_forecaster_input(f, plan, w.config);
    Mat<T> x = detail::affine_forward(Mat<T>(f.matrix()), w.input_proj);
    const std::size_t cells = f.cells();
    for (std::size_t t = 0; t < f.tokens(); ++t) {
        const auto row = static_cast<Eigen::Index>(t);
        if (plan.masked(t)) x.row(row) = w.mask_token.transpose();
        x.row(row) += w.pos_temporal.row(static_cast<Eigen::Index>(t / cells));
        x.row(row) += w.pos_spatial.row(static_cast<Eigen::Index>(t % cells));
    }
    return x;
}

template <typename T>
Mat<T> temporal_attention(const Mat<T>& tokens, GridShape shape, const AttentionParams<T>& p, std::size_t n_heads) {
    if (static_cast<std::size_t>(tokens.rows()) != shape.tokens()) throw DimensionError("temporal_attention: token count");
    return detail::attention_forward(tokens, detail::attention_groups(shape, detail::AttentionAxis::temporal), p,
                                     n_heads, static_cast<AttentionCache<T>*>(nullptr));
}

template <typename T>
Mat<T> spatial_attention(const Mat<T>& tokens, GridShape shape, const AttentionParams<T>& p, std::size_t n_heads) {
    if (static_cast<std::size_t>(tokens.rows()) != shape.tokens()) throw DimensionError("spatial_attention: token count");
    return detail::attention_forward(tokens, detail::attention_groups(shape, detail::AttentionAxis::spatial), p,
                                     n_heads, static_cast<AttentionCache<T>*>(nullptr));
}

template <typename T>
ForwardResult<T> forward(const BasicFeatureSequence<T>& f, const MaskPlan& plan, const ForecasterWeights<T>& w,
                         const std::set<std::size_t>& taps, ForwardTrace<T>* trace) {
    const auto& config = w.config;
    for (std::size_t tap : taps) {
        if (tap < 1 || tap > config.n_layers) {
            throw ParameterError("tap index " + std::to_string(tap) + " outside [1, " +
                                 std::to_string(config.n_layers) + "]");
        }
    }
    const GridShape shape = f.grid();
    Mat<T> x = embed_tokens(f, plan, w);
    const auto temporal_groups = detail::attention_groups(shape, detail::AttentionAxis::temporal);
    const auto spatial_groups = detail::attention_groups(shape, detail::AttentionAxis::spatial);

    ForwardResult<T> result;
    if (trace) {
        trace->embedded = x;
        trace->blocks.assign(w.blocks.size(), {});
    }
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const auto& b = w.blocks[i];
        BlockCache<T>* cache = trace ? &trace->blocks[i] : nullptr;
        if (cache) cache->input = x;
        x = detail::attention_forward(x, temporal_groups, b.temporal, config.n_heads, cache ? &cache->temporal : nullptr);
        if (cache) cache->after_temporal = x;
        x = detail::attention_forward(x, spatial_groups, b.spatial, config.n_heads, cache ? &cache->spatial : nullptr);
        if (cache) cache->after_spatial = x;
        x = detail::mlp_forward(x, b.mlp, cache ? &cache->mlp : nullptr);
        if (taps.contains(i + 1)) result.tapped.emplace(i + 1, x);
    }
    result.pred = BasicFeatureSequence<T>(f.frames, f.height, f.width, config.d_in);
    result.pred.frame_ids = f.frame_ids;
    result.pred.meta = f.meta;
    result.pred.matrix() = detail::affine_forward(x, w.output_proj);
    if (trace) trace->final_tokens = std::move(x);
    return result;
}

template <typename T>
ForecasterWeights<T> interpolate_positions(const ForecasterWeights<T>& w, std::size_t new_h, std::size_t new_w) {
    if (new_h < 1 || new_w < 1) throw ParameterError("interpolate_positions: target grid must be >= 1x1");
    ForecasterWeights<T> out = w;
    const std::size_t old_h = w.config.grid_h;
    const std::size_t old_w = w.config.grid_w;
    if (new_h == old_h && new_w == old_w) return out;

    // Half-pixel source coordinates, clamped to the table edge.
    auto source = [](std::size_t dst, std::size_t old_n, std::size_t new_n) {
        double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(old_n) / static_cast<double>(new_n) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(old_n - 1));
        const auto lo = static_cast<std::size_t>(std::floor(s));
        const std::size_t hi = std::min(lo + 1, old_n - 1);
        return std::tuple{lo, hi, static_cast<T>(s - static_cast<double>(lo))};
    };
    const auto d = w.pos_spatial.cols();
    out.pos_spatial.resize(static_cast<Eigen::Index>(new_h * new_w), d);
    for (std::size_t r = 0; r < new_h; ++r) {
        const auto [r0, r1, fr] = source(r, old_h, new_h);
        for (std::size_t c = 0; c < new_w; ++c) {
            const auto [c0, c1, fc] = source(c, old_w, new_w);
            auto at = [&](std::size_t rr, std::size_t cc) {
                return w.pos_spatial.row(static_cast<Eigen::Index>(rr * old_w + cc));
            };
            out.pos_spatial.row(static_cast<Eigen::Index>(r * new_w + c)) =
                (T(1) - fr) * ((T(1) - fc) * at(r0, c0) + fc * at(r0, c1)) +
                fr * ((T(1) - fc) * at(r1, c0) + fc * at(r1, c1));
        }
    }
    out.config.grid_h = new_h;
    out.config.grid_w = new_w;
    return out;
}

#define FORESIGHT_INSTANTIATE(T)                                                                                     \
    template struct ForecasterWeights<T>;                                                                            \
    template ForecasterWeights<T> init_weights<T>(const ForecasterConfig&, std::uint64_t, double);                 \
    template std::vector<ParamView<T>> parameter_views<T>(ForecasterWeights<T>&);                                    \
    template std::vector<ParamView<const T>> parameter_views<T>(const ForecasterWeights<T>&);                        \
    template void check_forecaster_input<T>(const BasicFeatureSequence<T>&, const MaskPlan&, const ForecasterConfig&); \
    template Mat<T> embed_tokens<T>(const BasicFeatureSequence<T>&, const MaskPlan&, const ForecasterWeights<T>&);  \
    template Mat<T> temporal_attention<T>(const Mat<T>&, GridShape, const AttentionParams<T>&, std::size_t);         \
    template Mat<T> spatial_attention<T>(const Mat<T>&, GridShape, const AttentionParams<T>&, std::size_t);          \
    template ForwardResult<T> forward<T>(const BasicFeatureSequence<T>&, const MaskPlan&, const ForecasterWeights<T>&, \
                                         const std::set<std::size_t>&, ForwardTrace<T>*);                            \
    template ForecasterWeights<T> interpolate_positions<T>(const ForecasterWeights<T>&, std::size_t, std::size_t);

FORESIGHT_INSTANTIATE(float)
FORESIGHT_INSTANTIATE(double)
#undef FORESIGHT_INSTANTIATE

template ForecasterWeights<double> ForecasterWeights<float>::cast<double>() const;
template ForecasterWeights<float> ForecasterWeights<double>::cast<float>() const;
template ForecasterWeights<float> ForecasterWeights<float>::cast<float>() const;
template ForecasterWeights<double> ForecasterWeights<double>::cast<double>() const;

}  // namespace foresight
