#pragma once

// Layer primitives with explicit forward caches and hand-written backward passes.

#include <cmath>
#include <numbers>
#include <vector>

#include "foresight/forecaster.hpp"

namespace foresight::detail {

template <typename T>
constexpr T layer_norm_eps() {
    return T(1e-5);
}

enum class AttentionAxis { temporal, spatial };

using Groups = std::vector<std::vector<Eigen::Index>>;

/// Token groups that attend to each other: one per cell (temporal) or per frame (spatial).
inline Groups attention_groups(GridShape shape, AttentionAxis axis) {
    const auto cells = static_cast<Eigen::Index>(shape.cells());
    const auto frames = static_cast<Eigen::Index>(shape.frames);
    Groups groups;
    if (axis == AttentionAxis::temporal) {
        groups.resize(static_cast<std::size_t>(cells));
        for (Eigen::Index c = 0; c < cells; ++c)
            for (Eigen::Index n = 0; n < frames; ++n) groups[static_cast<std::size_t>(c)].push_back(n * cells + c);
    } else {
        groups.resize(static_cast<std::size_t>(frames));
        for (Eigen::Index n = 0; n < frames; ++n)
            for (Eigen::Index c = 0; c < cells; ++c) groups[static_cast<std::size_t>(n)].push_back(n * cells + c);
    }
    return groups;
}

template <typename T>
Mat<T> affine_forward(const Mat<T>& x, const Affine<T>& p) {
    Mat<T> y = x * p.weight.transpose();
    y.rowwise() += p.bias.transpose();
    return y;
}

/// Accumulates parameter gradients into `g`, returns dL/dx.
template <typename T>
Mat<T> affine_backward(const Mat<T>& x, const Mat<T>& dy, const Affine<T>& p, Affine<T>& g) {
    g.weight.noalias() += dy.transpose() * x;
    g.bias += dy.colwise().sum().transpose();
    return dy * p.weight;
}

template <typename T>
Mat<T> layer_norm_forward(const Mat<T>& x, const LayerNormParams<T>& p, LayerNormCache<T>* cache) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    Mat<T> normalized(rows, cols);
    Vec<T> inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const T mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).eval();
        const T var = centered.square().mean();
        const T is = T(1) / std::sqrt(var + layer_norm_eps<T>());
        inv_std(r) = is;
        normalized.row(r) = centered * is;
    }
    Mat<T> y = normalized;
    y.array().rowwise() *= p.scale.transpose().array();
    y.rowwise() += p.shift.transpose();
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormParams<T>& p, const LayerNormCache<T>& cache,
                           LayerNormParams<T>& g) {
    g.scale += (dy.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    g.shift += dy.colwise().sum().transpose();
    Mat<T> dxhat = dy;
    dxhat.array().rowwise() *= p.scale.transpose().array();
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T mean_d = dxhat.row(r).mean();
        const T mean_dx = (dxhat.row(r).array() * cache.normalized.row(r).array()).mean();
        dx.row(r) = cache.inv_std(r) *
                    (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <typename T>
T gelu(T u) {
    return T(0.5) * u * (T(1) + std::erf(u / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T u) {
    const T cdf = T(0.5) * (T(1) + std::erf(u / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * u * u) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    return cdf + u * pdf;
}

template <typename T>
Mat<T> gather_rows(const Mat<T>& src, const std::vector<Eigen::Index>& idx, Eigen::Index col, Eigen::Index width) {
    Mat<T> out(static_cast<Eigen::Index>(idx.size()), width);
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]).segment(col, width);
    return out;
}

template <typename T>
void scatter_rows(Mat<T>& dst, const Mat<T>& src, const std::vector<Eigen::Index>& idx, Eigen::Index col) {
    for (std::size_t i = 0; i < idx.size(); ++i)
        dst.row(idx[i]).segment(col, src.cols()) = src.row(static_cast<Eigen::Index>(i));
}

template <typename T>
void scatter_add_rows(Mat<T>& dst, const Mat<T>& src, const std::vector<Eigen::Index>& idx, Eigen::Index col) {
    for (std::size_t i = 0; i < idx.size(); ++i)
        dst.row(idx[i]).segment(col, src.cols()) += src.row(static_cast<Eigen::Index>(i));
}

template <typename T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
    }
}

template <typename T>
Mat<T> attention_forward(const Mat<T>& x, const Groups& groups, const AttentionParams<T>& p, std::size_t n_heads,
                         AttentionCache<T>* cache) {
    LayerNormCache<T> norm_cache;
    Mat<T> normed = layer_norm_forward(x, p.norm, cache ? &norm_cache : nullptr);
    Mat<T> q = affine_forward(normed, p.query);
    Mat<T> k = affine_forward(normed, p.key);
    Mat<T> v = affine_forward(normed, p.value);
    const auto d_model = x.cols();
    const auto hd = d_model / static_cast<Eigen::Index>(n_heads);
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> mixed = Mat<T>::Zero(x.rows(), d_model);
    std::vector<Mat<T>> probs;
    if (cache) probs.reserve(groups.size() * n_heads);
    for (const auto& idx : groups) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const Eigen::Index col = static_cast<Eigen::Index>(h) * hd;
            const Mat<T> qg = gather_rows(q, idx, col, hd);
            const Mat<T> kg = gather_rows(k, idx, col, hd);
            const Mat<T> vg = gather_rows(v, idx, col, hd);
            Mat<T> s = (qg * kg.transpose()) * scale;
            softmax_rows(s);
            scatter_rows(mixed, Mat<T>(s * vg), idx, col);
            if (cache) probs.push_back(std::move(s));
        }
    }
    Mat<T> y = x + affine_forward(mixed, p.output);
    if (cache) {
        cache->norm = std::move(norm_cache);
        cache->normed = std::move(normed);
        cache->query = std::move(q);
        cache->key = std::move(k);
        cache->value = std::move(v);
        cache->mixed = std::move(mixed);
        cache->probs = std::move(probs);
    }
    return y;
}

template <typename T>
Mat<T> attention_backward(const Mat<T>& dy, const Groups& groups, const AttentionParams<T>& p, std::size_t n_heads,
                          const AttentionCache<T>& cache, AttentionParams<T>& g) {
    const Mat<T> dmixed = affine_backward(cache.mixed, dy, p.output, g.output);
    const auto d_model = dy.cols();
    const auto hd = d_model / static_cast<Eigen::Index>(n_heads);
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> dq = Mat<T>::Zero(dy.rows(), d_model);
    Mat<T> dk = Mat<T>::Zero(dy.rows(), d_model);
    Mat<T> dv = Mat<T>::Zero(dy.rows(), d_model);
    std::size_t slot = 0;
    for (const auto& idx : groups) {
        for (std::size_t h = 0; h < n_heads; ++h, ++slot) {
            const Eigen::Index col = static_cast<Eigen::Index>(h) * hd;
            const Mat<T>& prob = cache.probs[slot];
            const Mat<T> qg = gather_rows(cache.query, idx, col, hd);
            const Mat<T> kg = gather_rows(cache.key, idx, col, hd);
            const Mat<T> vg = gather_rows(cache.value, idx, col, hd);
            const Mat<T> dout = gather_rows(dmixed, idx, col, hd);
            const Mat<T> dprob = dout * vg.transpose();
            const Vec<T> row_dot = (dprob.array() * prob.array()).rowwise().sum();
            Mat<T> dscore = prob.array() * (dprob.colwise() - row_dot).array();
            dscore *= scale;
            scatter_add_rows(dq, Mat<T>(dscore * kg), idx, col);
            scatter_add_rows(dk, Mat<T>(dscore.transpose() * qg), idx, col);
            scatter_add_rows(dv, Mat<T>(prob.transpose() * dout), idx, col);
        }
    }
    Mat<T> dnormed = affine_backward(cache.normed, dq, p.query, g.query);
    dnormed += affine_backward(cache.normed, dk, p.key, g.key);
    dnormed += affine_backward(cache.normed, dv, p.value, g.value);
    return dy + layer_norm_backward(dnormed, p.norm, cache.norm, g.norm);
}

template <typename T>
Mat<T> mlp_forward(const Mat<T>& x, const MlpParams<T>& p, MlpCache<T>* cache) {
    LayerNormCache<T> norm_cache;
    Mat<T> normed = layer_norm_forward(x, p.norm, cache ? &norm_cache : nullptr);
    Mat<T> pre = affine_forward(normed, p.fc1);
    Mat<T> act = pre.unaryExpr([](T u) { return gelu(u); });
    Mat<T> y = x + affine_forward(act, p.fc2);
    if (cache) {
        cache->norm = std::move(norm_cache);
        cache->normed = std::move(normed);
        cache->pre_act = std::move(pre);
        cache->act = std::move(act);
    }
    return y;
}

template <typename T>
Mat<T> mlp_backward(const Mat<T>& dy, const MlpParams<T>& p, const MlpCache<T>& cache, MlpParams<T>& g) {
    Mat<T> dact = affine_backward(cache.act, dy, p.fc2, g.fc2);
    const Mat<T> dpre = dact.array() * cache.pre_act.unaryExpr([](T u) { return gelu_grad(u); }).array();
    const Mat<T> dnormed = affine_backward(cache.normed, dpre, p.fc1, g.fc1);
    return dy + layer_norm_backward(dnormed, p.norm, cache.norm, g.norm);
}

}  // namespace foresight::detail
