#pragma once

// Loop-level re-implementation of the forecaster used as a test oracle.

#include <cmath>
#include <vector>

#include "foresight/forecaster.hpp"

namespace reference {

using Row = std::vector<double>;

inline Row layer_norm(const Row& x, const foresight::LayerNormParams<double>& p) {
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    Row y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * p.scale(static_cast<Eigen::Index>(i)) +
               p.shift(static_cast<Eigen::Index>(i));
    return y;
}

inline Row affine(const Row& x, const foresight::Affine<double>& a) {
    Row y(static_cast<std::size_t>(a.weight.rows()));
    for (Eigen::Index o = 0; o < a.weight.rows(); ++o) {
        double s = a.bias(o);
        for (Eigen::Index i = 0; i < a.weight.cols(); ++i) s += a.weight(o, i) * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = s;
    }
    return y;
}

/// Residual multi-head attention inside each group of token indices.
inline std::vector<Row> attention(const std::vector<Row>& x, const std::vector<std::vector<std::size_t>>& groups,
                                  const foresight::AttentionParams<double>& p, std::size_t heads) {
    std::vector<Row> out = x;
    const std::size_t d = x.front().size();
    const std::size_t hd = d / heads;
    for (const auto& g : groups) {
        std::vector<Row> q, k, v;
        for (std::size_t t : g) {
            const Row n = layer_norm(x[t], p.norm);
            q.push_back(affine(n, p.query));
            k.push_back(affine(n, p.key));
            v.push_back(affine(n, p.value));
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            Row mixed(d, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
                std::vector<double> score(g.size());
                double top = -1e300;
                for (std::size_t j = 0; j < g.size(); ++j) {
                    double s = 0.0;
                    for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) s += q[i][c] * k[j][c];
                    score[j] = s / std::sqrt(static_cast<double>(hd));
                    top = std::max(top, score[j]);
                }
                double z = 0.0;
                for (double& s : score) z += (s = std::exp(s - top));
                for (std::size_t j = 0; j < g.size(); ++j)
                    for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) mixed[c] += score[j] / z * v[j][c];
            }
            const Row o = affine(mixed, p.output);
            for (std::size_t c = 0; c < d; ++c) out[g[i]][c] += o[c];
        }
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> temporal_groups(foresight::GridShape s) {
    std::vector<std::vector<std::size_t>> groups(s.cells());
    for (std::size_t n = 0; n < s.frames; ++n)
        for (std::size_t c = 0; c < s.cells(); ++c) groups[c].push_back(n * s.cells() + c);
    return groups;
}

inline std::vector<std::vector<std::size_t>> spatial_groups(foresight::GridShape s) {
    std::vector<std::vector<std::size_t>> groups(s.frames);
    for (std::size_t n = 0; n < s.frames; ++n)
        for (std::size_t c = 0; c < s.cells(); ++c) groups[n].push_back(n * s.cells() + c);
    return groups;
}

inline std::vector<Row> mlp(const std::vector<Row>& x, const foresight::MlpParams<double>& p) {
    std::vector<Row> out = x;
    for (std::size_t t = 0; t < x.size(); ++t) {
        Row h = affine(layer_norm(x[t], p.norm), p.fc1);
        for (double& u : h) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
        const Row y = affine(h, p.fc2);
        for (std::size_t c = 0; c < y.size(); ++c) out[t][c] += y[c];
    }
    return out;
}

inline std::vector<Row> to_rows(const foresight::Mat<double>& m) {
    std::vector<Row> rows(static_cast<std::size_t>(m.rows()), Row(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
    return rows;
}

/// Full forward pass; returns output tokens [tokens][d_in].
inline std::vector<Row> forward(const foresight::BasicFeatureSequence<double>& f, const foresight::MaskPlan& plan,
                                const foresight::ForecasterWeights<double>& w) {
    const auto shape = f.grid();
    const std::size_t d = w.config.d_model;
    std::vector<Row> x(shape.tokens(), Row(d));
    for (std::size_t t = 0; t < shape.tokens(); ++t) {
        Row in(f.token(t), f.token(t) + f.channels);
        Row e = affine(in, w.input_proj);
        for (std::size_t c = 0; c < d; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            const double base = plan.masked(t) ? w.mask_token(ci) : e[c];
            x[t][c] = base + w.pos_temporal(static_cast<Eigen::Index>(t / shape.cells()), ci) +
                      w.pos_spatial(static_cast<Eigen::Index>(t % shape.cells()), ci);
        }
    }
    for (const auto& b : w.blocks) {
        x = attention(x, temporal_groups(shape), b.temporal, w.config.n_heads);
        x = attention(x, spatial_groups(shape), b.spatial, w.config.n_heads);
        x = mlp(x, b.mlp);
    }
    for (auto& row : x) row = affine(row, w.output_proj);
    return x;
}

}  // namespace reference
