#include "foresight/feature_space.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "foresight/errors.hpp"
#include "foresight/parallel.hpp"

namespace foresight {

namespace {

constexpr Eigen::Index kChunkRows = 4096;

// Sums per-chunk partials strictly in chunk order; at most worker_count()
// partials are alive at once.
template <typename Partial, typename Make>
Partial ordered_chunk_sum(Eigen::Index rows, Partial zero, Make make) {
    const Eigen::Index chunks = (rows + kChunkRows - 1) / kChunkRows;
    const auto wave = static_cast<Eigen::Index>(std::max<std::size_t>(1, worker_count()));
    Partial acc = zero;
    std::vector<Partial> slots;
    for (Eigen::Index first = 0; first < chunks; first += wave) {
        const Eigen::Index count = std::min(wave, chunks - first);
        slots.assign(static_cast<std::size_t>(count), zero);
        parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
            const Eigen::Index begin = (first + static_cast<Eigen::Index>(i)) * kChunkRows;
            const Eigen::Index len = std::min(kChunkRows, rows - begin);
            slots[i] = make(begin, len);
        });
        for (const auto& s : slots) acc += s;
    }
    return acc;
}

void check_channels(const FeatureSequence& f, std::size_t expected, const char* what) {
    if (f.channels != expected) {
        throw DimensionError(std::string(what) + ": feature channels " + std::to_string(f.channels) +
                             " != model dimension " + std::to_string(expected));
    }
}

}  // namespace

FeatureSequence concat_layers(std::span<const FeatureSequence> layers) {
    if (layers.empty()) throw ParameterError("concat_layers: at least one layer is required");
    const FeatureSequence& first = layers.front();
    const std::size_t d_enc = first.channels;
    for (std::size_t l = 1; l < layers.size(); ++l) {
        const auto& f = layers[l];
        if (f.frames != first.frames || f.height != first.height || f.width != first.width ||
            f.channels != d_enc || f.frame_ids != first.frame_ids) {
            throw DimensionError("concat_layers: layer " + std::to_string(l) + " shape [" + std::to_string(f.frames) +
                                 "," + std::to_string(f.height) + "," + std::to_string(f.width) + "," +
                                 std::to_string(f.channels) + "] does not match layer 0");
        }
    }
    FeatureSequence out(first.frames, first.height, first.width, d_enc * layers.size());
    out.frame_ids = first.frame_ids;
    out.meta = first.meta;
    out.meta["concat_layers"] = layers.size();
    for (std::size_t t = 0; t < out.tokens(); ++t) {
        float* dst = out.token(t);
        for (std::size_t l = 0; l < layers.size(); ++l) std::copy_n(layers[l].token(t), d_enc, dst + l * d_enc);
    }
    return out;
}

PcaModel fit_pca(const Eigen::MatrixXd& tokens, std::size_t d_out) {
    const auto m = static_cast<std::size_t>(tokens.rows());
    const auto c_in = static_cast<std::size_t>(tokens.cols());
    if (d_out < 1 || d_out > std::min(m, c_in)) {
        throw ParameterError("fit_pca: d_out=" + std::to_string(d_out) + " must lie in [1, min(M=" +
                             std::to_string(m) + ", C_in=" + std::to_string(c_in) + ")]");
    }
    if (!tokens.allFinite()) throw DataError("fit_pca: tokens contain non-finite values");

    const Eigen::Index rows = tokens.rows();
    const Eigen::Index cols = tokens.cols();
    Eigen::VectorXd sum = ordered_chunk_sum<Eigen::VectorXd>(
        rows, Eigen::VectorXd::Zero(cols),
        [&](Eigen::Index b, Eigen::Index n) -> Eigen::VectorXd { return tokens.middleRows(b, n).colwise().sum(); });
    const Eigen::VectorXd mean = sum / static_cast<double>(m);

    Eigen::MatrixXd scatter = ordered_chunk_sum<Eigen::MatrixXd>(
        rows, Eigen::MatrixXd::Zero(cols, cols), [&](Eigen::Index b, Eigen::Index n) -> Eigen::MatrixXd {
            const Eigen::MatrixXd centered = tokens.middleRows(b, n).rowwise() - mean.transpose();
            Eigen::MatrixXd g = Eigen::MatrixXd::Zero(cols, cols);
            g.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
            return g;
        });
    scatter.triangularView<Eigen::StrictlyUpper>() = scatter.transpose();
    const Eigen::MatrixXd covariance = scatter / static_cast<double>(m);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
    if (solver.info() != Eigen::Success) throw NumericError("fit_pca: covariance eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    PcaModel model;
    model.c_in = c_in;
    model.d_out = d_out;
    model.mean = mean;
    model.components.resize(static_cast<Eigen::Index>(d_out), cols);
    model.explained_variance.resize(static_cast<Eigen::Index>(d_out));
    for (std::size_t k = 0; k < d_out; ++k) {
        const Eigen::Index src = cols - 1 - static_cast<Eigen::Index>(k);
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        model.components.row(static_cast<Eigen::Index>(k)) = v.transpose();
        model.explained_variance(static_cast<Eigen::Index>(k)) = std::max(0.0, solver.eigenvalues()(src));
    }
    return model;
}

Eigen::MatrixXd sample_tokens(std::span<const FeatureSequence> sequences, std::size_t max_tokens,
                              std::uint64_t seed) {
    if (sequences.empty()) throw ParameterError("sample_tokens: no sequences");
    const std::size_t channels = sequences.front().channels;
    std::vector<std::size_t> offsets{0};
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (sequences[i].channels != channels) {
            throw DimensionError("sample_tokens: sequence " + std::to_string(i) + " has " +
                                 std::to_string(sequences[i].channels) + " channels, expected " +
                                 std::to_string(channels));
        }
        offsets.push_back(offsets.back() + sequences[i].tokens());
    }
    const std::size_t total = offsets.back();
    std::vector<std::size_t> picks;
    if (total <= max_tokens) {
        picks.resize(total);
        std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
        std::vector<std::size_t> all(total);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::mt19937_64 rng(seed);
        std::sample(all.begin(), all.end(), std::back_inserter(picks), max_tokens, rng);
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(picks.size()), static_cast<Eigen::Index>(channels));
    std::size_t seq = 0;
    for (std::size_t r = 0; r < picks.size(); ++r) {
        while (picks[r] >= offsets[seq + 1]) ++seq;
        const float* src = sequences[seq].token(picks[r] - offsets[seq]);
        for (std::size_t c = 0; c < channels; ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = src[c];
    }
    return out;
}

FeatureSequence pca_encode(const PcaModel& model, const FeatureSequence& f) {
    check_channels(f, model.c_in, "pca_encode");
    FeatureSequence out(f.frames, f.height, f.width, model.d_out);
    out.frame_ids = f.frame_ids;
    out.meta = f.meta;
    const Eigen::MatrixXd x = f.matrix().cast<double>();
    const Eigen::MatrixXd codes = (x.rowwise() - model.mean.transpose()) * model.components.transpose();
    out.matrix() = codes.cast<float>();
    return out;
}

FeatureSequence pca_decode(const PcaModel& model, const FeatureSequence& f) {
    check_channels(f, model.d_out, "pca_decode");
    FeatureSequence out(f.frames, f.height, f.width, model.c_in);
    out.frame_ids = f.frame_ids;
    out.meta = f.meta;
    const Eigen::MatrixXd z = f.matrix().cast<double>();
    const Eigen::MatrixXd x = (z * model.components).rowwise() + model.mean.transpose();
    out.matrix() = x.cast<float>();
    return out;
}

double reconstruction_mse(const PcaModel& model, const Eigen::MatrixXd& tokens) {
    if (static_cast<std::size_t>(tokens.cols()) != model.c_in) throw DimensionError("reconstruction_mse: channel mismatch");
    const Eigen::MatrixXd centered = tokens.rowwise() - model.mean.transpose();
    const Eigen::MatrixXd projected = (centered * model.components.transpose()) * model.components;
    return (centered - projected).rowwise().squaredNorm().mean();
}

}  // namespace foresight
