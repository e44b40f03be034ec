#pragma once

#include <cstdint>
#include <span>

#include <Eigen/Core>

#include "foresight/feature_sequence.hpp"

namespace foresight {

/// Concatenates per-layer features along channels, preserving list order.
/// Output channel l * D_enc + k is channel k of layer l.
[[nodiscard]] FeatureSequence concat_layers(std::span<const FeatureSequence> layers);

/// Mean + orthonormal component rows mapping C_in-dim tokens to D-dim codes.
struct PcaModel {
    Eigen::VectorXd mean;                // [c_in]
    Eigen::MatrixXd components;          // [d_out, c_in], orthonormal rows
    Eigen::VectorXd explained_variance;  // [d_out], non-increasing
    std::size_t c_in = 0;
    std::size_t d_out = 0;

    bool operator==(const PcaModel& o) const {
        return c_in == o.c_in && d_out == o.d_out && mean == o.mean && components == o.components &&
               explained_variance == o.explained_variance;
    }
};

/// Fits PCA to a [M, C_in] token matrix via the eigendecomposition of the
/// population covariance. Components are sign-normalized so that each row's
/// largest-magnitude entry is positive.
[[nodiscard]] PcaModel fit_pca(const Eigen::MatrixXd& tokens, std::size_t d_out);

/// Gathers up to `max_tokens` tokens from the sequences, uniformly without
/// replacement when the pool is larger (seeded); all tokens otherwise, in order.
[[nodiscard]] Eigen::MatrixXd sample_tokens(std::span<const FeatureSequence> sequences, std::size_t max_tokens,
                                            std::uint64_t seed);

[[nodiscard]] FeatureSequence pca_encode(const PcaModel& model, const FeatureSequence& f);
[[nodiscard]] FeatureSequence pca_decode(const PcaModel& model, const FeatureSequence& f);

/// Mean squared reconstruction error per token, i.e. mean over rows of
/// ||x - decode(encode(x))||^2.
[[nodiscard]] double reconstruction_mse(const PcaModel& model, const Eigen::MatrixXd& tokens);

}  // namespace foresight
