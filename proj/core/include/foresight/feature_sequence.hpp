#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace foresight {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Spatio-temporal token grid extent (frames x rows x cols).
struct GridShape {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    [[nodiscard]] std::size_t cells() const noexcept { return height * width; }
    [[nodiscard]] std::size_t tokens() const noexcept { return frames * height * width; }
    bool operator==(const GridShape&) const = default;
};

/// Dense per-frame token features, row-major [frames, height, width, channels].
///
/// Token t = (n * height + h) * width + w occupies data[t * channels, (t + 1) * channels).
template <typename T>
struct BasicFeatureSequence {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<T> data;
    std::vector<std::int64_t> frame_ids;
    nlohmann::json meta = nlohmann::json::object();

    BasicFeatureSequence() = default;

    /// Zero-filled sequence with frame ids 0..frames-1.
    BasicFeatureSequence(std::size_t n, std::size_t h, std::size_t w, std::size_t c)
        : frames(n), height(h), width(w), channels(c), data(n * h * w * c, T(0)), frame_ids(n) {
        for (std::size_t i = 0; i < n; ++i) frame_ids[i] = static_cast<std::int64_t>(i);
    }

    [[nodiscard]] GridShape grid() const noexcept { return {frames, height, width}; }
    [[nodiscard]] std::size_t cells() const noexcept { return height * width; }
    [[nodiscard]] std::size_t tokens() const noexcept { return frames * height * width; }

    [[nodiscard]] std::size_t token_index(std::size_t n, std::size_t h, std::size_t w) const noexcept {
        return (n * height + h) * width + w;
    }
    [[nodiscard]] T* token(std::size_t t) noexcept { return data.data() + t * channels; }
    [[nodiscard]] const T* token(std::size_t t) const noexcept { return data.data() + t * channels; }
    [[nodiscard]] T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
        return data[token_index(n, h, w) * channels + c];
    }
    [[nodiscard]] const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return data[token_index(n, h, w) * channels + c];
    }

    /// [tokens, channels] view of the payload.
    [[nodiscard]] Eigen::Map<Mat<T>> matrix() {
        return {data.data(), static_cast<Eigen::Index>(tokens()), static_cast<Eigen::Index>(channels)};
    }
    [[nodiscard]] Eigen::Map<const Mat<T>> matrix() const {
        return {data.data(), static_cast<Eigen::Index>(tokens()), static_cast<Eigen::Index>(channels)};
    }

    /// Frames [first, first + count) as an independent sequence.
    [[nodiscard]] BasicFeatureSequence slice_frames(std::size_t first, std::size_t count) const;
    /// Frames picked by position, in the given order.
    [[nodiscard]] BasicFeatureSequence select_frames(const std::vector<std::size_t>& positions) const;
    /// Spatial crop [top, top + h) x [left, left + w) across every frame.
    [[nodiscard]] BasicFeatureSequence crop(std::size_t top, std::size_t left, std::size_t h,
                                            std::size_t w) const;
    /// Position of a frame id, or -1.
    [[nodiscard]] std::ptrdiff_t find_frame(std::int64_t id) const noexcept;

    template <typename U>
    [[nodiscard]] BasicFeatureSequence<U> cast() const {
        BasicFeatureSequence<U> out;
        out.frames = frames;
        out.height = height;
        out.width = width;
        out.channels = channels;
        out.frame_ids = frame_ids;
        out.meta = meta;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    /// Throws DimensionError / DataError when an invariant is violated.
    void validate() const;

    bool operator==(const BasicFeatureSequence& o) const {
        return frames == o.frames && height == o.height && width == o.width && channels == o.channels &&
               frame_ids == o.frame_ids && data == o.data;
    }
};

using FeatureSequence = BasicFeatureSequence<float>;

extern template struct BasicFeatureSequence<float>;
extern template struct BasicFeatureSequence<double>;

}  // namespace foresight
