#include "foresight/feature_sequence.hpp"

#include <algorithm>
#include <cmath>

#include "foresight/errors.hpp"

namespace foresight {

template <typename T>
BasicFeatureSequence<T> BasicFeatureSequence<T>::slice_frames(std::size_t first, std::size_t count) const {
    if (first + count > frames) {
        throw DimensionError("frame slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                             ") exceeds " + std::to_string(frames) + " frames");
    }
    std::vector<std::size_t> positions(count);
    for (std::size_t i = 0; i < count; ++i) positions[i] = first + i;
    return select_frames(positions);
}

template <typename T>
BasicFeatureSequence<T> BasicFeatureSequence<T>::select_frames(const std::vector<std::size_t>& positions) const {
    BasicFeatureSequence out;
    out.frames = positions.size();
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.meta = meta;
    const std::size_t frame_size = cells() * channels;
    out.data.resize(out.frames * frame_size);
    out.frame_ids.resize(out.frames);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const std::size_t p = positions[i];
        if (p >= frames) throw DimensionError("frame position " + std::to_string(p) + " out of range");
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(p * frame_size), frame_size,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * frame_size));
        out.frame_ids[i] = frame_ids[p];
    }
    return out;
}

template <typename T>
BasicFeatureSequence<T> BasicFeatureSequence<T>::crop(std::size_t top, std::size_t left, std::size_t h,
                                                      std::size_t w) const {
    if (top + h > height || left + w > width) {
        throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(top) +
                             "," + std::to_string(left) + ") exceeds grid " + std::to_string(height) + "x" +
                             std::to_string(width));
    }
    BasicFeatureSequence out(frames, h, w, channels);
    out.frame_ids = frame_ids;
    out.meta = meta;
    for (std::size_t n = 0; n < frames; ++n)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                std::copy_n(token(token_index(n, top + r, left + c)), channels, out.token(out.token_index(n, r, c)));
    return out;
}

template <typename T>
std::ptrdiff_t BasicFeatureSequence<T>::find_frame(std::int64_t id) const noexcept {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), id);
    return it == frame_ids.end() ? -1 : std::distance(frame_ids.begin(), it);
}

template <typename T>
void BasicFeatureSequence<T>::validate() const {
    if (frames < 1 || height < 1 || width < 1 || channels < 1) {
        throw DimensionError("feature sequence dims must be >= 1, got [" + std::to_string(frames) + "," +
                             std::to_string(height) + "," + std::to_string(width) + "," + std::to_string(channels) +
                             "]");
    }
    if (data.size() != frames * height * width * channels) {
        throw DimensionError("payload holds " + std::to_string(data.size()) + " values, dims imply " +
                             std::to_string(frames * height * width * channels));
    }
    if (frame_ids.size() != frames) throw DimensionError("frame_ids length differs from frame count");
    for (std::size_t i = 1; i < frame_ids.size(); ++i) {
        if (frame_ids[i] <= frame_ids[i - 1]) throw DataError("frame_ids must be strictly increasing");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) throw DataError("non-finite feature value at flat index " + std::to_string(i));
    }
}

template struct BasicFeatureSequence<float>;
template struct BasicFeatureSequence<double>;

}  // namespace foresight
