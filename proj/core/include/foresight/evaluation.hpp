#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "foresight/feature_sequence.hpp"
#include "foresight/feature_space.hpp"
#include "foresight/forecaster.hpp"
#include "foresight/inference.hpp"

namespace foresight {

struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> labels;
    std::int32_t ignore_value = 255;
    std::int32_t class_count = 0;
    std::set<std::int32_t> movable;

    /// Throws DataError when a label is outside [0, class_count) and not ignore_value.
    void validate() const;
};

struct IouResult {
    double mean = 0.0;
    /// NaN for classes absent from both maps.
    std::vector<double> per_class;
};

/// Per-class intersection / union pixel counts, summable across images.
struct ConfusionCounts {
    std::vector<std::uint64_t> intersection;
    std::vector<std::uint64_t> union_;

    explicit ConfusionCounts(std::size_t classes = 0) : intersection(classes, 0), union_(classes, 0) {}
    void add(const LabelMap& pred, const LabelMap& gt);
    /// Classes with an empty union are excluded from the mean.
    [[nodiscard]] IouResult iou(const std::optional<std::set<std::int32_t>>& subset = std::nullopt) const;
};

[[nodiscard]] IouResult miou(const LabelMap& pred, const LabelMap& gt,
                             const std::optional<std::set<std::int32_t>>& subset = std::nullopt);

struct DepthScores {
    double abs_rel = 0.0;
    double delta1 = 0.0;
};

/// AbsRel and delta1 over pixels where valid[i] != 0. Empty valid mask means all.
[[nodiscard]] DepthScores depth_metrics(std::span<const double> pred, std::span<const double> gt,
                                        std::span<const std::uint8_t> valid = {});

struct NormalScores {
    double mean_deg = 0.0;
    double pct_below_11_25 = 0.0;
};

/// Angular error between 3-vectors stored as consecutive xyz triples.
[[nodiscard]] NormalScores normal_metrics(std::span<const double> pred, std::span<const double> gt,
                                          std::span<const std::uint8_t> valid = {});

/// Angle in degrees between two vectors, with the cosine clamped to [-1, 1].
[[nodiscard]] double angular_error_deg(const double* a, const double* b);

enum class HeadTask { segmentation, depth, normals };

[[nodiscard]] std::string to_string(HeadTask t);
[[nodiscard]] HeadTask parse_head_task(const std::string& s);

/// Dense per-token targets aligned with a feature grid.
struct DenseTargets {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int64_t> frame_ids;
    std::vector<std::int32_t> labels;  // [frames * cells]
    std::vector<double> depth;         // [frames * cells]
    std::vector<double> normals;       // [frames * cells * 3]
    std::int32_t ignore_value = 255;
    std::int32_t class_count = 0;
    std::set<std::int32_t> movable;

    [[nodiscard]] std::size_t cells() const noexcept { return height * width; }
    [[nodiscard]] DenseTargets frame(std::size_t n) const;
    [[nodiscard]] LabelMap label_map(std::size_t n) const;
    [[nodiscard]] std::ptrdiff_t find_frame(std::int64_t id) const noexcept;
};

/// Linear readout standing in for a dense prediction head.
struct ReadoutHead {
    HeadTask task = HeadTask::segmentation;
    Eigen::MatrixXd weight;  // [out_dim, D]
    Eigen::VectorXd bias;    // [out_dim]
    std::int32_t class_count = 0;
    std::set<std::int32_t> movable;

    /// Raw outputs [tokens, out_dim]; normals are unit-normalized.
    [[nodiscard]] Eigen::MatrixXd apply(const FeatureSequence& features) const;
    [[nodiscard]] std::vector<std::int32_t> predict_labels(const FeatureSequence& features) const;
};

/// Closed-form ridge regression (bias unregularized) from features to targets:
/// scalar depth, xyz normals, or one-hot class indicators (argmax at apply time).
/// Tokens labelled ignore_value are skipped for segmentation.
[[nodiscard]] ReadoutHead fit_readout(std::span<const FeatureSequence> features, std::span<const DenseTargets> targets,
                                      HeadTask task, double l2_reg);

struct MetricReport {
    std::optional<double> miou_all;
    std::optional<double> miou_mo;
    std::vector<double> per_class_iou;
    std::optional<double> abs_rel;
    std::optional<double> delta1;
    std::optional<double> mean_angular_deg;
    std::optional<double> pct_below_11_25;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct EvalSequence {
    std::string name;
    FeatureSequence features;  // encoder space (C_in channels)
    DenseTargets targets;
};

struct PipelineReport {
    std::string schedule;
    std::size_t sequences = 0;
    std::map<std::string, MetricReport> methods;  // oracle, copy_last, prediction

    [[nodiscard]] nlohmann::json to_json() const;
    /// Table with one row per method: method,miou_all,miou_mo,delta1,abs_rel,mean_deg,pct_11_25.
    [[nodiscard]] std::string to_csv() const;
};

struct PipelineOptions {
    /// Used when the corpus grid is larger than the weights' grid.
    std::optional<SlidingWindow> sliding;
};

/// Runs oracle, copy-last and model forecasts at the schedule's target frame,
/// maps them back through the PCA (when given) and scores every head.
[[nodiscard]] PipelineReport evaluate_pipeline(const ForecasterWeights<float>& weights,
                                               std::span<const EvalSequence> corpus, const RolloutSchedule& schedule,
                                               std::span<const ReadoutHead> heads, const PcaModel* pca,
                                               const PipelineOptions& options = {});

}  // namespace foresight
