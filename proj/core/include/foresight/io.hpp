#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "foresight/evaluation.hpp"
#include "foresight/feature_sequence.hpp"
#include "foresight/feature_space.hpp"
#include "foresight/forecaster.hpp"
#include "foresight/training.hpp"

namespace foresight {

// --- feature files -----------------------------------------------------------
//
// Layout (all integers little-endian):
//   magic "FFORESGT" | u32 version | u32 dtype (0 = f32) | u64 N,H,W,C |
//   i64 frame_ids[N] | u64 meta_len | meta (UTF-8 JSON) | f32 payload[N*H*W*C]

inline constexpr char kFeatureMagic[8] = {'F', 'F', 'O', 'R', 'E', 'S', 'G', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

struct FeatureFileHeader {
    std::uint32_t version = kFeatureVersion;
    std::uint32_t dtype = kDtypeF32;
    std::uint64_t frames = 0, height = 0, width = 0, channels = 0;
    std::vector<std::int64_t> frame_ids;
    nlohmann::json meta;
    std::uint64_t payload_offset = 0;
};

void save_features(const std::filesystem::path& path, const FeatureSequence& f);
[[nodiscard]] FeatureSequence load_features(const std::filesystem::path& path);
/// Reads and validates the header only; the payload is not touched.
[[nodiscard]] FeatureFileHeader read_feature_header(const std::filesystem::path& path);

// --- targets (stored as feature files with channels label, depth, nx, ny, nz) ---

[[nodiscard]] FeatureSequence targets_to_features(const DenseTargets& t);
[[nodiscard]] DenseTargets targets_from_features(const FeatureSequence& f);
void save_targets(const std::filesystem::path& path, const DenseTargets& t);
[[nodiscard]] DenseTargets load_targets(const std::filesystem::path& path);

// --- PCA and readout heads -----------------------------------------------------

void save_pca(const std::filesystem::path& path, const PcaModel& model);
[[nodiscard]] PcaModel load_pca(const std::filesystem::path& path);

[[nodiscard]] nlohmann::json head_to_json(const ReadoutHead& head);
[[nodiscard]] ReadoutHead head_from_json(const nlohmann::json& j);
void save_head(const std::filesystem::path& path, const ReadoutHead& head);
[[nodiscard]] ReadoutHead load_head(const std::filesystem::path& path);
/// Every *.json file in `dir` that parses as a head, sorted by file name.
[[nodiscard]] std::vector<ReadoutHead> load_heads(const std::filesystem::path& dir);

// --- configuration -----------------------------------------------------------

struct DataConfig {
    std::string corpus;                 // phase-1 corpus directory (manifest.json)
    std::optional<std::string> pca;     // PCA file; features are encoded before training
    std::int64_t frame_stride = 3;      // source-frame spacing inside a training window
    std::optional<std::string> phase2_corpus;
};

struct RunConfig {
    ForecasterConfig model;
    TrainConfig train;
    DataConfig data;
    double init_std = 0.02;
    std::optional<std::string> loss_csv;

    /// Validates every section; throws ParameterError.
    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const ForecasterConfig& c);
[[nodiscard]] ForecasterConfig forecaster_config_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const TrainConfig& c);
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const RunConfig& c);
[[nodiscard]] RunConfig run_config_from_json(const nlohmann::json& j);
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);

// --- checkpoints ---------------------------------------------------------------
//
//   magic "FFORCKPT" | u32 version | u64 json_len | json header |
//   u64 tensor_count | per tensor: u32 name_len, name, u32 dtype, u32 ndim, u64 dims[ndim], payload

inline constexpr char kCheckpointMagic[8] = {'F', 'F', 'O', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ForecasterWeights<float> weights;
    std::optional<TrainConfig> train;
    std::optional<OptimizerState<float>> optimizer;
    std::int64_t step = 0;
    std::optional<PcaModel> pca;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws DimensionError with an interpolation hint when the weights' grid differs.
void require_grid(const ForecasterWeights<float>& w, std::size_t grid_h, std::size_t grid_w);

// --- corpora -----------------------------------------------------------------

struct CorpusEntry {
    std::string name;
    std::string features;  // file name relative to the corpus directory
    std::string targets;   // may be empty
    std::string split;     // "train" or "eval"
};

struct CorpusManifest {
    std::vector<CorpusEntry> sequences;
    nlohmann::json info = nlohmann::json::object();
};

void save_manifest(const std::filesystem::path& dir, const CorpusManifest& manifest);
/// Reads manifest.json; without one, lists *.feat files (sorted) as the train split.
[[nodiscard]] CorpusManifest load_manifest(const std::filesystem::path& dir);

/// Sequences of a split ("" = all), in manifest order.
[[nodiscard]] std::vector<FeatureSequence> load_split_features(const std::filesystem::path& dir,
                                                               const std::string& split);
[[nodiscard]] std::vector<EvalSequence> load_eval_sequences(const std::filesystem::path& dir, const std::string& split);

/// Every run of `frames` frames spaced `stride` source frames apart.
[[nodiscard]] std::vector<FeatureSequence> extract_windows(const FeatureSequence& seq, std::size_t frames,
                                                           std::int64_t stride);

// --- synthetic moving-blob scenes ------------------------------------------------

struct SceneSpec {
    std::size_t sequences = 80;
    std::size_t train_sequences = 64;
    std::size_t frames = 21;  // source frame ids 0..frames-1
    std::size_t grid_h = 8;
    std::size_t grid_w = 8;
    std::size_t channels = 16;
    std::int32_t classes = 3;  // class 0 is static background; others are movable blobs
    std::size_t min_blobs = 1;
    std::size_t max_blobs = 2;
    std::size_t min_blob_size = 2;
    std::size_t max_blob_size = 3;
    /// Candidate (row, col) velocities in cells per source frame.
    std::vector<std::pair<double, double>> velocities = {{0.0, 1.0 / 3.0}};
    double texture_noise = 0.05;   // static texture carried by each surface
    double temporal_noise = 0.0;   // fresh noise per frame
};

[[nodiscard]] nlohmann::json to_json(const SceneSpec& s);
[[nodiscard]] SceneSpec scene_spec_from_json(const nlohmann::json& j);

struct SyntheticSequence {
    std::string name;
    FeatureSequence features;
    DenseTargets targets;
    /// Per blob: class, size, initial position, velocity.
    nlohmann::json blobs;
};

struct SyntheticCorpus {
    SceneSpec spec;
    std::vector<SyntheticSequence> sequences;
};

/// Rendered directly in feature space: per-class channel signatures plus a
/// row ramp on the background, surface textures, and constant-velocity blob
/// motion with wraparound. Depth and normals are linear in the features.
[[nodiscard]] SyntheticCorpus generate_synthetic_corpus(const SceneSpec& spec, std::uint64_t seed);

/// Blob top-left cell at a frame: round(p0 + v * frame) modulo the grid.
[[nodiscard]] std::pair<std::int64_t, std::int64_t> blob_origin(std::int64_t row0, std::int64_t col0, double v_row,
                                                                double v_col, std::int64_t frame, std::size_t grid_h,
                                                                std::size_t grid_w);

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace foresight
