#include <gtest/gtest.h>

#include <fstream>

#include "foresight/errors.hpp"
#include "foresight/io.hpp"
#include "test_util.hpp"

using namespace foresight;
namespace fs = std::filesystem;

namespace {

void truncate_file(const fs::path& p, std::uintmax_t drop) { fs::resize_file(p, fs::file_size(p) - drop); }

void poke_u32(const fs::path& p, std::streamoff offset, std::uint32_t value) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(offset);
    f.write(reinterpret_cast<const char*>(&value), sizeof value);
}

}  // namespace

TEST(FeatureFile, RoundTripIsBitIdentical) {
    testutil::TempDir dir;
    auto f = testutil::random_sequence<float>(2, 3, 4, 5, 1);
    f.frame_ids = {3, 9};
    f.meta = {{"encoder", "dinov2"}, {"layers", {2, 5, 8, 11}}};
    save_features(dir / "a.feat", f);
    const auto g = load_features(dir / "a.feat");
    EXPECT_EQ(g, f);
    EXPECT_EQ(g.meta, f.meta);
    EXPECT_EQ(std::memcmp(g.data.data(), f.data.data(), f.data.size() * 4), 0);
}

TEST(FeatureFile, HeaderInspection) {
    testutil::TempDir dir;
    auto f = testutil::random_sequence<float>(2, 3, 4, 5, 2);
    f.meta = {{"k", 1}};
    save_features(dir / "a.feat", f);
    const auto h = read_feature_header(dir / "a.feat");
    EXPECT_EQ(h.frames, 2u);
    EXPECT_EQ(h.height, 3u);
    EXPECT_EQ(h.width, 4u);
    EXPECT_EQ(h.channels, 5u);
    EXPECT_EQ(h.meta, f.meta);
    EXPECT_EQ(h.payload_offset + 2 * 3 * 4 * 5 * 4, fs::file_size(dir / "a.feat"));
}

TEST(FeatureFile, TruncatedPayloadReportsOffset) {
    testutil::TempDir dir;
    save_features(dir / "a.feat", testutil::random_sequence<float>(2, 3, 4, 5, 3));
    const auto size = fs::file_size(dir / "a.feat");
    truncate_file(dir / "a.feat", 7);
    try {
        (void)load_features(dir / "a.feat");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), size - 7);
        EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
    }
}

TEST(FeatureFile, TruncatedHeaderReportsOffset) {
    testutil::TempDir dir;
    save_features(dir / "a.feat", testutil::random_sequence<float>(1, 1, 1, 1, 3));
    fs::resize_file(dir / "a.feat", 20);
    try {
        (void)load_features(dir / "a.feat");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 16u);  // inside the dims block
    }
}

TEST(FeatureFile, BadMagicVersionAndDtype) {
    testutil::TempDir dir;
    const auto f = testutil::random_sequence<float>(1, 2, 2, 2, 4);
    save_features(dir / "a.feat", f);
    poke_u32(dir / "a.feat", 8, 2);
    try {
        (void)load_features(dir / "a.feat");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 8u);
    }
    save_features(dir / "a.feat", f);
    poke_u32(dir / "a.feat", 12, 1);
    try {
        (void)load_features(dir / "a.feat");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 12u);
    }
    save_features(dir / "a.feat", f);
    poke_u32(dir / "a.feat", 0, 0x4b4b4b4b);
    EXPECT_THROW((void)load_features(dir / "a.feat"), FormatError);
}

TEST(FeatureFile, TrailingBytesRejected) {
    testutil::TempDir dir;
    save_features(dir / "a.feat", testutil::random_sequence<float>(1, 2, 2, 2, 5));
    std::ofstream(dir / "a.feat", std::ios::app | std::ios::binary) << "xx";
    EXPECT_THROW((void)load_features(dir / "a.feat"), FormatError);
}

TEST(Targets, RoundTrip) {
    testutil::TempDir dir;
    SceneSpec spec;
    spec.sequences = 1;
    spec.train_sequences = 1;
    const auto corpus = generate_synthetic_corpus(spec, 3);
    const DenseTargets& t = corpus.sequences[0].targets;
    save_targets(dir / "t.feat", t);
    const DenseTargets back = load_targets(dir / "t.feat");
    EXPECT_EQ(back.labels, t.labels);
    EXPECT_EQ(back.movable, t.movable);
    EXPECT_EQ(back.class_count, t.class_count);
    for (std::size_t i = 0; i < t.depth.size(); ++i) EXPECT_EQ(back.depth[i], static_cast<float>(t.depth[i]));
    EXPECT_THROW((void)targets_from_features(corpus.sequences[0].features), FormatError);
}

TEST(Pca, FileRoundTrip) {
    testutil::TempDir dir;
    std::vector<FeatureSequence> seqs{testutil::random_sequence<float>(2, 4, 4, 6, 1)};
    const PcaModel m = fit_pca(sample_tokens(seqs, 1000, 0), 4);
    save_pca(dir / "p.pca", m);
    EXPECT_EQ(load_pca(dir / "p.pca"), m);
    truncate_file(dir / "p.pca", 3);
    EXPECT_THROW((void)load_pca(dir / "p.pca"), FormatError);
}

TEST(Heads, FileRoundTrip) {
    testutil::TempDir dir;
    ReadoutHead h;
    h.task = HeadTask::normals;
    h.weight = Eigen::MatrixXd::Random(3, 4);
    h.bias = Eigen::VectorXd::Random(3);
    h.class_count = 0;
    save_head(dir / "n.json", h);
    const ReadoutHead g = load_head(dir / "n.json");
    EXPECT_EQ(g.task, h.task);
    EXPECT_EQ(g.weight, h.weight);
    EXPECT_EQ(g.bias, h.bias);
    EXPECT_EQ(load_heads(dir.path()).size(), 1u);
}

TEST(Checkpoint, RoundTripGivesIdenticalForward) {
    testutil::TempDir dir;
    const ForecasterConfig c = testutil::tiny_config();
    Checkpoint ckpt;
    ckpt.weights = testutil::random_weights<float>(c, 3);
    ckpt.train = TrainConfig{};
    ckpt.train->phase2 = Phase2Config{4, 4, 10};
    ckpt.optimizer = OptimizerState<float>::zeros(c);
    ckpt.optimizer->first_moment = testutil::random_weights<float>(c, 4);
    ckpt.optimizer->step = 17;
    ckpt.step = 17;
    std::vector<FeatureSequence> seqs{testutil::random_sequence<float>(2, 4, 4, 6, 1)};
    ckpt.pca = fit_pca(sample_tokens(seqs, 1000, 0), 4);
    save_checkpoint(dir / "m.ckpt", ckpt);

    const Checkpoint back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.weights.config, c);
    EXPECT_EQ(back.step, 17);
    EXPECT_EQ(back.optimizer->step, 17);
    EXPECT_EQ(back.optimizer->first_moment.pos_spatial, ckpt.optimizer->first_moment.pos_spatial);
    EXPECT_EQ(back.train->phase2, ckpt.train->phase2);
    EXPECT_EQ(*back.pca, *ckpt.pca);

    const auto f = testutil::random_sequence<float>(c.seq_frames, c.grid_h, c.grid_w, c.d_in, 5);
    const MaskPlan plan = MaskPlan::full(c.grid(), c.context_frames);
    EXPECT_EQ(forward(f, plan, back.weights).pred, forward(f, plan, ckpt.weights).pred);
}

TEST(Checkpoint, VersionMismatchIsRefused) {
    testutil::TempDir dir;
    Checkpoint ckpt;
    ckpt.weights = testutil::random_weights<float>(testutil::tiny_config(), 3);
    save_checkpoint(dir / "m.ckpt", ckpt);
    poke_u32(dir / "m.ckpt", 8, 99);
    try {
        (void)load_checkpoint(dir / "m.ckpt");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
    }
}

TEST(Checkpoint, TruncationDetected) {
    testutil::TempDir dir;
    Checkpoint ckpt;
    ckpt.weights = testutil::random_weights<float>(testutil::tiny_config(), 3);
    save_checkpoint(dir / "m.ckpt", ckpt);
    truncate_file(dir / "m.ckpt", 10);
    EXPECT_THROW((void)load_checkpoint(dir / "m.ckpt"), FormatError);
}

TEST(Checkpoint, GridMismatchHintsAtInterpolation) {
    const auto w = testutil::random_weights<float>(testutil::tiny_config(), 1);
    EXPECT_NO_THROW(require_grid(w, 2, 2));
    try {
        require_grid(w, 4, 8);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("interpolate_positions"), std::string::npos);
    }
}

TEST(RunConfig, JsonRoundTripAndValidation) {
    RunConfig c;
    c.model = testutil::tiny_config();
    c.train.loss.variant = LossVariant::smooth_l1_plus_cos;
    c.train.mask_strategy = MaskStrategy::random;
    c.train.random_ratio = 0.75;
    c.train.clip_norm = 1.0;
    c.train.phase2 = Phase2Config{4, 8, 5};
    c.data.corpus = "/data/c";
    c.data.pca = "/data/p.pca";
    c.loss_csv = "/tmp/loss.csv";
    const RunConfig back = run_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.model, c.model);

    nlohmann::json bad = to_json(c);
    bad["model"]["n_heads"] = 3;
    EXPECT_THROW((void)run_config_from_json(bad), ParameterError);
    bad = to_json(c);
    bad["train"]["loss"] = "huber";
    EXPECT_THROW((void)run_config_from_json(bad), ParameterError);
}

TEST(RunConfig, RelativePathsResolveAgainstConfigDirectory) {
    testutil::TempDir dir;
    std::ofstream(dir / "run.json") << R"({"model": {"d_in": 4}, "data": {"corpus": "corpus", "pca": "p.pca"}})";
    const RunConfig c = load_run_config(dir / "run.json");
    EXPECT_EQ(fs::path(c.data.corpus), (dir / "corpus").lexically_normal());
    EXPECT_EQ(c.model.d_in, 4u);
}

TEST(Corpus, FixedSeedIsBitIdentical) {
    SceneSpec spec;
    spec.sequences = 4;
    spec.train_sequences = 3;
    const auto a = generate_synthetic_corpus(spec, 9);
    const auto b = generate_synthetic_corpus(spec, 9);
    const auto c = generate_synthetic_corpus(spec, 10);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.sequences[i].features, b.sequences[i].features);
        EXPECT_EQ(a.sequences[i].targets.labels, b.sequences[i].targets.labels);
    }
    EXPECT_NE(a.sequences[0].features, c.sequences[0].features);

    testutil::TempDir d1, d2;
    write_corpus(d1.path(), a);
    write_corpus(d2.path(), b);
    for (const auto& e : load_manifest(d1.path()).sequences) {
        std::ifstream x(d1 / e.features, std::ios::binary), y(d2 / e.features, std::ios::binary);
        EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(x), {}, std::istreambuf_iterator<char>(y)));
    }
}

TEST(Corpus, ZeroVelocityMakesCopyLastExact) {
    SceneSpec spec;
    spec.sequences = 2;
    spec.velocities = {{0.0, 0.0}};
    for (const auto& s : generate_synthetic_corpus(spec, 4).sequences) {
        const auto last = s.features.slice_frames(17, 1);
        const auto future = s.features.slice_frames(20, 1);
        EXPECT_EQ(last.data, future.data);
    }
}

TEST(Corpus, BlobDisplacementFollowsVelocity) {
    // Single 2x2 blob moving one column per frame on an 8x8 grid.
    SceneSpec spec;
    spec.sequences = 1;
    spec.min_blobs = spec.max_blobs = 1;
    spec.min_blob_size = spec.max_blob_size = 2;
    spec.velocities = {{0.0, 1.0}};
    spec.classes = 2;
    const auto s = generate_synthetic_corpus(spec, 5).sequences[0];
    const DenseTargets& t = s.targets;
    auto first_blob_col = [&](std::size_t frame) {
        const auto lm = t.label_map(frame);
        for (std::size_t c = 0; c < lm.width; ++c) {
            bool any = false, all_prev_bg = true;
            for (std::size_t r = 0; r < lm.height; ++r) {
                any |= lm.labels[r * lm.width + c] == 1;
                all_prev_bg &= lm.labels[r * lm.width + (c + lm.width - 1) % lm.width] == 0;
            }
            if (any && all_prev_bg) return c;
        }
        return std::size_t{99};
    };
    const std::size_t c0 = first_blob_col(0);
    for (std::size_t steps : {1u, 3u, 5u}) EXPECT_EQ(first_blob_col(steps), (c0 + steps) % 8);

    const auto& b = s.blobs[0];
    const auto origin = blob_origin(b["origin"][0], b["origin"][1], 0.0, 1.0, 3, 8, 8);
    EXPECT_EQ(static_cast<std::size_t>(origin.second), (b["origin"][1].get<std::size_t>() + 3) % 8);
}

TEST(Corpus, BlobOriginRoundsAndWraps) {
    EXPECT_EQ(blob_origin(0, 7, 0.0, 1.0 / 3.0, 3, 8, 8), (std::pair<std::int64_t, std::int64_t>{0, 0}));
    EXPECT_EQ(blob_origin(0, 0, 0.0, 1.0 / 3.0, 8, 8, 8), (std::pair<std::int64_t, std::int64_t>{0, 3}));
    EXPECT_EQ(blob_origin(1, 0, -1.0, 0.0, 2, 8, 8), (std::pair<std::int64_t, std::int64_t>{7, 0}));
}

TEST(Corpus, ManifestSplitsAndWindows) {
    testutil::TempDir dir;
    SceneSpec spec;
    spec.sequences = 3;
    spec.train_sequences = 2;
    write_corpus(dir.path(), generate_synthetic_corpus(spec, 1));
    EXPECT_EQ(load_split_features(dir.path(), "train").size(), 2u);
    EXPECT_EQ(load_eval_sequences(dir.path(), "eval").size(), 1u);
    const auto seq = load_split_features(dir.path(), "eval")[0];
    const auto windows = extract_windows(seq, 5, 3);
    ASSERT_EQ(windows.size(), 21u - 12u);
    EXPECT_EQ(windows[0].frame_ids, (std::vector<std::int64_t>{0, 3, 6, 9, 12}));
    EXPECT_EQ(windows.back().frame_ids, (std::vector<std::int64_t>{8, 11, 14, 17, 20}));
}

TEST(Corpus, ManifestlessDirectoryListsFeatureFiles) {
    testutil::TempDir dir;
    save_features(dir / "b.feat", testutil::random_sequence<float>(1, 1, 1, 1, 1));
    save_features(dir / "a.feat", testutil::random_sequence<float>(1, 1, 1, 1, 2));
    const auto m = load_manifest(dir.path());
    ASSERT_EQ(m.sequences.size(), 2u);
    EXPECT_EQ(m.sequences[0].name, "a");
}

TEST(SceneSpec, JsonRoundTripAndValidation) {
    SceneSpec s;
    s.velocities = {{0.5, -0.25}, {0.0, 1.0}};
    s.temporal_noise = 0.01;
    EXPECT_EQ(to_json(scene_spec_from_json(to_json(s))), to_json(s));
    EXPECT_THROW((void)scene_spec_from_json({{"train_sequences", 100}}), ParameterError);
    EXPECT_THROW((void)scene_spec_from_json({{"velocities", nlohmann::json::array()}}), ParameterError);
}
