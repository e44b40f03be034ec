#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "foresight/errors.hpp"
#include "foresight/feature_space.hpp"
#include "foresight/gradcheck.hpp"
#include "foresight/inference.hpp"
#include "foresight/io.hpp"
#include "foresight/training.hpp"

namespace fs = std::filesystem;
using namespace foresight;

namespace {

std::vector<std::size_t> parse_sizes(const std::string& text, std::size_t expected, const std::string& flag) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(item, &pos);
            if (pos != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ParameterError(flag + ": '" + item + "' is not a positive integer");
        }
    }
    if (out.size() != expected) {
        throw ParameterError(flag + " expects " + std::to_string(expected) + " comma-separated values");
    }
    return out;
}

std::optional<SlidingWindow> parse_sliding(const std::string& text) {
    if (text.empty()) return std::nullopt;
    const auto v = parse_sizes(text, 4, "--sliding");
    return SlidingWindow{v[0], v[1], v[2], v[3]};
}

std::vector<FeatureSequence> training_windows(const std::string& corpus, const std::optional<PcaModel>& pca,
                                              const ForecasterConfig& model, std::int64_t stride) {
    std::vector<FeatureSequence> sequences = load_split_features(corpus, "train");
    if (sequences.empty()) throw DataError("corpus " + corpus + " has no train sequences");
    std::vector<FeatureSequence> windows;
    for (auto& seq : sequences) {
        if (pca) seq = pca_encode(*pca, seq);
        for (auto& w : extract_windows(seq, model.seq_frames, stride)) windows.push_back(std::move(w));
    }
    if (windows.empty()) throw DataError("corpus " + corpus + " yields no training windows");
    return windows;
}

int cmd_pca_fit(const std::string& features, std::size_t dim, std::size_t samples, std::uint64_t seed,
                const std::string& split, const std::string& out) {
    std::vector<FeatureSequence> seqs = load_split_features(features, split);
    if (seqs.empty()) seqs = load_split_features(features, "");
    const Eigen::MatrixXd tokens = sample_tokens(seqs, samples, seed);
    const PcaModel model = fit_pca(tokens, dim);
    save_pca(out, model);
    const double total = (tokens.rowwise() - tokens.colwise().mean()).squaredNorm() /
                         static_cast<double>(tokens.rows());
    nlohmann::json summary = {{"tokens", tokens.rows()},
                              {"c_in", model.c_in},
                              {"d_out", model.d_out},
                              {"retained_variance_fraction", total > 0 ? model.explained_variance.sum() / total : 1.0},
                              {"reconstruction_mse", reconstruction_mse(model, tokens)}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& resume,
              std::int64_t stop_at) {
    const RunConfig run = load_run_config(config_path);
    std::optional<PcaModel> pca;
    if (run.data.pca) pca = load_pca(*run.data.pca);
    if (pca && pca->d_out != run.model.d_in) {
        throw DimensionError("model.d_in = " + std::to_string(run.model.d_in) + " but the PCA keeps " +
                             std::to_string(pca->d_out) + " dimensions");
    }

    TrainingData data;
    data.phase1 = training_windows(run.data.corpus, pca, run.model, run.data.frame_stride);
    if (run.train.phase2) {
        data.phase2 = run.data.phase2_corpus
                          ? training_windows(*run.data.phase2_corpus, pca, run.model, run.data.frame_stride)
                          : data.phase1;
    }

    TrainingState state;
    if (!resume.empty()) {
        Checkpoint ckpt = load_checkpoint(resume);
        if (!ckpt.optimizer) throw ParameterError("checkpoint " + resume + " has no optimizer state to resume from");
        state.weights = std::move(ckpt.weights);
        state.optimizer = std::move(*ckpt.optimizer);
        state.step = ckpt.step;
    } else {
        state = initial_state(init_weights<float>(run.model, run.train.seed, run.init_std));
    }

    TrainOptions options;
    if (stop_at >= 0) options.stop_at = stop_at;
    options.on_step = [](const LossRecord& r) {
        if (r.step % 100 == 0) std::cerr << "step " << r.step << " phase " << r.phase << " loss " << r.loss << '\n';
    };
    TrainResult result = run_training(data, run.train, std::move(state), options);
    if (run.loss_csv) write_loss_csv(*run.loss_csv, result.curve);

    Checkpoint ckpt;
    ckpt.weights = std::move(result.state.weights);
    ckpt.train = run.train;
    ckpt.optimizer = std::move(result.state.optimizer);
    ckpt.step = result.state.step;
    ckpt.pca = pca;
    save_checkpoint(out, ckpt);
    nlohmann::json summary = {{"steps", ckpt.step},
                              {"final_loss", result.curve.empty() ? nlohmann::json(nullptr)
                                                                  : nlohmann::json(result.curve.back().loss)},
                              {"grid", {ckpt.weights.config.grid_h, ckpt.weights.config.grid_w}}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_forecast(const std::string& ckpt_path, const std::string& context_path, std::size_t steps,
                 const std::string& sliding, const std::string& interp, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    ForecasterWeights<float> weights = ckpt.weights;
    FeatureSequence context = load_features(context_path);
    const bool encode = ckpt.pca && context.channels == ckpt.pca->c_in && ckpt.pca->c_in != ckpt.pca->d_out;
    if (encode) context = pca_encode(*ckpt.pca, context);
    if (!interp.empty()) {
        const auto hw = parse_sizes(interp, 2, "--interp-pos");
        weights = interpolate_positions(weights, hw[0], hw[1]);
    }
    RolloutOptions options;
    options.sliding = parse_sliding(sliding);
    if (!options.sliding) require_grid(weights, context.height, context.width);
    FeatureSequence pred = rollout(weights, context, steps, options);
    if (encode) pred = pca_decode(*ckpt.pca, pred);
    save_features(out, pred);
    std::cout << nlohmann::json{{"frames", pred.frames}, {"frame_ids", pred.frame_ids}, {"channels", pred.channels}}.dump()
              << '\n';
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& corpus, const std::string& schedule_name,
                 const std::string& heads_dir, const std::string& report_path, const std::string& split,
                 const std::string& sliding) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const RolloutSchedule schedule = RolloutSchedule::named(schedule_name);
    std::vector<EvalSequence> sequences = load_eval_sequences(corpus, split);
    if (sequences.empty()) throw DataError("corpus " + corpus + " has no '" + split + "' sequences");
    const std::vector<ReadoutHead> heads = load_heads(heads_dir);
    PipelineOptions options;
    options.sliding = parse_sliding(sliding);
    const PipelineReport report = evaluate_pipeline(ckpt.weights, sequences, schedule, heads,
                                                    ckpt.pca ? &*ckpt.pca : nullptr, options);
    const std::string text = report.to_json().dump(2);
    std::ofstream(report_path) << text << '\n';
    std::cout << text << '\n';
    return 0;
}

int cmd_gradcheck(const std::string& config_path, double eps, double tol, std::uint64_t seed, double scale) {
    const RunConfig run = load_run_config(config_path);
    GradcheckOptions options;
    options.weight_scale = scale;
    options.eps = eps;
    options.tol = tol;
    options.seed = seed;
    const GradcheckReport report = gradient_check(run.model, run.train, options);
    std::cout << report.to_json().dump() << '\n';
    return report.pass ? 0 : 1;
}

int cmd_gen_corpus(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
    nlohmann::json j = nlohmann::json::object();
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw std::runtime_error("cannot open scene spec " + spec_path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParameterError("scene spec " + spec_path + ": " + e.what());
        }
    }
    const SceneSpec spec = scene_spec_from_json(j);
    write_corpus(out, generate_synthetic_corpus(spec, seed));
    std::cout << nlohmann::json{{"sequences", spec.sequences}, {"train", spec.train_sequences}, {"out", out}}.dump()
              << '\n';
    return 0;
}

int cmd_heads_fit(const std::string& features_dir, const std::string& targets_dir, const std::string& task_name,
                  double l2, const std::string& out, const std::string& split, const std::string& pca_path) {
    const HeadTask task = parse_head_task(task_name);
    std::optional<PcaModel> pca;
    if (!pca_path.empty()) pca = load_pca(pca_path);
    std::vector<FeatureSequence> features;
    std::vector<DenseTargets> targets;
    const CorpusManifest manifest = load_manifest(features_dir);
    const CorpusManifest target_manifest = fs::exists(fs::path(targets_dir) / "manifest.json")
                                               ? load_manifest(targets_dir)
                                               : manifest;
    for (const auto& entry : manifest.sequences) {
        if (!split.empty() && entry.split != split) continue;
        const auto match = std::find_if(target_manifest.sequences.begin(), target_manifest.sequences.end(),
                                        [&](const CorpusEntry& e) { return e.name == entry.name; });
        if (match == target_manifest.sequences.end() || match->targets.empty()) {
            throw DataError("no targets for sequence '" + entry.name + "' in " + targets_dir);
        }
        FeatureSequence f = load_features(fs::path(features_dir) / entry.features);
        if (pca) f = pca_decode(*pca, pca_encode(*pca, f));
        features.push_back(std::move(f));
        targets.push_back(load_targets(fs::path(targets_dir) / match->targets));
    }
    if (features.empty()) throw DataError("no sequences in split '" + split + "' of " + features_dir);
    const ReadoutHead head = fit_readout(features, targets, task, l2);
    save_head(out, head);
    std::cout << nlohmann::json{{"task", to_string(task)}, {"sequences", features.size()}, {"out", out}}.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked-transformer forecasting of dense foundation-model features"};
    app.require_subcommand(1);

    std::string features, out, split = "train", pca_path;
    std::size_t dim = 0, samples = 100000;
    std::uint64_t seed = 0;
    auto* pca_fit = app.add_subcommand("pca-fit", "Fit a PCA on sampled corpus tokens");
    pca_fit->add_option("--features", features, "Corpus directory")->required();
    pca_fit->add_option("--dim", dim, "Retained dimensions")->required();
    pca_fit->add_option("--samples", samples, "Maximum number of sampled tokens");
    pca_fit->add_option("--seed", seed, "Sampling seed");
    pca_fit->add_option("--split", split, "Corpus split to sample from (empty = all)");
    pca_fit->add_option("--out", out, "PCA file")->required();

    std::string config, resume;
    std::int64_t stop_at = -1;
    auto* train = app.add_subcommand("train", "Train a forecaster from a run config");
    train->add_option("--config", config, "Run config JSON")->required();
    train->add_option("--out", out, "Checkpoint file")->required();
    train->add_option("--resume", resume, "Continue from a checkpoint with optimizer state");
    train->add_option("--stop-at", stop_at, "Stop after this many global steps");

    std::string ckpt, context, sliding, interp;
    std::size_t steps = 1;
    auto* forecast = app.add_subcommand("forecast", "Autoregressively forecast future feature frames");
    forecast->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    forecast->add_option("--context", context, "Context feature file")->required();
    forecast->add_option("--steps", steps, "Rollout steps");
    forecast->add_option("--sliding", sliding, "crop_h,crop_w,stride_h,stride_w");
    forecast->add_option("--interp-pos", interp, "H,W");
    forecast->add_option("--out", out, "Output feature file")->required();

    std::string corpus, schedule = "short", heads, report, eval_split = "eval";
    auto* evaluate = app.add_subcommand("evaluate", "Score oracle, copy-last and forecast features");
    evaluate->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    evaluate->add_option("--corpus", corpus, "Corpus directory")->required();
    evaluate->add_option("--schedule", schedule, "short, mid, long or mid-29")
        ->check(CLI::IsMember({"short", "mid", "long", "mid-29"}));
    evaluate->add_option("--heads", heads, "Directory of readout head files")->required();
    evaluate->add_option("--report", report, "Report JSON file")->required();
    evaluate->add_option("--split", eval_split, "Corpus split to evaluate");
    evaluate->add_option("--sliding", sliding, "crop_h,crop_w,stride_h,stride_w");

    double eps = 1e-3, tol = 1e-4, weight_scale = GradcheckOptions{}.weight_scale;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
    gradcheck->add_option("--config", config, "Run config JSON")->required();
    gradcheck->add_option("--eps", eps, "Central-difference step");
    gradcheck->add_option("--tol", tol, "Maximum relative error");
    gradcheck->add_option("--seed", seed, "Seed for weights and inputs");
    gradcheck->add_option("--weight-scale", weight_scale, "Std of the random weights");

    std::string spec;
    auto* gen_corpus = app.add_subcommand("gen-corpus", "Write a synthetic moving-blob corpus");
    gen_corpus->add_option("--spec", spec, "Scene spec JSON (defaults when omitted)");
    gen_corpus->add_option("--seed", seed, "Generator seed");
    gen_corpus->add_option("--out", out, "Output directory")->required();

    std::string targets, task;
    double l2 = 1e-3;
    auto* heads_fit = app.add_subcommand("heads-fit", "Fit a ridge readout head on oracle features");
    heads_fit->add_option("--features", features, "Corpus directory with feature files")->required();
    heads_fit->add_option("--targets", targets, "Corpus directory with target files")->required();
    heads_fit->add_option("--task", task, "seg, depth or normals")
        ->required()
        ->check(CLI::IsMember({"seg", "depth", "normals"}));
    heads_fit->add_option("--l2", l2, "Ridge penalty");
    heads_fit->add_option("--out", out, "Head file")->required();
    heads_fit->add_option("--split", split, "Corpus split to fit on");
    heads_fit->add_option("--pca", pca_path, "Fit on PCA round-tripped features");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pca_fit) return cmd_pca_fit(features, dim, samples, seed, split, out);
        if (*train) return cmd_train(config, out, resume, stop_at);
        if (*forecast) return cmd_forecast(ckpt, context, steps, sliding, interp, out);
        if (*evaluate) return cmd_evaluate(ckpt, corpus, schedule, heads, report, eval_split, sliding);
        if (*gradcheck) return cmd_gradcheck(config, eps, tol, seed, weight_scale);
        if (*gen_corpus) return cmd_gen_corpus(spec, seed, out);
        if (*heads_fit) return cmd_heads_fit(features, targets, task, l2, out, split, pca_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
