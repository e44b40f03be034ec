#include "foresight/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "foresight/errors.hpp"

namespace foresight {

void LabelMap::validate() const {
    if (labels.size() != height * width) throw DimensionError("label map: payload size differs from height*width");
    for (std::int32_t v : labels) {
        if (v != ignore_value && (v < 0 || v >= class_count)) {
            throw DataError("label " + std::to_string(v) + " outside [0, " + std::to_string(class_count) + ")");
        }
    }
}

void ConfusionCounts::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.labels.size() != gt.labels.size()) {
        throw DimensionError("miou: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                             " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    if (pred.class_count != gt.class_count) throw DimensionError("miou: class counts differ");
    if (intersection.size() != static_cast<std::size_t>(gt.class_count)) {
        throw DimensionError("miou: accumulator sized for a different class count");
    }
    const auto k = static_cast<std::int32_t>(intersection.size());
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const std::int32_t g = gt.labels[i];
        const std::int32_t p = pred.labels[i];
        if (g == gt.ignore_value || p == pred.ignore_value) continue;
        if (g < 0 || g >= k || p < 0 || p >= k) throw DataError("miou: label out of range");
        if (g == p) {
            ++intersection[static_cast<std::size_t>(g)];
            ++union_[static_cast<std::size_t>(g)];
        } else {
            ++union_[static_cast<std::size_t>(g)];
            ++union_[static_cast<std::size_t>(p)];
        }
    }
}

IouResult ConfusionCounts::iou(const std::optional<std::set<std::int32_t>>& subset) const {
    IouResult out;
    out.per_class.assign(intersection.size(), std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < intersection.size(); ++c) {
        if (union_[c] == 0) continue;
        out.per_class[c] = static_cast<double>(intersection[c]) / static_cast<double>(union_[c]);
        if (subset && !subset->contains(static_cast<std::int32_t>(c))) continue;
        sum += out.per_class[c];
        ++counted;
    }
    out.mean = counted ? sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

IouResult miou(const LabelMap& pred, const LabelMap& gt, const std::optional<std::set<std::int32_t>>& subset) {
    ConfusionCounts counts(static_cast<std::size_t>(std::max(gt.class_count, 0)));
    counts.add(pred, gt);
    return counts.iou(subset);
}

namespace {

bool is_valid(std::span<const std::uint8_t> valid, std::size_t i) { return valid.empty() || valid[i] != 0; }

struct DepthAccumulator {
    double rel_sum = 0.0;
    std::size_t within = 0;
    std::size_t count = 0;

    void add(double a, double b) {
        if (!(b > 0.0)) throw DataError("depth_metrics: ground truth must be > 0 on valid pixels");
        rel_sum += std::abs(a - b) / b;
        if (a > 0.0 && std::max(a / b, b / a) < 1.25) ++within;
        ++count;
    }
    [[nodiscard]] DepthScores scores() const {
        if (count == 0) throw ParameterError("depth_metrics: no valid pixels");
        return {rel_sum / static_cast<double>(count), static_cast<double>(within) / static_cast<double>(count)};
    }
};

struct NormalAccumulator {
    double deg_sum = 0.0;
    std::size_t within = 0;
    std::size_t count = 0;

    void add(const double* a, const double* b) {
        const double deg = angular_error_deg(a, b);
        deg_sum += deg;
        if (deg < 11.25) ++within;
        ++count;
    }
    [[nodiscard]] NormalScores scores() const {
        if (count == 0) throw ParameterError("normal_metrics: no valid pixels");
        return {deg_sum / static_cast<double>(count), static_cast<double>(within) / static_cast<double>(count)};
    }
};

}  // namespace

DepthScores depth_metrics(std::span<const double> pred, std::span<const double> gt,
                          std::span<const std::uint8_t> valid) {
    if (pred.size() != gt.size() || (!valid.empty() && valid.size() != gt.size())) {
        throw DimensionError("depth_metrics: size mismatch");
    }
    DepthAccumulator acc;
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (is_valid(valid, i)) acc.add(pred[i], gt[i]);
    return acc.scores();
}

double angular_error_deg(const double* a, const double* b) {
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    if (!(na > 0.0) || !(nb > 0.0)) throw DataError("normal_metrics: zero-norm normal vector on a valid pixel");
    const double cos = std::clamp((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb), -1.0, 1.0);
    return std::acos(cos) * 180.0 / std::numbers::pi;
}

NormalScores normal_metrics(std::span<const double> pred, std::span<const double> gt,
                            std::span<const std::uint8_t> valid) {
    if (pred.size() != gt.size() || gt.size() % 3 != 0 || (!valid.empty() && valid.size() * 3 != gt.size())) {
        throw DimensionError("normal_metrics: size mismatch");
    }
    NormalAccumulator acc;
    for (std::size_t i = 0; i < gt.size() / 3; ++i)
        if (is_valid(valid, i)) acc.add(pred.data() + 3 * i, gt.data() + 3 * i);
    return acc.scores();
}

std::string to_string(HeadTask t) {
    switch (t) {
        case HeadTask::segmentation: return "seg";
        case HeadTask::depth: return "depth";
        case HeadTask::normals: return "normals";
    }
    return "?";
}

HeadTask parse_head_task(const std::string& s) {
    if (s == "seg" || s == "segmentation") return HeadTask::segmentation;
    if (s == "depth") return HeadTask::depth;
    if (s == "normals") return HeadTask::normals;
    throw ParameterError("unknown head task '" + s + "' (expected seg, depth or normals)");
}

DenseTargets DenseTargets::frame(std::size_t n) const {
    if (n >= frames) throw DimensionError("targets: frame position out of range");
    DenseTargets out = *this;
    const std::size_t c = cells();
    out.frames = 1;
    out.frame_ids = {frame_ids[n]};
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(n * c),
                      labels.begin() + static_cast<std::ptrdiff_t>((n + 1) * c));
    out.depth.assign(depth.begin() + static_cast<std::ptrdiff_t>(n * c),
                     depth.begin() + static_cast<std::ptrdiff_t>((n + 1) * c));
    out.normals.assign(normals.begin() + static_cast<std::ptrdiff_t>(3 * n * c),
                       normals.begin() + static_cast<std::ptrdiff_t>(3 * (n + 1) * c));
    return out;
}

LabelMap DenseTargets::label_map(std::size_t n) const {
    const DenseTargets f = frame(n);
    return {height, width, f.labels, ignore_value, class_count, movable};
}

std::ptrdiff_t DenseTargets::find_frame(std::int64_t id) const noexcept {
    const auto it = std::find(frame_ids.begin(), frame_ids.end(), id);
    return it == frame_ids.end() ? -1 : std::distance(frame_ids.begin(), it);
}

Eigen::MatrixXd ReadoutHead::apply(const FeatureSequence& features) const {
    if (static_cast<Eigen::Index>(features.channels) != weight.cols()) {
        throw DimensionError("readout head expects " + std::to_string(weight.cols()) + " channels, got " +
                             std::to_string(features.channels));
    }
    Eigen::MatrixXd out = features.matrix().cast<double>() * weight.transpose();
    out.rowwise() += bias.transpose();
    if (task == HeadTask::normals) {
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const double n = out.row(r).norm();
            if (n > 0.0) out.row(r) /= n;
        }
    }
    return out;
}

std::vector<std::int32_t> ReadoutHead::predict_labels(const FeatureSequence& features) const {
    if (task != HeadTask::segmentation) throw ParameterError("predict_labels requires a segmentation head");
    const Eigen::MatrixXd scores = apply(features);
    std::vector<std::int32_t> labels(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index arg = 0;
        scores.row(r).maxCoeff(&arg);
        labels[static_cast<std::size_t>(r)] = static_cast<std::int32_t>(arg);
    }
    return labels;
}

ReadoutHead fit_readout(std::span<const FeatureSequence> features, std::span<const DenseTargets> targets,
                        HeadTask task, double l2_reg) {
    if (features.size() != targets.size() || features.empty()) {
        throw DimensionError("fit_readout: need one target set per feature sequence");
    }
    if (!(l2_reg >= 0.0)) throw ParameterError("fit_readout: l2_reg must be >= 0");
    const std::size_t channels = features.front().channels;
    const std::int32_t classes = targets.front().class_count;
    const Eigen::Index out_dim = task == HeadTask::segmentation ? classes : (task == HeadTask::depth ? 1 : 3);
    if (out_dim < 1) throw ParameterError("fit_readout: segmentation targets declare no classes");

    std::size_t rows = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const auto& t = targets[i];
        if (f.channels != channels) throw DimensionError("fit_readout: channel count differs across sequences");
        if (f.frames != t.frames || f.height != t.height || f.width != t.width) {
            throw DimensionError("fit_readout: sequence " + std::to_string(i) +
                                 " features and targets have different grids");
        }
        if (task == HeadTask::segmentation) {
            rows += static_cast<std::size_t>(
                std::count_if(t.labels.begin(), t.labels.end(), [&](std::int32_t v) { return v != t.ignore_value; }));
        } else {
            rows += f.tokens();
        }
    }
    if (rows == 0) throw ParameterError("fit_readout: no usable training tokens");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(channels));
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), out_dim);
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const auto& t = targets[i];
        for (std::size_t tok = 0; tok < f.tokens(); ++tok) {
            if (task == HeadTask::segmentation) {
                const std::int32_t label = t.labels[tok];
                if (label == t.ignore_value) continue;
                if (label < 0 || label >= classes) throw DataError("fit_readout: label out of range");
                y(r, label) = 1.0;
            } else if (task == HeadTask::depth) {
                y(r, 0) = t.depth[tok];
            } else {
                for (Eigen::Index k = 0; k < 3; ++k) y(r, k) = t.normals[3 * tok + static_cast<std::size_t>(k)];
            }
            for (std::size_t c = 0; c < channels; ++c) x(r, static_cast<Eigen::Index>(c)) = f.token(tok)[c];
            ++r;
        }
    }

    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    x.rowwise() -= x_mean;
    y.rowwise() -= y_mean;
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += l2_reg;
    const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
    if (solver.info() != Eigen::Success || !solver.isPositive() ||
        solver.vectorD().cwiseAbs().minCoeff() <= 1e-12 * scale) {
        throw NumericError("fit_readout: normal equations are singular; use l2_reg > 0");
    }
    const Eigen::MatrixXd coef = solver.solve(x.transpose() * y);  // [channels, out_dim]

    ReadoutHead head;
    head.task = task;
    head.weight = coef.transpose();
    head.bias = (y_mean - x_mean * coef).transpose();
    head.class_count = classes;
    head.movable = targets.front().movable;
    return head;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (double v : per_class_iou) per_class.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
    return {{"miou_all", optional_json(miou_all)},
            {"miou_mo", optional_json(miou_mo)},
            {"per_class_iou", per_class},
            {"abs_rel", optional_json(abs_rel)},
            {"delta1", optional_json(delta1)},
            {"mean_angular_deg", optional_json(mean_angular_deg)},
            {"pct_below_11_25", optional_json(pct_below_11_25)}};
}

nlohmann::json PipelineReport::to_json() const {
    nlohmann::json methods_json = nlohmann::json::object();
    for (const auto& [name, report] : methods) methods_json[name] = report.to_json();
    return {{"schedule", schedule}, {"sequences", sequences}, {"methods", methods_json}};
}

std::string PipelineReport::to_csv() const {
    std::ostringstream out;
    auto cell = [&](const std::optional<double>& v) {
        if (v && std::isfinite(*v)) out << *v;
    };
    out << "method,miou_all,miou_mo,delta1,abs_rel,mean_deg,pct_11_25\n";
    for (const char* name : {"oracle", "copy_last", "prediction"}) {
        const auto it = methods.find(name);
        if (it == methods.end()) continue;
        const MetricReport& m = it->second;
        out << name << ',';
        cell(m.miou_all);
        out << ',';
        cell(m.miou_mo);
        out << ',';
        cell(m.delta1);
        out << ',';
        cell(m.abs_rel);
        out << ',';
        cell(m.mean_angular_deg);
        out << ',';
        cell(m.pct_below_11_25);
        out << '\n';
    }
    return out.str();
}

namespace {

struct MethodAccumulator {
    std::optional<ConfusionCounts> confusion;
    std::set<std::int32_t> movable;
    std::optional<DepthAccumulator> depth;
    std::optional<NormalAccumulator> normals;

    void add(const FeatureSequence& frame, const DenseTargets& truth, std::span<const ReadoutHead> heads) {
        for (const ReadoutHead& head : heads) {
            switch (head.task) {
                case HeadTask::segmentation: {
                    if (!confusion) confusion.emplace(static_cast<std::size_t>(truth.class_count));
                    movable = truth.movable;
                    const LabelMap pred{truth.height, truth.width, head.predict_labels(frame), truth.ignore_value,
                                        truth.class_count, truth.movable};
                    confusion->add(pred, truth.label_map(0));
                    break;
                }
                case HeadTask::depth: {
                    if (!depth) depth.emplace();
                    const Eigen::MatrixXd out = head.apply(frame);
                    for (Eigen::Index i = 0; i < out.rows(); ++i)
                        depth->add(out(i, 0), truth.depth[static_cast<std::size_t>(i)]);
                    break;
                }
                case HeadTask::normals: {
                    if (!normals) normals.emplace();
                    const Eigen::MatrixXd out = head.apply(frame);
                    for (Eigen::Index i = 0; i < out.rows(); ++i) {
                        const double p[3] = {out(i, 0), out(i, 1), out(i, 2)};
                        normals->add(p, truth.normals.data() + 3 * static_cast<std::size_t>(i));
                    }
                    break;
                }
            }
        }
    }

    [[nodiscard]] MetricReport report() const {
        MetricReport r;
        if (confusion) {
            const IouResult all = confusion->iou();
            r.miou_all = all.mean;
            r.per_class_iou = all.per_class;
            if (!movable.empty()) r.miou_mo = confusion->iou(movable).mean;
        }
        if (depth) {
            const DepthScores s = depth->scores();
            r.abs_rel = s.abs_rel;
            r.delta1 = s.delta1;
        }
        if (normals) {
            const NormalScores s = normals->scores();
            r.mean_angular_deg = s.mean_deg;
            r.pct_below_11_25 = s.pct_below_11_25;
        }
        return r;
    }
};

}  // namespace

PipelineReport evaluate_pipeline(const ForecasterWeights<float>& weights, std::span<const EvalSequence> corpus,
                                 const RolloutSchedule& schedule, std::span<const ReadoutHead> heads,
                                 const PcaModel* pca, const PipelineOptions& options) {
    schedule.validate();
    if (schedule.context_ids.size() != weights.config.context_frames) {
        throw ParameterError("evaluate: schedule '" + schedule.name + "' has " +
                             std::to_string(schedule.context_ids.size()) + " context frames, model expects " +
                             std::to_string(weights.config.context_frames));
    }
    if (corpus.empty()) throw ParameterError("evaluate: empty corpus");

    auto to_model = [&](const FeatureSequence& f) { return pca ? pca_encode(*pca, f) : f; };
    auto to_heads = [&](const FeatureSequence& f) { return pca ? pca_decode(*pca, f) : f; };

    MethodAccumulator oracle, copy, prediction;
    for (const EvalSequence& seq : corpus) {
        std::vector<std::size_t> positions;
        for (std::int64_t id : schedule.context_ids) {
            const std::ptrdiff_t p = seq.features.find_frame(id);
            if (p < 0) {
                throw ParameterError("evaluate: sequence '" + seq.name + "' lacks context frame " + std::to_string(id) +
                                     " required by schedule '" + schedule.name + "'");
            }
            positions.push_back(static_cast<std::size_t>(p));
        }
        const std::ptrdiff_t target_pos = seq.features.find_frame(schedule.target_id);
        const std::ptrdiff_t truth_pos = seq.targets.find_frame(schedule.target_id);
        if (target_pos < 0 || truth_pos < 0) {
            throw ParameterError("evaluate: sequence '" + seq.name + "' lacks target frame " +
                                 std::to_string(schedule.target_id));
        }
        const DenseTargets truth = seq.targets.frame(static_cast<std::size_t>(truth_pos));
        const FeatureSequence context = to_model(seq.features.select_frames(positions));
        const FeatureSequence target = to_model(seq.features.slice_frames(static_cast<std::size_t>(target_pos), 1));

        RolloutOptions rollout_options;
        if (context.height != weights.config.grid_h || context.width != weights.config.grid_w) {
            rollout_options.sliding = options.sliding.value_or(SlidingWindow{
                weights.config.grid_h, weights.config.grid_w, weights.config.grid_h, weights.config.grid_w});
        }
        const FeatureSequence predicted = rollout(weights, context, schedule.steps, rollout_options);

        oracle.add(to_heads(target), truth, heads);
        copy.add(to_heads(copy_last(context)), truth, heads);
        prediction.add(to_heads(predicted.slice_frames(predicted.frames - 1, 1)), truth, heads);
    }

    PipelineReport report;
    report.schedule = schedule.name;
    report.sequences = corpus.size();
    report.methods["oracle"] = oracle.report();
    report.methods["copy_last"] = copy.report();
    report.methods["prediction"] = prediction.report();
    return report;
}

}  // namespace foresight
