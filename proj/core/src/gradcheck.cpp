#include "foresight/gradcheck.hpp"

#include <cmath>
#include <random>

#include "foresight/parallel.hpp"

namespace foresight {

nlohmann::json GradcheckReport::to_json() const {
    return {{"max_rel_error", max_rel_error},
            {"worst_parameter", worst_parameter},
            {"worst_index", worst_index},
            {"worst_analytic", worst_analytic},
            {"worst_numeric", worst_numeric},
            {"max_tensor_rel_error", max_tensor_rel_error},
            {"worst_tensor", worst_tensor},
            {"parameters_checked", parameters_checked},
            {"pass", pass}};
}

GradcheckReport gradient_check(const ForecasterConfig& config, const TrainConfig& train,
                               const GradcheckOptions& options) {
    config.validate();
    std::mt19937_64 rng(mix_seed(options.seed, 0x67726164));
    std::normal_distribution<double> normal(0.0, 1.0);

    ForecasterWeights<double> w = ForecasterWeights<double>::zeros(config);
    for (auto& view : parameter_views(w)) {
        const bool is_scale = view.name.ends_with("norm.scale");
        for (double& v : view.values) v = is_scale ? 1.0 + 0.1 * normal(rng) : options.weight_scale * normal(rng);
    }

    BasicFeatureSequence<double> input(config.seq_frames, config.grid_h, config.grid_w, config.d_in);
    for (double& v : input.data) v = normal(rng);
    const double ratio = train.random_ratio.value_or(0.5);
    const MaskPlan plan = make_mask_plan(train.mask_strategy, config.seq_frames, config.context_frames, config.grid_h,
                                         config.grid_w, ratio, mix_seed(options.seed, 0x6d61736b));

    // Residuals land in both SmoothL1 branches but stay clear of |r| = 0 (the
    // L1 kink) and |r| = beta, where central differences would straddle a kink.
    const BasicFeatureSequence<double> base = forward(input, plan, w).pred;
    BasicFeatureSequence<double> target = base;
    const double beta = train.loss.beta;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : target.data) {
        const double u = unit(rng);
        const double magnitude = u < 0.5 ? beta * (0.4 + 0.4 * u) : beta * (1.4 + 16.0 * (u - 0.5));
        v += unit(rng) < 0.5 ? -magnitude : magnitude;
    }

    const Gradients<double> analytic = backward(input, target, plan, w, train.loss);
    auto loss_at = [&](const ForecasterWeights<double>& weights) {
        return mfm_loss(forward(input, plan, weights).pred, target, plan, train.loss);
    };

    GradcheckReport report;
    auto grad_views = parameter_views(analytic.weights);
    auto views = parameter_views(w);
    for (std::size_t p = 0; p < views.size(); ++p) {
        double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
        for (std::size_t i = 0; i < views[p].values.size(); ++i) {
            double& v = views[p].values[i];
            const double saved = v;
            v = saved + options.eps;
            const double plus = loss_at(w);
            v = saved - options.eps;
            const double minus = loss_at(w);
            v = saved;
            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double a = grad_views[p].values[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double rel = std::abs(a - numeric) / denom;
            diff_sq += (a - numeric) * (a - numeric);
            analytic_sq += a * a;
            numeric_sq += numeric * numeric;
            ++report.parameters_checked;
            if (rel > report.max_rel_error || report.worst_parameter.empty()) {
                report.max_rel_error = rel;
                report.worst_parameter = views[p].name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        const double floor = options.abs_floor * std::sqrt(static_cast<double>(views[p].values.size()));
        const double tensor_rel = std::sqrt(diff_sq) / std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), floor});
        if (tensor_rel > report.max_tensor_rel_error || report.worst_tensor.empty()) {
            report.max_tensor_rel_error = tensor_rel;
            report.worst_tensor = views[p].name;
        }
    }
    report.pass = report.max_tensor_rel_error < options.tol;
    return report;
}

}  // namespace foresight
